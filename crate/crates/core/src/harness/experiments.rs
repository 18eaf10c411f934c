//! Component ablations and the self-attention depth sweep.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, EvalReport};
use super::train::{init_parser, train};
use super::treebank::Treebank;
use crate::attention::{CombineMode, QueryMode};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Column values identifying the configuration, e.g. `["Yes", "No"]`.
    pub key: Vec<String>,
    pub report: EvalReport,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub key_columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let metrics = ["Precision", "Recall", "F1", "UAS", "LAS"];
        let header = self.key_columns.iter().map(String::as_str).chain(metrics);
        w.write_record(header).expect("in-memory csv");
        for r in &self.rows {
            let m = &r.report;
            let values = [m.precision, m.recall, m.f1, m.uas, m.las].map(|v| format!("{v:.2}"));
            w.write_record(r.key.iter().chain(&values)).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

fn yes_no(b: bool) -> String {
    if b { "Yes" } else { "No" }.to_string()
}

/// Trains one model with `model` and scores it on the dev set, or on the
/// training set without one.
pub fn run_once(run: &RunConfig, model: &ModelConfig, data: &Treebank, dev: Option<&Treebank>) -> Result<(EvalReport, f64)> {
    let t = Instant::now();
    let mut parser = init_parser(model, data, &run.train)?;
    let mut cfg = run.train.clone();
    cfg.checkpoint = None;
    train(&mut parser, data, dev, &cfg)?;
    let punct: BTreeSet<String> = cfg.punctuation.iter().cloned().collect();
    let report = evaluate(&parser, dev.unwrap_or(data), &punct)?;
    Ok((report, t.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    /// PFL × RD with query vectors and concatenation.
    pub pfl_rd: Table,
    /// QV × Conc. with PFL and without RD.
    pub qv_conc: Table,
}

/// The four PFL/RD and four QV/Conc. configurations, rows ordered
/// (Yes, Yes), (No, Yes), (Yes, No), (No, No).
pub fn ablate(run: &RunConfig, data: &Treebank, dev: Option<&Treebank>) -> Result<Ablation> {
    const ORDER: [(bool, bool); 4] = [(true, true), (false, true), (true, false), (false, false)];
    let mut pfl_rd = Table {
        key_columns: vec!["PFL".into(), "RD".into()],
        rows: Vec::new(),
    };
    for (pfl, rd) in ORDER {
        let model = ModelConfig {
            use_pfl: pfl,
            residual_dropout: if rd { run.ablation_dropout } else { 0.0 },
            query_mode: QueryMode::Vector,
            combine_mode: CombineMode::Concat,
            ..run.model.clone()
        };
        let (report, seconds) = run_once(run, &model, data, dev)?;
        pfl_rd.rows.push(Row {
            key: vec![yes_no(pfl), yes_no(rd)],
            report,
            seconds,
        });
    }
    let mut qv_conc = Table {
        key_columns: vec!["QV".into(), "Conc.".into()],
        rows: Vec::new(),
    };
    for (qv, conc) in ORDER {
        let model = ModelConfig {
            use_pfl: true,
            residual_dropout: 0.0,
            query_mode: if qv { QueryMode::Vector } else { QueryMode::Matrix },
            combine_mode: if conc { CombineMode::Concat } else { CombineMode::Project },
            ..run.model.clone()
        };
        let (report, seconds) = run_once(run, &model, data, dev)?;
        qv_conc.rows.push(Row {
            key: vec![yes_no(qv), yes_no(conc)],
            report,
            seconds,
        });
    }
    Ok(Ablation { pfl_rd, qv_conc })
}

/// One model per requested self-attention depth, in the given order.
pub fn layer_sweep(run: &RunConfig, layers: &[usize], data: &Treebank, dev: Option<&Treebank>) -> Result<Table> {
    if layers.is_empty() {
        return Err(Error::Config("layer sweep needs at least one layer count".into()));
    }
    let mut table = Table {
        key_columns: vec!["Self-Attention Layers".into()],
        rows: Vec::new(),
    };
    for &l in layers {
        let model = ModelConfig {
            num_layers: l,
            ..run.model.clone()
        };
        let (report, seconds) = run_once(run, &model, data, dev)?;
        table.rows.push(Row {
            key: vec![l.to_string()],
            report,
            seconds,
        });
    }
    Ok(table)
}
