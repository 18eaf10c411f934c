use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser as ClapParser, Subcommand, ValueEnum};

use lal_parser::dependency::write_conll;
use lal_parser::encoder::Sentence;
use lal_parser::harness::{
    ablate, checkpoint, evaluate, generate_toy_corpus, init_parser, layer_sweep, load_treebank_files, parse_trees,
    train, RunConfig,
};
use lal_parser::interpret::{aggregate_stats, attention_trace, head_stats_csv, traces_to_jsonl, ContributionMode};
use lal_parser::{Error, Result};

#[derive(ClapParser)]
#[command(name = "lal", version, about = "Label attention constituency and dependency parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Brackets,
    Conll,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    L1Average,
    Softmax,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        trees: Option<PathBuf>,
        #[arg(long)]
        deps: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write per-epoch logs as JSON.
        #[arg(long)]
        log_json: Option<PathBuf>,
    },
    /// Parse `word/TAG` sentences, one per line.
    Parse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "brackets")]
        format: Format,
    },
    /// Score a model on a treebank; prints a JSON report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        deps: PathBuf,
    },
    /// Write head-contribution traces and statistics for a bracket file.
    InspectHeads {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trees: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value = "l1-average")]
        mode: Mode,
    },
    /// Run the PFL/RD and QV/Conc. ablations; prints both tables as CSV.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the full reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train one model per self-attention depth; prints a CSV table.
    SweepLayers {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
    },
    /// Generate a toy treebank (trees.txt, deps.conll).
    GenToy {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn read_sentences(text: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut words = Vec::new();
        let mut tags = Vec::new();
        for tok in line.split_whitespace() {
            let (w, t) = tok
                .rsplit_once('/')
                .filter(|(w, t)| !w.is_empty() && !t.is_empty())
                .ok_or_else(|| Error::Parse {
                    line: k + 1,
                    message: format!("token '{tok}' is not word/TAG"),
                })?;
            words.push(w.to_string());
            tags.push(t.to_string());
        }
        out.push(Sentence::new(words, tags)?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train {
            trees,
            deps,
            config,
            out: ckpt,
            log_json,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if trees.is_some() || deps.is_some() {
                cfg.data.trees = trees;
                cfg.data.deps = deps;
            }
            cfg.train.checkpoint = Some(ckpt);
            let data = cfg.data.training_set()?;
            let dev = cfg.data.dev_set()?;
            let mut parser = init_parser(&cfg.model, &data, &cfg.train)?;
            log::info!("{} sentences, {} parameters", data.len(), parser.params.count());
            let outcome = train(&mut parser, &data, dev.as_ref(), &cfg.train)?;
            if let Some(p) = log_json {
                std::fs::write(p, serde_json::to_string_pretty(&outcome)?)?;
            }
            let last = outcome.epochs.last().expect("at least one epoch");
            writeln!(out, "trained {} epochs, final loss {:.6}", last.epoch, last.loss)?;
        }
        Command::Parse { model, input, format } => {
            let parser = checkpoint::load(&model)?;
            let sentences = read_sentences(&std::fs::read_to_string(input)?)?;
            for s in &sentences {
                let p = parser.parse(s)?;
                match format {
                    Format::Brackets => writeln!(out, "{}", p.tree.to_tree(s, &parser.vocab.labels)?)?,
                    Format::Conll => writeln!(out, "{}", write_conll(s, &p.arcs))?,
                }
            }
        }
        Command::Eval { model, trees, deps } => {
            let parser = checkpoint::load(&model)?;
            let data = load_treebank_files(&trees, &deps)?;
            let punct: BTreeSet<String> = lal_parser::harness::default_punctuation();
            let report = evaluate(&parser, &data, &punct)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
        Command::InspectHeads {
            model,
            trees,
            out_dir,
            mode,
        } => {
            let parser = checkpoint::load(&model)?;
            let mode = match mode {
                Mode::L1Average => ContributionMode::L1Average,
                Mode::Softmax => ContributionMode::Softmax,
            };
            let mut traces = Vec::new();
            for (k, (_, tree)) in parse_trees(&std::fs::read_to_string(trees)?)?.iter().enumerate() {
                let gold = tree.to_parse_tree_with(&parser.vocab.labels)?;
                for mut t in attention_trace(&parser, &tree.sentence(), Some(&gold), mode)? {
                    t.sentence = k;
                    traces.push(t);
                }
            }
            let stats = aggregate_stats(&traces)?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("traces.jsonl"), traces_to_jsonl(&traces)?)?;
            std::fs::write(out_dir.join("head_stats.csv"), head_stats_csv(&stats))?;
            std::fs::write(out_dir.join("head_stats.json"), serde_json::to_string_pretty(&stats)?)?;
            writeln!(out, "{} traces over {} heads written to {}", traces.len(), stats.num_heads, out_dir.display())?;
        }
        Command::Ablate { config, json } => {
            let cfg = load_config(config.as_deref())?;
            let data = cfg.data.training_set()?;
            let dev = cfg.data.dev_set()?;
            let result = ablate(&cfg, &data, dev.as_ref())?;
            write!(out, "{}\n{}", result.pfl_rd.to_csv(), result.qv_conc.to_csv())?;
            if let Some(p) = json {
                std::fs::write(p, serde_json::to_string_pretty(&result)?)?;
            }
        }
        Command::SweepLayers { config, layers } => {
            let cfg = load_config(config.as_deref())?;
            let data = cfg.data.training_set()?;
            let dev = cfg.data.dev_set()?;
            write!(out, "{}", layer_sweep(&cfg, &layers, &data, dev.as_ref())?.to_csv())?;
        }
        Command::GenToy { seed, size, out_dir } => {
            if size == 0 {
                return Err(Error::Config("size must be at least 1".into()));
            }
            generate_toy_corpus(seed, size)?.write_dir(&out_dir)?;
            writeln!(out, "wrote {size} sentences to {}", out_dir.display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
