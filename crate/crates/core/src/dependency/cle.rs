//! Maximum spanning arborescence decoding (Chu-Liu/Edmonds).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// Tree-constrained decoding with exactly one child of the root.
    Tree,
    /// Per-word argmax; may produce cycles or several roots.
    Greedy,
}

/// Decodes heads from `[n, n + 1]` arc scores (row = dependent word,
/// column = candidate head, column 0 = root). Returns one head per word.
pub fn decode_arcs(scores: &Tensor, mode: DecodeMode) -> Result<Vec<usize>> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[1] != shape[0] + 1 {
        return Err(Error::dim(format!("arc scores {shape:?} are not [n, n+1]")));
    }
    let n = shape[0];
    match mode {
        DecodeMode::Greedy => Ok((0..n)
            .map(|i| {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for h in 0..=n {
                    if h == i + 1 {
                        continue;
                    }
                    let s = scores.at(i, h);
                    if s > best_score {
                        best_score = s;
                        best = h;
                    }
                }
                best
            })
            .collect()),
        DecodeMode::Tree => {
            // w[d][h] over nodes 0..=n
            let mut w = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
            for d in 1..=n {
                for h in 0..=n {
                    if h != d {
                        w[d][h] = scores.at(d - 1, h);
                    }
                }
            }
            let parents = single_root_arborescence(&w);
            Ok(parents[1..].to_vec())
        }
    }
}

fn total(w: &[Vec<f64>], parents: &[usize]) -> f64 {
    (1..w.len()).map(|d| w[d][parents[d]]).sum()
}

/// Best arborescence rooted at node 0 in which node 0 has exactly one child.
/// `w[d][h]` is the score of arc h → d; `w[0][*]` is ignored.
pub fn single_root_arborescence(w: &[Vec<f64>]) -> Vec<usize> {
    let parents = chu_liu_edmonds(w);
    let root_children = parents[1..].iter().filter(|&&h| h == 0).count();
    if root_children == 1 {
        return parents;
    }
    let m = w.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..m {
        let mut restricted = w.to_vec();
        for (d, row) in restricted.iter_mut().enumerate().skip(1) {
            if d != r {
                row[0] = f64::NEG_INFINITY;
            }
        }
        let p = chu_liu_edmonds(&restricted);
        let s = total(w, &p);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, p));
        }
    }
    best.map(|(_, p)| p).expect("at least one word")
}

/// Unconstrained maximum arborescence rooted at node 0.
/// `w[d][h]` is the score of arc h → d. Ties prefer the lowest head index.
pub fn chu_liu_edmonds(w: &[Vec<f64>]) -> Vec<usize> {
    let m = w.len();
    let mut parents = vec![0usize; m];
    for d in 1..m {
        let mut best = f64::NEG_INFINITY;
        let mut arg = usize::MAX;
        for (h, &s) in w[d].iter().enumerate() {
            if h != d && (arg == usize::MAX || s > best) {
                best = s;
                arg = h;
            }
        }
        parents[d] = arg;
    }

    let Some(cycle) = find_cycle(&parents) else {
        return parents;
    };
    let in_cycle: Vec<bool> = (0..m).map(|v| cycle.contains(&v)).collect();

    // contracted graph: non-cycle nodes keep their order, cycle becomes the last node
    let mut new_id = vec![usize::MAX; m];
    let mut old_of = Vec::new();
    for v in 0..m {
        if !in_cycle[v] {
            new_id[v] = old_of.len();
            old_of.push(v);
        }
    }
    let c = old_of.len();
    for &v in &cycle {
        new_id[v] = c;
    }
    let cm = c + 1;
    let mut cw = vec![vec![f64::NEG_INFINITY; cm]; cm];
    // enter[h]: cycle node entered when the contracted node's parent is h
    let mut enter = vec![usize::MAX; m];
    // leave[d]: cycle node used as parent when d's parent is the contracted node
    let mut leave = vec![usize::MAX; m];

    for d in 1..m {
        for h in 0..m {
            if h == d || w[d][h] == f64::NEG_INFINITY {
                continue;
            }
            match (in_cycle[d], in_cycle[h]) {
                (false, false) => cw[new_id[d]][new_id[h]] = w[d][h],
                (true, false) => {
                    let s = w[d][h] - w[d][parents[d]];
                    if enter[h] == usize::MAX || s > cw[c][new_id[h]] {
                        cw[c][new_id[h]] = s;
                        enter[h] = d;
                    }
                }
                (false, true) => {
                    if leave[d] == usize::MAX || w[d][h] > cw[new_id[d]][c] {
                        cw[new_id[d]][c] = w[d][h];
                        leave[d] = h;
                    }
                }
                (true, true) => {}
            }
        }
    }

    let contracted = chu_liu_edmonds(&cw);

    let mut result = parents.clone();
    for d in 1..m {
        if in_cycle[d] {
            continue;
        }
        let p = contracted[new_id[d]];
        result[d] = if p == c { leave[d] } else { old_of[p] };
    }
    let h = old_of[contracted[c]];
    result[enter[h]] = h;
    result
}

/// Some cycle among `parents` (node 0 is the root and has no parent).
fn find_cycle(parents: &[usize]) -> Option<Vec<usize>> {
    let m = parents.len();
    let mut state = vec![0u8; m]; // 0 unvisited, 1 on current path, 2 done
    state[0] = 2;
    for start in 1..m {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parents[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&x| x == v).expect("on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Whether `heads` (one per word, 0 = root) forms a tree rooted at 0 with
/// exactly one root child when `single_root` is set.
pub fn is_arborescence(heads: &[usize], single_root: bool) -> bool {
    let n = heads.len();
    if heads.iter().enumerate().any(|(i, &h)| h > n || h == i + 1) {
        return false;
    }
    if single_root && heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    let mut parents = vec![0];
    parents.extend_from_slice(heads);
    find_cycle(&parents).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_word_attaches_to_root() {
        let s = Tensor::from_rows(&[vec![-3.0, 5.0]]).unwrap();
        assert_eq!(decode_arcs(&s, DecodeMode::Tree).unwrap(), vec![0]);
    }

    #[test]
    fn greedy_tree_is_kept() {
        // word1 ← root, word2 ← word1, word3 ← word2
        let s = Tensor::from_rows(&[
            vec![9.0, 0.0, 1.0, 0.0],
            vec![0.0, 9.0, 0.0, 1.0],
            vec![0.0, 1.0, 9.0, 0.0],
        ])
        .unwrap();
        let greedy = decode_arcs(&s, DecodeMode::Greedy).unwrap();
        assert_eq!(greedy, vec![0, 1, 2]);
        assert_eq!(decode_arcs(&s, DecodeMode::Tree).unwrap(), greedy);
    }

    #[test]
    fn breaks_cycle() {
        // words 1 and 2 prefer each other
        let s = Tensor::from_rows(&[vec![1.0, 0.0, 10.0], vec![0.5, 10.0, 0.0]]).unwrap();
        let heads = decode_arcs(&s, DecodeMode::Tree).unwrap();
        assert!(is_arborescence(&heads, true));
        assert_eq!(heads, vec![0, 1]);
    }

    #[test]
    fn enforces_single_root() {
        let s = Tensor::from_rows(&[vec![10.0, 0.0, 0.0], vec![10.0, 1.0, 0.0]]).unwrap();
        let heads = decode_arcs(&s, DecodeMode::Tree).unwrap();
        assert_eq!(heads, vec![0, 1]);
    }

    #[test]
    fn rejects_bad_shape() {
        assert!(decode_arcs(&Tensor::zeros(&[2, 2]), DecodeMode::Tree).is_err());
    }
}
