//! Pairwise "directly before" score matrices and maximum-weight Hamiltonian
//! path search over them.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Permutation;

pub const DEFAULT_BEAM_WIDTH: usize = 8;
/// Largest item count accepted by [`exact_max_path`].
pub const EXACT_MAX_N: usize = 10;

/// `weights[i][j]` is the signed confidence that item `i` directly precedes
/// item `j`. The diagonal is fixed at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    n: usize,
    weights: Vec<f64>,
}

/// Converts a `(backward, forward)` logit pair into the signed confidence
/// `(e^f - e^b) / (e^f + e^b)`, shifted by the max logit so it never overflows.
pub fn order_confidence(logits: [f64; 2]) -> Result<f64> {
    let [l0, l1] = logits;
    if !l0.is_finite() || !l1.is_finite() {
        return Err(Error::NonFinite("pair logits".into()));
    }
    let m = l0.max(l1);
    let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
    Ok((e1 - e0) / (e1 + e0))
}

impl ScoreMatrix {
    /// Builds a matrix from row-major weights; diagonal entries are ignored.
    pub fn new(n: usize, mut weights: Vec<f64>) -> Result<Self> {
        if n == 0 || weights.len() != n * n {
            return Err(Error::invalid(format!(
                "score matrix needs n >= 1 and n*n weights (n={n}, got {})",
                weights.len()
            )));
        }
        for i in 0..n {
            weights[i * n + i] = 0.0;
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || w.abs() > 1.0) {
            return Err(Error::invalid(format!("score matrix entry {w} outside [-1, 1]")));
        }
        Ok(ScoreMatrix { n, weights })
    }

    /// Fills every ordered pair `i != j` from the logits returned by `logits(i, j)`.
    pub fn from_logits<F>(n: usize, mut logits: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Result<[f64; 2]>,
    {
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    weights[i * n + j] = order_confidence(logits(i, j)?)?;
                }
            }
        }
        ScoreMatrix::new(n, weights)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn transposed(&self) -> ScoreMatrix {
        let n = self.n;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                weights[j * n + i] = self.get(i, j);
            }
        }
        ScoreMatrix { n, weights }
    }

    /// Sum of consecutive edge weights, accumulated left to right.
    pub fn path_weight(&self, order: &[usize]) -> f64 {
        order
            .windows(2)
            .fold(0.0, |acc, w| acc + self.get(w[0], w[1]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,weight")?;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    writeln!(out, "{i},{j},{}", self.get(i, j))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub order: Permutation,
    pub weight: f64,
}

#[derive(Clone)]
struct Partial {
    order: Vec<usize>,
    visited: u64,
    weight: f64,
}

/// Higher weight first, then lexicographically smaller order.
fn rank(a_w: f64, a: &[usize], b_w: f64, b: &[usize]) -> Ordering {
    b_w.partial_cmp(&a_w)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.cmp(b))
}

/// Beam search over Hamiltonian paths: from every start node, partial paths
/// grow one unvisited node at a time and only the `bsize` best survive each
/// step. The best complete path over all starts is returned.
pub fn beam_search(s: &ScoreMatrix, bsize: usize) -> Result<PathResult> {
    let n = s.n();
    if bsize == 0 {
        return Err(Error::invalid("beam width must be at least 1"));
    }
    if n > 64 {
        return Err(Error::invalid(format!("beam search supports at most 64 items, got {n}")));
    }
    let mut best: Option<Partial> = None;
    for start in 0..n {
        let mut beam = vec![Partial {
            order: vec![start],
            visited: 1 << start,
            weight: 0.0,
        }];
        for _ in 1..n {
            let mut next = Vec::with_capacity(beam.len() * n);
            for path in &beam {
                let last = *path.order.last().unwrap();
                for node in 0..n {
                    if path.visited & (1 << node) != 0 {
                        continue;
                    }
                    let mut order = path.order.clone();
                    order.push(node);
                    next.push(Partial {
                        order,
                        visited: path.visited | (1 << node),
                        weight: path.weight + s.get(last, node),
                    });
                }
            }
            next.sort_by(|a, b| rank(a.weight, &a.order, b.weight, &b.order));
            next.truncate(bsize);
            beam = next;
        }
        let top = beam.swap_remove(0);
        let better = match &best {
            None => true,
            Some(b) => rank(top.weight, &top.order, b.weight, &b.order) == Ordering::Less,
        };
        if better {
            best = Some(top);
        }
    }
    let best = best.ok_or_else(|| Error::invalid("empty score matrix"))?;
    Ok(PathResult {
        order: Permutation::new(best.order)?,
        weight: best.weight,
    })
}

/// Exhaustive maximum-weight path (all n! orders, visited lexicographically so
/// the first maximum found is the lexicographically smallest).
pub fn exact_max_path(s: &ScoreMatrix) -> Result<PathResult> {
    let n = s.n();
    if n > EXACT_MAX_N {
        return Err(Error::invalid(format!(
            "exact path search limited to n <= {EXACT_MAX_N}, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut best_order = order.clone();
    let mut best_weight = s.path_weight(&order);
    while next_permutation(&mut order) {
        let w = s.path_weight(&order);
        if w > best_weight {
            best_weight = w;
            best_order.copy_from_slice(&order);
        }
    }
    Ok(PathResult {
        order: Permutation::new(best_order)?,
        weight: best_weight,
    })
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
