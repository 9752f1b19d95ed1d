//! Regression tree on per-observation rPPV.
//!
//! Splits maximize the reduction of within-node sum of squares. Numeric
//! columns split at midpoints between consecutive distinct values (`<=` goes
//! left). Categorical columns order their levels by node mean and split the
//! ordered list at each position; the lower-mean prefix goes left.
//! Candidates are scanned in schema order and then by increasing threshold,
//! and only a strictly larger gain replaces the incumbent.

use serde::Serialize;

use crate::data::{ColumnRef, Dataset};
use crate::error::{Error, Result};

/// Gains below this fraction of the parent's sum of squares end a branch.
const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Defaults to `max(30, n / 100)`.
    pub min_leaf: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            min_leaf: None,
        }
    }
}

impl TreeParams {
    pub fn min_leaf_for(&self, n: usize) -> usize {
        self.min_leaf.unwrap_or_else(|| (n / 100).max(30)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SplitRule {
    Numeric { column: String, threshold: f64 },
    Categorical { column: String, left_levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeNode {
    pub depth: usize,
    pub count: usize,
    pub mean: f64,
    /// Sum of squared deviations from `mean` within the node.
    pub sse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub left: Option<Box<TreeNode>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub right: Option<Box<TreeNode>>,
    #[serde(skip)]
    rule: Option<Rule>,
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Numeric { column: usize, threshold: f64 },
    Categorical { column: usize, left: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticTree {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub root: TreeNode,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    fn leaves<'a>(&'a self, out: &mut Vec<&'a TreeNode>) {
        match (&self.left, &self.right) {
            (Some(l), Some(r)) => {
                l.leaves(out);
                r.leaves(out);
            }
            _ => out.push(self),
        }
    }

    fn depth_below(&self) -> usize {
        match (&self.left, &self.right) {
            (Some(l), Some(r)) => 1 + l.depth_below().max(r.depth_below()),
            _ => 0,
        }
    }
}

impl DiagnosticTree {
    pub fn leaves(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        self.root.leaves(&mut out);
        out
    }

    pub fn depth(&self) -> usize {
        self.root.depth_below()
    }

    /// Leaf mean for row `i` of `ds`.
    pub fn predict_row(&self, ds: &Dataset, i: usize) -> f64 {
        let mut node = &self.root;
        while let (Some(rule), Some(l), Some(r)) = (&node.rule, &node.left, &node.right) {
            let go_left = match rule {
                Rule::Numeric { column, threshold } => ds.numeric()[[i, *column]] <= *threshold,
                Rule::Categorical { column, left } => left[ds.categorical()[[i, *column]] as usize],
            };
            node = if go_left { l } else { r };
        }
        node.mean
    }
}

struct Candidate {
    gain: f64,
    rule: Rule,
}

fn mean_sse(idx: &[usize], y: &[f64]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sse = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    (mean, sse)
}

/// Best `<=` threshold on a numeric column, scanning sorted values with
/// running sums of centred responses.
fn best_numeric(ds: &Dataset, j: usize, idx: &[usize], y: &[f64], mean: f64, sse: f64, min_leaf: usize) -> Option<Candidate> {
    let x = ds.numeric();
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| x[[a, j]].total_cmp(&x[[b, j]]));
    let n = order.len();
    let total: f64 = order.iter().map(|&i| y[i] - mean).sum();
    let mut s_left = 0.0;
    let mut best: Option<Candidate> = None;
    for pos in 0..n - 1 {
        let i = order[pos];
        s_left += y[i] - mean;
        let (nl, nr) = (pos + 1, n - pos - 1);
        let (v, next) = (x[[i, j]], x[[order[pos + 1], j]]);
        if v == next || nl < min_leaf || nr < min_leaf {
            continue;
        }
        // SSE(parent) − SSE(children) = S_l²/n_l + S_r²/n_r for centred sums.
        let s_right = total - s_left;
        let gain = s_left * s_left / nl as f64 + s_right * s_right / nr as f64;
        if gain > MIN_RELATIVE_GAIN * sse && best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(Candidate {
                gain,
                rule: Rule::Numeric {
                    column: j,
                    threshold: v + (next - v) / 2.0,
                },
            });
        }
    }
    best
}

fn best_categorical(ds: &Dataset, j: usize, idx: &[usize], y: &[f64], mean: f64, sse: f64, min_leaf: usize) -> Option<Candidate> {
    let n_levels = ds.schema().categorical(j).levels.len();
    let codes = ds.categorical();
    let mut count = vec![0usize; n_levels];
    let mut sum = vec![0.0; n_levels];
    for &i in idx {
        let c = codes[[i, j]] as usize;
        count[c] += 1;
        sum[c] += y[i] - mean;
    }
    let mut present: Vec<usize> = (0..n_levels).filter(|&l| count[l] > 0).collect();
    present.sort_by(|&a, &b| {
        (sum[a] / count[a] as f64)
            .total_cmp(&(sum[b] / count[b] as f64))
            .then(a.cmp(&b))
    });
    let n = idx.len();
    let total: f64 = sum.iter().sum();
    let (mut nl, mut s_left) = (0usize, 0.0);
    let mut best: Option<Candidate> = None;
    for pos in 0..present.len().saturating_sub(1) {
        nl += count[present[pos]];
        s_left += sum[present[pos]];
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let s_right = total - s_left;
        let gain = s_left * s_left / nl as f64 + s_right * s_right / nr as f64;
        if gain > MIN_RELATIVE_GAIN * sse && best.as_ref().is_none_or(|b| gain > b.gain) {
            let mut left = vec![false; n_levels];
            for &l in &present[..=pos] {
                left[l] = true;
            }
            best = Some(Candidate {
                gain,
                rule: Rule::Categorical { column: j, left },
            });
        }
    }
    best
}

fn grow(ds: &Dataset, idx: Vec<usize>, y: &[f64], depth: usize, max_depth: usize, min_leaf: usize) -> TreeNode {
    let (mean, sse) = mean_sse(&idx, y);
    let mut node = TreeNode {
        depth,
        count: idx.len(),
        mean,
        sse,
        split: None,
        left: None,
        right: None,
        rule: None,
    };
    let constant = idx.iter().all(|&i| y[i] == y[idx[0]]);
    if depth >= max_depth || idx.len() < 2 * min_leaf || constant {
        return node;
    }
    let schema = ds.schema();
    let mut best: Option<Candidate> = None;
    for r in schema.column_refs() {
        let cand = match r {
            ColumnRef::Numeric(j) => best_numeric(ds, j, &idx, y, mean, sse, min_leaf),
            ColumnRef::Categorical(j) => best_categorical(ds, j, &idx, y, mean, sse, min_leaf),
        };
        if let Some(c) = cand {
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
    }
    let Some(best) = best else { return node };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| match &best.rule {
        Rule::Numeric { column, threshold } => ds.numeric()[[i, *column]] <= *threshold,
        Rule::Categorical { column, left } => left[ds.categorical()[[i, *column]] as usize],
    });
    node.split = Some(match &best.rule {
        Rule::Numeric { column, threshold } => SplitRule::Numeric {
            column: schema.numeric(*column).name.clone(),
            threshold: *threshold,
        },
        Rule::Categorical { column, left } => {
            let levels = &schema.categorical(*column).levels;
            SplitRule::Categorical {
                column: schema.categorical(*column).name.clone(),
                left_levels: (0..levels.len()).filter(|&l| left[l]).map(|l| levels[l].clone()).collect(),
            }
        }
    });
    node.rule = Some(best.rule);
    node.left = Some(Box::new(grow(ds, left_idx, y, depth + 1, max_depth, min_leaf)));
    node.right = Some(Box::new(grow(ds, right_idx, y, depth + 1, max_depth, min_leaf)));
    node
}

pub fn fit_diagnostic_tree(ds: &Dataset, rppv: &[f64], params: &TreeParams) -> Result<DiagnosticTree> {
    let n = ds.n_rows();
    if rppv.len() != n {
        return Err(Error::Contract("rPPV length differs from the dataset".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientData("tree needs at least one observation".into()));
    }
    if rppv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("rPPV values must be finite".into()));
    }
    let min_leaf = params.min_leaf_for(n);
    let root = grow(ds, (0..n).collect(), rppv, 0, params.max_depth, min_leaf);
    Ok(DiagnosticTree {
        max_depth: params.max_depth,
        min_leaf,
        root,
    })
}
