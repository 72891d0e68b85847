//! Exact greedy regression trees fitted to Newton statistics.
//!
//! Every distinct feature value is a split candidate; the threshold is the
//! midpoint between consecutive sorted values. Trees grow level by level: one
//! pass over each presorted column evaluates all candidate splits of every
//! open node at that depth.

use serde::{Deserialize, Serialize};

use super::TrainParams;

/// Relative slack below which a split gain counts as zero. Equal-gradient
/// data can produce gains of a few ulps in either direction.
const GAIN_EPS: f64 = 1e-12;

const PREFILTER_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
    },
}

impl TreeNode {
    /// Rows with `x[feature_index] < threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight } => return *weight,
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature_index] < *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn max_feature_index(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature_index,
                left,
                right,
                ..
            } => Some(
                (*feature_index)
                    .max(left.max_feature_index().unwrap_or(0))
                    .max(right.max_feature_index().unwrap_or(0)),
            ),
        }
    }
}

/// Columns handled in lockstep. Their accumulator chains are independent,
/// and one lane row fills a vector register.
const LANES: usize = 4;

/// Row `i` of a group of `LANES` columns: lane `l` holds the `i`-th smallest
/// entry of the group's `l`-th column.
#[derive(Debug, Clone, Copy, Default)]
struct LaneRow {
    value: [f64; LANES],
    row: [u32; LANES],
}

/// A lane row carrying the current tree's gradient statistics.
#[derive(Debug, Clone, Copy, Default)]
struct StatRow {
    value: [f64; LANES],
    g: [f64; LANES],
    h: [f64; LANES],
    row: [u32; LANES],
}

/// Columns of group `group`. A short final group repeats its last column;
/// the duplicates tie and are discarded by the strict merge in `scan_node`.
fn lane_features(group: usize, nf: usize) -> [usize; LANES] {
    std::array::from_fn(|l| (group * LANES + l).min(nf - 1))
}

/// Column-major copy of the training matrix with per-column sort orders.
#[derive(Debug, Clone)]
pub struct SortedColumns {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    /// Column group `k` occupies `groups[k * n_rows..][..n_rows]`.
    groups: Vec<LaneRow>,
}

impl SortedColumns {
    pub fn new(rows: &[Vec<f64>]) -> Self {
        let n_rows = rows.len();
        let n_features = rows.first().map_or(0, Vec::len);
        let columns: Vec<Vec<f64>> = (0..n_features).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let orders: Vec<Vec<u32>> = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n_rows as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        let n_groups = n_features.div_ceil(LANES);
        let mut groups = Vec::with_capacity(n_groups * n_rows);
        for k in 0..n_groups {
            let feats = lane_features(k, n_features);
            groups.extend((0..n_rows).map(|i| {
                let row = feats.map(|f| orders[f][i]);
                LaneRow {
                    value: std::array::from_fn(|l| columns[feats[l]][row[l] as usize]),
                    row,
                }
            }));
        }
        Self {
            n_rows,
            columns,
            groups,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }
}

/// Level buffers reused across the trees of one model.
#[derive(Default)]
pub(super) struct TreeScratch {
    level: Vec<StatRow>,
    next: Vec<StatRow>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

enum Built {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A node awaiting a split decision. Its rows occupy
/// `[start, start + len)` of every column segment of the current level.
struct OpenNode {
    arena: usize,
    g: f64,
    h: f64,
    start: usize,
    len: usize,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

/// Fits one regression tree on rows given in row-major form.
pub fn fit_tree(rows: &[Vec<f64>], grad: &[f64], hess: &[f64], params: &TrainParams) -> TreeNode {
    fit_tree_sorted(&SortedColumns::new(rows), grad, hess, params)
}

/// Fits one regression tree maximizing the regularized second-order gain.
///
/// Ties between equal gains keep the lowest feature index, then the lowest
/// threshold.
pub fn fit_tree_sorted(data: &SortedColumns, grad: &[f64], hess: &[f64], params: &TrainParams) -> TreeNode {
    fit_tree_with(data, grad, hess, params, &mut TreeScratch::default())
}

pub(super) fn fit_tree_with(
    data: &SortedColumns,
    grad: &[f64],
    hess: &[f64],
    params: &TrainParams,
    scratch: &mut TreeScratch,
) -> TreeNode {
    let lambda = params.lambda_l2;
    let mcw = params.min_child_weight;
    let n = data.n_rows();
    let nf = data.n_features();
    let n_groups = nf.div_ceil(LANES);

    let mut arena: Vec<Built> = vec![Built::Leaf(0.0)];
    // Slot of each row's node in the current level, or NONE once settled.
    const NONE: u32 = u32::MAX;
    let mut slot_of = vec![0u32; n];
    let mut open = vec![OpenNode {
        arena: 0,
        g: grad.iter().sum(),
        h: hess.iter().sum(),
        start: 0,
        len: n,
    }];
    // Column groups restricted to the open rows, each node's rows contiguous
    // and still in sorted order. The statistics are gathered once per tree
    // and travel with the entries.
    scratch.level.clear();
    scratch.level.extend(data.groups.iter().map(|r| StatRow {
        value: r.value,
        g: r.row.map(|i| grad[i as usize]),
        h: r.row.map(|i| hess[i as usize]),
        row: r.row,
    }));
    let mut stride = n;
    let mut goes_left = vec![false; n];

    let mut depth = 0;
    while !open.is_empty() {
        let scan = depth < params.max_depth;
        let best: Vec<Option<Candidate>> = if scan {
            open.iter()
                .map(|node| scan_node(&scratch.level, stride, nf, node, lambda, mcw))
                .collect()
        } else {
            vec![None; open.len()]
        };
        // Materialize splits and route rows to the next level.
        let mut next_open = Vec::new();
        let mut remap: Vec<Option<(usize, usize, Candidate)>> = vec![None; open.len()];
        for (s, node) in open.iter().enumerate() {
            match best[s] {
                Some(c) => {
                    let left = arena.len();
                    arena.push(Built::Leaf(0.0));
                    let right = arena.len();
                    arena.push(Built::Leaf(0.0));
                    arena[node.arena] = Built::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    let ls = next_open.len();
                    for arena in [left, right] {
                        next_open.push(OpenNode {
                            arena,
                            g: 0.0,
                            h: 0.0,
                            start: 0,
                            len: 0,
                        });
                    }
                    remap[s] = Some((ls, ls + 1, c));
                }
                None => {
                    arena[node.arena] = Built::Leaf(leaf_weight(node.g, node.h, lambda));
                }
            }
        }
        for r in 0..n {
            let s = slot_of[r];
            if s == NONE {
                continue;
            }
            slot_of[r] = match remap[s as usize] {
                Some((ls, rs, c)) => {
                    let left = data.columns[c.feature][r] < c.threshold;
                    goes_left[r] = left;
                    let target = if left { ls } else { rs };
                    next_open[target].g += grad[r];
                    next_open[target].h += hess[r];
                    next_open[target].len += 1;
                    target as u32
                }
                None => NONE,
            };
        }
        let mut next_stride = 0;
        for node in &mut next_open {
            node.start = next_stride;
            next_stride += node.len;
        }

        // Only levels that will be scanned need their groups partitioned.
        if depth + 1 < params.max_depth && !next_open.is_empty() {
            let need = n_groups * next_stride;
            if scratch.next.len() < need {
                scratch.next.resize(need, StatRow::default());
            }
            for k in 0..n_groups {
                let src = &scratch.level[k * stride..][..stride];
                let dst = &mut scratch.next[k * next_stride..][..next_stride];
                for (s, node) in open.iter().enumerate() {
                    let Some((ls, rs, _)) = remap[s] else { continue };
                    // Stable partition per lane; the select keeps it
                    // branch-free.
                    let mut lpos = [next_open[ls].start; LANES];
                    let mut rpos = [next_open[rs].start; LANES];
                    for r in &src[node.start..node.start + node.len] {
                        for l in 0..LANES {
                            let left = goes_left[r.row[l] as usize];
                            let d = &mut dst[if left { lpos[l] } else { rpos[l] }];
                            d.value[l] = r.value[l];
                            d.g[l] = r.g[l];
                            d.h[l] = r.h[l];
                            d.row[l] = r.row[l];
                            lpos[l] += left as usize;
                            rpos[l] += !left as usize;
                        }
                    }
                }
            }
            std::mem::swap(&mut scratch.level, &mut scratch.next);
        }
        stride = next_stride;
        open = next_open;
        depth += 1;
    }

    assemble(&arena, 0)
}

/// Finds the best split of one node, or `None` if no split clears the gain
/// floor.
///
/// Each lane keeps its own best candidate; lanes are merged in feature order
/// with a strict `>`, which reproduces the sequential first-maximum rule.
/// Wider vector units are picked at run time; Rust never contracts to FMA,
/// so every variant computes bit-identical results.
#[multiversion::multiversion(targets("x86_64+avx2+fma", "x86_64+sse4.1"))]
fn scan_node(level: &[StatRow], stride: usize, nf: usize, node: &OpenNode, lambda: f64, mcw: f64) -> Option<Candidate> {
    let parent = score(node.g, node.h, lambda);
    let mut floor = GAIN_EPS * (1.0 + parent);
    let mut best = None;
    for k in 0..nf.div_ceil(LANES) {
        let feats = lane_features(k, nf);
        let mut gl = [0.0; LANES];
        let mut hl = [0.0; LANES];
        // NaN before the first row, so the `v > last` test fails without a
        // separate flag.
        let mut last = [f64::NAN; LANES];
        let mut lane_floor = [floor; LANES];
        let mut lane_best: [Option<Candidate>; LANES] = [None; LANES];
        for r in &level[k * stride + node.start..][..node.len] {
            // Division-free prefilter for `gain > floor`, loose enough never
            // to reject a split the exact test would accept. It runs on all
            // lanes without branching; whether a row passes is close to
            // random, and only the rare passes take the exact path.
            let mut pass = [false; LANES];
            for l in 0..LANES {
                let hr = node.h - hl[l];
                let gr = node.g - gl[l];
                let (dl, dr) = (hl[l] + lambda, hr + lambda);
                let lhs = gl[l] * gl[l] * dr + gr * gr * dl;
                let rhs = (2.0 * lane_floor[l] + parent) * dl * dr * (1.0 - PREFILTER_SLACK);
                pass[l] = (r.value[l] > last[l]) & (hl[l] >= mcw) & (hr >= mcw) & (lhs >= rhs);
            }
            if pass.iter().any(|&p| p) {
                for l in (0..LANES).filter(|&l| pass[l]) {
                    let (gr, hr) = (node.g - gl[l], node.h - hl[l]);
                    let gain = 0.5 * (score(gl[l], hl[l], lambda) + score(gr, hr, lambda) - parent);
                    if gain > lane_floor[l] {
                        let (prev, v) = (last[l], r.value[l]);
                        let mut threshold = prev + (v - prev) / 2.0;
                        if threshold <= prev {
                            threshold = v;
                        }
                        lane_floor[l] = gain;
                        lane_best[l] = Some(Candidate {
                            gain,
                            feature: feats[l],
                            threshold,
                        });
                    }
                }
            }
            for l in 0..LANES {
                gl[l] += r.g[l];
                hl[l] += r.h[l];
            }
            last = r.value;
        }
        for c in lane_best.into_iter().flatten() {
            if c.gain > floor {
                floor = c.gain;
                best = Some(c);
            }
        }
    }
    best
}

fn assemble(arena: &[Built], i: usize) -> TreeNode {
    match arena[i] {
        Built::Leaf(weight) => TreeNode::Leaf { weight },
        Built::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature_index: feature,
            threshold,
            left: Box::new(assemble(arena, left)),
            right: Box::new(assemble(arena, right)),
        },
    }
}
