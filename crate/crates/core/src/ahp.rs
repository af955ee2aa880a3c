//! Analytic hierarchy process.
//!
//! A hierarchy has a goal, a tree of criteria, and a flat list of
//! alternatives. Every internal node owns a reciprocal pairwise matrix over its
//! children (alternatives for leaf criteria). Local priorities are principal
//! eigenvectors; global alternative weights multiply local weights along each
//! root-to-leaf path.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dematel::read_labeled_matrix_csv;
use crate::numerics::{self, Matrix, NumericsError, DEFAULT_EIGEN_MAX_ITER, DEFAULT_EIGEN_TOL};

/// Node id of the goal (root) matrix.
pub const GOAL_NODE: &str = "goal";
pub const SCALE_MIN: f64 = 1.0 / 9.0;
pub const SCALE_MAX: f64 = 9.0;
pub const RECIPROCITY_TOL: f64 = 1e-9;
pub const DEFAULT_CR_THRESHOLD: f64 = 0.1;
/// Two global weights closer than this are reported as tied.
pub const TIE_EPS: f64 = 1e-9;

/// Random consistency index for orders 1..=10.
///
/// Published table values. Beside each, the mean CI of 200,000 random
/// reciprocal matrices per order with upper entries drawn uniformly from the
/// 17-point scale:
///
/// | n | table | measured |
/// |---|-------|----------|
/// | 3 | 0.58  | 0.524    |
/// | 4 | 0.90  | 0.883    |
/// | 5 | 1.12  | 1.107    |
/// | 6 | 1.24  | 1.243    |
/// | 7 | 1.32  | 1.344    |
/// | 8 | 1.41  | 1.407    |
/// | 9 | 1.45  | 1.450    |
/// | 10| 1.49  | 1.488    |
pub const RANDOM_INDEX: [f64; 10] = [0.0, 0.0, 0.58, 0.90, 1.12, 1.24, 1.32, 1.41, 1.45, 1.49];

/// The 17 admissible judgments, 1/9 through 9.
pub const SAATY_SCALE: [f64; 17] = [
    1.0 / 9.0,
    1.0 / 8.0,
    1.0 / 7.0,
    1.0 / 6.0,
    1.0 / 5.0,
    1.0 / 4.0,
    1.0 / 3.0,
    1.0 / 2.0,
    1.0,
    2.0,
    3.0,
    4.0,
    5.0,
    6.0,
    7.0,
    8.0,
    9.0,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AhpError {
    #[error("pairwise matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("{labels} labels for a {size}x{size} matrix")]
    DimensionMismatch { labels: usize, size: usize },
    #[error("label {0:?} appears more than once")]
    DuplicateLabel(String),
    #[error("entry ({row}, {col}) = {value} is not a positive ratio")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    #[error("diagonal entry {index} is {value}, expected 1")]
    BadDiagonal { index: usize, value: f64 },
    #[error("entries ({row}, {col}) = {a} and ({col}, {row}) = {b} are not reciprocal")]
    NotReciprocal { row: usize, col: usize, a: f64, b: f64 },
    #[error("entry ({row}, {col}) = {value} is outside [1/9, 9]")]
    OutOfScale { row: usize, col: usize, value: f64 },
    #[error("no random index for order {0}; supported orders are 1..=10")]
    UnsupportedOrder(usize),
    #[error("matrix at node {node:?} is inconsistent (CR = {cr:.4} >= {threshold})")]
    InconsistentMatrix { node: String, cr: f64, threshold: f64 },
    #[error("incomplete hierarchy: {0}")]
    IncompleteHierarchy(String),
    #[error("unknown hierarchy node {0:?}")]
    UnknownNode(String),
    #[error("need at least {min} {what}, got {got}")]
    TooFew { what: &'static str, min: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("malformed pairwise CSV: {0}")]
    Csv(String),
}

/// Reciprocal pairwise comparison matrix over labeled items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub labels: Vec<String>,
    pub entries: Matrix,
}

impl PairwiseMatrix {
    pub fn new(labels: Vec<String>, entries: Matrix) -> Self {
        Self { labels, entries }
    }

    /// All-ones (indifferent) matrix.
    pub fn neutral(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            entries: Matrix::filled(n, n, 1.0),
        }
    }

    /// Consistent matrix `a_ij = w_i / w_j`.
    pub fn from_weights(labels: Vec<String>, weights: &[f64]) -> Self {
        let n = weights.len();
        let mut entries = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                entries[(i, j)] = weights[i] / weights[j];
            }
        }
        Self { labels, entries }
    }

    /// Builds the full matrix from the judgments above the diagonal, in row
    /// order `(0,1), (0,2), .., (1,2), ..`.
    pub fn from_upper(labels: Vec<String>, upper: &[f64]) -> Result<Self, AhpError> {
        let n = labels.len();
        let expected = n * n.saturating_sub(1) / 2;
        if upper.len() != expected {
            return Err(AhpError::DimensionMismatch {
                labels: n,
                size: upper.len(),
            });
        }
        let mut entries = Matrix::identity(n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                entries[(i, j)] = upper[k];
                entries[(j, i)] = 1.0 / upper[k];
                k += 1;
            }
        }
        Ok(Self { labels, entries })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks shape, positivity, unit diagonal, reciprocity and scale bounds.
    pub fn validate(&self) -> Result<(), AhpError> {
        let m = &self.entries;
        if !m.is_square() {
            return Err(AhpError::NotSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        if self.labels.len() != m.rows() {
            return Err(AhpError::DimensionMismatch {
                labels: self.labels.len(),
                size: m.rows(),
            });
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = self.labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(AhpError::DuplicateLabel(dup.clone()));
        }
        let n = m.rows();
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] <= 0.0 {
                    return Err(AhpError::NonPositiveEntry {
                        row: i,
                        col: j,
                        value: m[(i, j)],
                    });
                }
            }
        }
        for i in 0..n {
            if (m[(i, i)] - 1.0).abs() > RECIPROCITY_TOL {
                return Err(AhpError::BadDiagonal {
                    index: i,
                    value: m[(i, i)],
                });
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if (b - 1.0 / a).abs() > RECIPROCITY_TOL {
                    return Err(AhpError::NotReciprocal { row: i, col: j, a, b });
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let value = m[(i, j)];
                if !(SCALE_MIN - RECIPROCITY_TOL..=SCALE_MAX + RECIPROCITY_TOL).contains(&value) {
                    return Err(AhpError::OutOfScale { row: i, col: j, value });
                }
            }
        }
        Ok(())
    }

    /// Reads a labeled square CSV; cells may be decimals or fractions like `1/3`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, AhpError> {
        let (labels, entries) = read_labeled_matrix_csv(reader).map_err(AhpError::Csv)?;
        let m = Self { labels, entries };
        m.validate()?;
        Ok(m)
    }

    /// Normalized row geometric means; an alternative priority method kept for
    /// cross-checks.
    pub fn geometric_mean_weights(&self) -> Vec<f64> {
        let n = self.len();
        let gm: Vec<f64> = (0..n)
            .map(|i| self.entries.row(i).iter().map(|v| v.ln()).sum::<f64>() / n as f64)
            .map(f64::exp)
            .collect();
        let total: f64 = gm.iter().sum();
        gm.into_iter().map(|g| g / total).collect()
    }
}

/// Local priorities of one pairwise matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityResult {
    pub labels: Vec<String>,
    pub weights: Vec<f64>,
    pub lambda_max: f64,
    pub ci: f64,
    pub cr: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub cr_threshold: f64,
}

impl Default for PriorityOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_EIGEN_TOL,
            max_iter: DEFAULT_EIGEN_MAX_ITER,
            cr_threshold: DEFAULT_CR_THRESHOLD,
        }
    }
}

pub fn random_index(n: usize) -> Result<f64, AhpError> {
    match n {
        1..=10 => Ok(RANDOM_INDEX[n - 1]),
        _ => Err(AhpError::UnsupportedOrder(n)),
    }
}

pub fn consistency_index(lambda_max: f64, n: usize) -> f64 {
    if n <= 2 {
        0.0
    } else {
        ((lambda_max - n as f64) / (n as f64 - 1.0)).max(0.0)
    }
}

pub fn priorities(m: &PairwiseMatrix) -> Result<PriorityResult, AhpError> {
    priorities_with(m, &PriorityOptions::default())
}

pub fn priorities_with(m: &PairwiseMatrix, opts: &PriorityOptions) -> Result<PriorityResult, AhpError> {
    m.validate()?;
    let n = m.len();
    let ri = random_index(n)?;
    let eigen = numerics::principal_eigen(&m.entries, opts.tol, opts.max_iter)?;
    let ci = consistency_index(eigen.lambda_max, n);
    let cr = if ri == 0.0 { 0.0 } else { ci / ri };
    Ok(PriorityResult {
        labels: m.labels.clone(),
        weights: eigen.vector,
        lambda_max: eigen.lambda_max,
        ci,
        cr,
        consistent: cr < opts.cr_threshold,
    })
}

/// Group judgment: entrywise geometric mean of several matrices over the same labels.
pub fn merge_geometric(matrices: &[PairwiseMatrix]) -> Result<PairwiseMatrix, AhpError> {
    let first = matrices.first().ok_or(AhpError::TooFew {
        what: "matrices",
        min: 1,
        got: 0,
    })?;
    for m in matrices {
        m.validate()?;
        if m.labels != first.labels {
            return Err(AhpError::DimensionMismatch {
                labels: m.labels.len(),
                size: first.len(),
            });
        }
    }
    let n = first.len();
    let k = matrices.len() as f64;
    let mut entries = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let log_sum: f64 = matrices.iter().map(|m| m.entries[(i, j)].ln()).sum();
            entries[(i, j)] = (log_sum / k).exp();
        }
    }
    Ok(PairwiseMatrix::new(first.labels.clone(), entries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Criterion>,
    /// Advisory weight carried in from elicitation; not used in synthesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisory_weight: Option<f64>,
}

impl Criterion {
    pub fn leaf(id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            children: Vec::new(),
            advisory_weight: None,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Goal, criteria tree and alternatives, plus one matrix per internal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub goal: String,
    pub criteria: Vec<Criterion>,
    pub alternatives: Vec<String>,
    #[serde(default)]
    pub matrices: BTreeMap<String, PairwiseMatrix>,
}

/// Internal node of the hierarchy and the labels its matrix must compare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node: String,
    pub label: String,
    pub compares: Vec<String>,
}

impl Hierarchy {
    /// Every internal node in depth-first order, goal first.
    pub fn nodes(&self) -> Vec<NodeSpec> {
        fn walk(c: &Criterion, alternatives: &[String], out: &mut Vec<NodeSpec>) {
            let compares = if c.is_leaf() {
                alternatives.to_vec()
            } else {
                c.children.iter().map(|k| k.label.clone()).collect()
            };
            out.push(NodeSpec {
                node: c.id.clone(),
                label: c.label.clone(),
                compares,
            });
            for child in &c.children {
                walk(child, alternatives, out);
            }
        }
        let mut out = vec![NodeSpec {
            node: GOAL_NODE.to_string(),
            label: self.goal.clone(),
            compares: self.criteria.iter().map(|c| c.label.clone()).collect(),
        }];
        for c in &self.criteria {
            walk(c, &self.alternatives, &mut out);
        }
        out
    }

    pub fn node(&self, node: &str) -> Result<NodeSpec, AhpError> {
        self.nodes()
            .into_iter()
            .find(|n| n.node == node)
            .ok_or_else(|| AhpError::UnknownNode(node.to_string()))
    }

    /// Replaces the matrix at `node` after checking it fits and is valid.
    pub fn set_matrix(&mut self, node: &str, matrix: PairwiseMatrix) -> Result<(), AhpError> {
        let spec = self.node(node)?;
        matrix.validate()?;
        if matrix.labels != spec.compares {
            return Err(AhpError::IncompleteHierarchy(format!(
                "matrix for node {node:?} compares {:?}, expected {:?}",
                matrix.labels, spec.compares
            )));
        }
        self.matrices.insert(node.to_string(), matrix);
        Ok(())
    }

    /// Structural checks: unique ids and labels, at least one criterion and two
    /// alternatives, exactly one fitting matrix per internal node.
    pub fn check_structure(&self) -> Result<(), AhpError> {
        if self.criteria.is_empty() {
            return Err(AhpError::IncompleteHierarchy("no criteria".into()));
        }
        if self.alternatives.len() < 2 {
            return Err(AhpError::IncompleteHierarchy("fewer than two alternatives".into()));
        }
        let mut alt_seen = BTreeSet::new();
        if let Some(dup) = self.alternatives.iter().find(|a| !alt_seen.insert(a.as_str())) {
            return Err(AhpError::DuplicateLabel(dup.clone()));
        }
        let nodes = self.nodes();
        let mut ids = BTreeSet::new();
        for spec in &nodes {
            if !ids.insert(spec.node.as_str()) {
                return Err(AhpError::DuplicateLabel(spec.node.clone()));
            }
            let mut labels = BTreeSet::new();
            if let Some(dup) = spec.compares.iter().find(|l| !labels.insert(l.as_str())) {
                return Err(AhpError::DuplicateLabel(dup.clone()));
            }
            let matrix = self
                .matrices
                .get(&spec.node)
                .ok_or_else(|| AhpError::IncompleteHierarchy(format!("node {:?} has no matrix", spec.node)))?;
            if matrix.labels != spec.compares || matrix.entries.rows() != spec.compares.len() {
                return Err(AhpError::IncompleteHierarchy(format!(
                    "matrix for node {:?} compares {:?}, expected {:?}",
                    spec.node, matrix.labels, spec.compares
                )));
            }
        }
        if let Some(extra) = self.matrices.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(AhpError::IncompleteHierarchy(format!(
                "matrix for unknown node {extra:?}"
            )));
        }
        Ok(())
    }
}

/// Goal over criteria over alternatives with all-ones matrices awaiting judgments.
pub fn skeleton(
    goal: &str,
    criteria: &[(String, Option<f64>)],
    alternatives: &[String],
) -> Result<Hierarchy, AhpError> {
    if criteria.len() < 2 {
        return Err(AhpError::TooFew {
            what: "criteria",
            min: 2,
            got: criteria.len(),
        });
    }
    if alternatives.len() < 2 {
        return Err(AhpError::TooFew {
            what: "alternatives",
            min: 2,
            got: alternatives.len(),
        });
    }
    let criteria: Vec<Criterion> = criteria
        .iter()
        .enumerate()
        .map(|(i, (label, weight))| Criterion {
            id: format!("c{}", i + 1),
            label: label.clone(),
            children: Vec::new(),
            advisory_weight: *weight,
        })
        .collect();
    let mut h = Hierarchy {
        goal: goal.to_string(),
        criteria,
        alternatives: alternatives.to_vec(),
        matrices: BTreeMap::new(),
    };
    for spec in h.nodes() {
        h.matrices.insert(spec.node, PairwiseMatrix::neutral(spec.compares));
    }
    h.check_structure()?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAlternative {
    pub label: String,
    pub weight: f64,
    pub rank: usize,
    /// Weight equals a neighbour's within tolerance; order fell back to label order.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub ranking: Vec<RankedAlternative>,
    pub local: BTreeMap<String, PriorityResult>,
    /// Product of criterion weights down to each leaf criterion.
    pub leaf_weights: BTreeMap<String, f64>,
    pub all_consistent: bool,
    pub forced: bool,
}

impl Synthesis {
    pub fn weight_of(&self, label: &str) -> Option<f64> {
        self.ranking.iter().find(|r| r.label == label).map(|r| r.weight)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub priority: PriorityOptions,
    /// Synthesize even when some matrix fails the consistency threshold.
    pub force: bool,
}

pub fn synthesize(h: &Hierarchy) -> Result<Synthesis, AhpError> {
    synthesize_with(h, &SynthesisOptions::default())
}

/// Global weights and ranking.
///
/// Fails with `InconsistentMatrix` naming the first offending node (depth
/// first from the goal) unless `force` is set.
pub fn synthesize_with(h: &Hierarchy, opts: &SynthesisOptions) -> Result<Synthesis, AhpError> {
    h.check_structure()?;
    let mut local = BTreeMap::new();
    let mut all_consistent = true;
    for spec in h.nodes() {
        let result = priorities_with(&h.matrices[&spec.node], &opts.priority)?;
        if !result.consistent {
            all_consistent = false;
            if !opts.force {
                return Err(AhpError::InconsistentMatrix {
                    node: spec.node,
                    cr: result.cr,
                    threshold: opts.priority.cr_threshold,
                });
            }
        }
        local.insert(spec.node, result);
    }

    let mut globals = vec![0.0; h.alternatives.len()];
    let mut leaf_weights = BTreeMap::new();
    let goal_weights = &local[GOAL_NODE].weights;
    let mut stack: Vec<(&Criterion, f64)> = h.criteria.iter().zip(goal_weights).map(|(c, &w)| (c, w)).collect();
    while let Some((criterion, path_weight)) = stack.pop() {
        let node = &local[&criterion.id];
        if criterion.is_leaf() {
            leaf_weights.insert(criterion.id.clone(), path_weight);
            for (g, w) in globals.iter_mut().zip(&node.weights) {
                *g += path_weight * w;
            }
        } else {
            for (child, w) in criterion.children.iter().zip(&node.weights) {
                stack.push((child, path_weight * w));
            }
        }
    }

    let mut order: Vec<usize> = (0..globals.len()).collect();
    order.sort_by(|&a, &b| {
        if (globals[a] - globals[b]).abs() <= TIE_EPS {
            h.alternatives[a].cmp(&h.alternatives[b])
        } else {
            globals[b].total_cmp(&globals[a])
        }
    });
    let ranking: Vec<RankedAlternative> = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let tied = order
                .iter()
                .any(|&j| j != i && (globals[i] - globals[j]).abs() <= TIE_EPS);
            RankedAlternative {
                label: h.alternatives[i].clone(),
                weight: globals[i],
                rank: pos + 1,
                tied,
            }
        })
        .collect();

    Ok(Synthesis {
        ranking,
        local,
        leaf_weights,
        all_consistent,
        forced: opts.force && !all_consistent,
    })
}
