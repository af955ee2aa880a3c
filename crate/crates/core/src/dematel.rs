//! DEMATEL cause-effect structuring.
//!
//! A direct-influence matrix on the 0-4 questionnaire scale is normalized by
//! its largest row sum, expanded into the total-relation matrix
//! `T = N (I - N)^-1`, and reduced to prominence (`r + c`) and relation
//! (`r - c`) scores. Factors with positive relation are net causes.
//!
//! Factors can be anything the facilitator wants to relate: identified gaps,
//! or the candidate methods and tools themselves.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, Matrix, NumericsError};

/// Largest score on the direct-influence questionnaire scale.
pub const INFLUENCE_MAX: f64 = 4.0;
/// Relation scores within this distance of zero count as ties.
pub const RELATION_TIE_EPS: f64 = 1e-12;
/// Spectral radius threshold above which the Neumann series is rejected.
pub const SERIES_RADIUS_LIMIT: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DematelError {
    #[error("direct matrix has {rows} rows and {cols} columns")]
    NotSquare { rows: usize, cols: usize },
    #[error("{factors} factor labels for a {size}x{size} matrix")]
    DimensionMismatch { factors: usize, size: usize },
    #[error("factor label {0:?} appears more than once")]
    DuplicateFactor(String),
    #[error("diagonal entry for factor {factor:?} is {value}, expected 0")]
    NonZeroDiagonal { factor: String, value: f64 },
    #[error("influence ({row}, {col}) = {value} is not on the 0-4 scale")]
    InfluenceOutOfScale { row: usize, col: usize, value: f64 },
    #[error("direct matrix has no non-zero influence")]
    AllZeroMatrix,
    #[error(
        "spectral radius of the normalized matrix is at least {lower_bound:.12}; the total-relation series diverges"
    )]
    DivergentSeries { lower_bound: f64 },
    #[error("normalization scale must be a positive finite number, got {0}")]
    InvalidScale(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("malformed matrix CSV: {0}")]
    Csv(String),
}

/// Expert direct-influence judgments between factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDirectMatrix")]
pub struct DirectMatrix {
    factors: Vec<String>,
    entries: Matrix,
}

#[derive(Deserialize)]
struct RawDirectMatrix {
    factors: Vec<String>,
    entries: Matrix,
}

impl TryFrom<RawDirectMatrix> for DirectMatrix {
    type Error = DematelError;

    fn try_from(raw: RawDirectMatrix) -> Result<Self, Self::Error> {
        Self::check(&raw.factors, &raw.entries, false)?;
        Ok(Self {
            factors: raw.factors,
            entries: raw.entries,
        })
    }
}

impl DirectMatrix {
    /// Questionnaire matrix: integer scores 0-4 with a zero diagonal.
    pub fn new(factors: Vec<String>, entries: Matrix) -> Result<Self, DematelError> {
        Self::check(&factors, &entries, true)?;
        Ok(Self { factors, entries })
    }

    pub fn from_rows(factors: &[&str], rows: &[Vec<f64>]) -> Result<Self, DematelError> {
        let entries = Matrix::from_rows(rows)?;
        Self::new(factors.iter().map(|s| s.to_string()).collect(), entries)
    }

    fn check(factors: &[String], entries: &Matrix, integral: bool) -> Result<(), DematelError> {
        if !entries.is_square() {
            return Err(DematelError::NotSquare {
                rows: entries.rows(),
                cols: entries.cols(),
            });
        }
        if factors.len() != entries.rows() {
            return Err(DematelError::DimensionMismatch {
                factors: factors.len(),
                size: entries.rows(),
            });
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = factors.iter().find(|f| !seen.insert(f.as_str())) {
            return Err(DematelError::DuplicateFactor(dup.clone()));
        }
        let n = entries.rows();
        for i in 0..n {
            for j in 0..n {
                let value = entries[(i, j)];
                let on_scale = (0.0..=INFLUENCE_MAX).contains(&value) && (!integral || value.fract() == 0.0);
                if !on_scale {
                    return Err(DematelError::InfluenceOutOfScale { row: i, col: j, value });
                }
            }
            if entries[(i, i)] != 0.0 {
                return Err(DematelError::NonZeroDiagonal {
                    factor: factors[i].clone(),
                    value: entries[(i, i)],
                });
            }
        }
        Ok(())
    }

    pub fn factors(&self) -> &[String] {
        &self.factors
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Entrywise arithmetic mean of several experts' matrices over the same
    /// factor list. The result may hold non-integer scores.
    pub fn merge_mean(matrices: &[DirectMatrix]) -> Result<DirectMatrix, DematelError> {
        let first = matrices.first().ok_or(DematelError::AllZeroMatrix)?;
        let n = first.len();
        let mut sum = Matrix::zeros(n, n);
        for m in matrices {
            if m.factors != first.factors {
                return Err(DematelError::DimensionMismatch {
                    factors: m.factors.len(),
                    size: n,
                });
            }
            for i in 0..n {
                for j in 0..n {
                    sum[(i, j)] += m.entries[(i, j)];
                }
            }
        }
        Ok(DirectMatrix {
            factors: first.factors.clone(),
            entries: sum.scale(1.0 / matrices.len() as f64),
        })
    }

    /// Same judgments with factors reordered: new position `i` holds old factor `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> DirectMatrix {
        DirectMatrix {
            factors: perm.iter().map(|&i| self.factors[i].clone()).collect(),
            entries: self.entries.permuted(perm),
        }
    }

    /// Reads a matrix whose header row and first column carry factor labels.
    pub fn read_csv<R: Read>(reader: R) -> Result<DirectMatrix, DematelError> {
        let (factors, entries) = read_labeled_matrix_csv(reader).map_err(DematelError::Csv)?;
        DirectMatrix::new(factors, entries)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DematelError> {
        write_labeled_matrix_csv(writer, &self.factors, &self.entries).map_err(DematelError::Csv)
    }
}

/// Labeled square matrix CSV: blank (or any) corner cell, labels across the
/// header row, and each data row led by its label. Row and column labels
/// must agree in order.
pub fn read_labeled_matrix_csv<R: Read>(reader: R) -> Result<(Vec<String>, Matrix), String> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv.headers().map_err(|e| e.to_string())?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (line, record) in csv.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let row_label = record.get(0).unwrap_or("");
        if labels.get(line).map(String::as_str) != Some(row_label) {
            return Err(format!(
                "row {} is labeled {row_label:?} but column {} is {:?}",
                line + 2,
                line + 1,
                labels.get(line).map(String::as_str).unwrap_or("")
            ));
        }
        let values = record
            .iter()
            .skip(1)
            .map(|cell| {
                parse_ratio(cell)
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("row {}: {cell:?} is not a number", line + 2))
            })
            .collect::<Result<Vec<f64>, String>>()?;
        rows.push(values);
    }
    if rows.len() != labels.len() {
        return Err(format!("{} labels but {} data rows", labels.len(), rows.len()));
    }
    let matrix = Matrix::from_rows(&rows).map_err(|e| e.to_string())?;
    Ok((labels, matrix))
}

/// Accepts plain decimals and simple fractions such as `1/3`.
pub fn parse_ratio(cell: &str) -> Option<f64> {
    match cell.split_once('/') {
        Some((num, den)) => {
            let (num, den): (f64, f64) = (num.trim().parse().ok()?, den.trim().parse().ok()?);
            (den != 0.0).then(|| num / den)
        }
        None => cell.trim().parse().ok(),
    }
}

pub fn write_labeled_matrix_csv<W: Write>(writer: W, labels: &[String], matrix: &Matrix) -> Result<(), String> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    csv.write_record(&header).map_err(|e| e.to_string())?;
    for (i, label) in labels.iter().enumerate() {
        let mut record = vec![label.clone()];
        record.extend(matrix.row(i).iter().map(|v| v.to_string()));
        csv.write_record(&record).map_err(|e| e.to_string())?;
    }
    csv.flush().map_err(|e| e.to_string())
}

/// Total-relation matrix and the per-factor scores derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalRelation {
    pub factors: Vec<String>,
    pub t: Matrix,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub prominence: Vec<f64>,
    pub relation: Vec<f64>,
}

impl TotalRelation {
    fn from_t(factors: Vec<String>, t: Matrix) -> Self {
        let r = t.row_sums();
        let c = t.col_sums();
        let prominence = r.iter().zip(&c).map(|(a, b)| a + b).collect();
        let relation = r.iter().zip(&c).map(|(a, b)| a - b).collect();
        Self {
            factors,
            t,
            r,
            c,
            prominence,
            relation,
        }
    }

    /// Same scores with every entry of `T` multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_t(self.factors.clone(), self.t.scale(factor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Cause,
    Effect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorClass {
    pub factor: String,
    pub group: Group,
    pub prominence: f64,
    pub relation: f64,
    /// Relation is zero within tolerance; classified as effect by convention.
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEdge {
    pub from: String,
    pub to: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceDigraph {
    pub alpha: f64,
    pub edges: Vec<InfluenceEdge>,
}

/// Divides by the largest row sum so every entry lands in [0, 1].
pub fn normalize(d: &DirectMatrix) -> Result<Matrix, DematelError> {
    let s = d.entries.row_sums().into_iter().fold(0.0, f64::max);
    if s <= 0.0 {
        return Err(DematelError::AllZeroMatrix);
    }
    Ok(d.entries.scale(1.0 / s))
}

/// `T = N (I - N)^-1` with generic factor labels `F1..Fn`.
///
/// `I - N` is inverted first, so an exactly singular system reports
/// `Singular`; a non-singular system whose series would still diverge
/// (spectral radius of `|N|` at or above `1 - 1e-9`) reports `DivergentSeries`.
pub fn total_relation(n: &Matrix) -> Result<TotalRelation, DematelError> {
    if !n.is_square() {
        return Err(DematelError::NotSquare {
            rows: n.rows(),
            cols: n.cols(),
        });
    }
    let size = n.rows();
    let inverse = numerics::invert(&Matrix::identity(size).sub(n))?;
    let (lower, upper) = numerics::spectral_radius_bracket(n, SERIES_RADIUS_LIMIT, 1e-13, 200_000)?;
    if upper >= SERIES_RADIUS_LIMIT && (lower >= SERIES_RADIUS_LIMIT || (lower + upper) / 2.0 >= SERIES_RADIUS_LIMIT) {
        return Err(DematelError::DivergentSeries { lower_bound: lower });
    }
    let t = n.mul(&inverse);
    let factors = (1..=size).map(|i| format!("F{i}")).collect();
    Ok(TotalRelation::from_t(factors, t))
}

/// Splits factors into causes (positive relation) and effects.
pub fn classify(tr: &TotalRelation) -> Vec<FactorClass> {
    tr.factors
        .iter()
        .enumerate()
        .map(|(i, factor)| {
            let relation = tr.relation[i];
            let tie = relation.abs() <= RELATION_TIE_EPS;
            FactorClass {
                factor: factor.clone(),
                group: if relation > RELATION_TIE_EPS {
                    Group::Cause
                } else {
                    Group::Effect
                },
                prominence: tr.prominence[i],
                relation,
                tie,
            }
        })
        .collect()
}

/// Edges `(i, j)` with `t_ij > alpha`, heaviest first. `alpha` defaults to
/// the mean entry of `T`.
pub fn digraph(tr: &TotalRelation, alpha: Option<f64>) -> InfluenceDigraph {
    let alpha = alpha.unwrap_or_else(|| tr.t.mean());
    let n = tr.factors.len();
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let w = tr.t[(i, j)];
            if w > alpha {
                edges.push((i, j, w));
            }
        }
    }
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    InfluenceDigraph {
        alpha,
        edges: edges
            .into_iter()
            .map(|(i, j, weight)| InfluenceEdge {
                from: tr.factors[i].clone(),
                to: tr.factors[j].clone(),
                weight,
            })
            .collect(),
    }
}

/// Everything derived from one direct matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DematelAnalysis {
    pub direct: DirectMatrix,
    pub normalized: Matrix,
    pub total: TotalRelation,
    pub groups: Vec<FactorClass>,
    pub digraph: InfluenceDigraph,
}

/// Analysis settings. `scale` replaces the largest row sum as the
/// normalization divisor, e.g. to put several panels on one common scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DematelOptions {
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub scale: Option<f64>,
}

pub fn analyze(direct: DirectMatrix, alpha: Option<f64>) -> Result<DematelAnalysis, DematelError> {
    analyze_with(direct, &DematelOptions { alpha, scale: None })
}

pub fn analyze_with(direct: DirectMatrix, opts: &DematelOptions) -> Result<DematelAnalysis, DematelError> {
    let normalized = match opts.scale {
        None => normalize(&direct)?,
        Some(s) if s > 0.0 && s.is_finite() => {
            if direct.entries.max_abs() == 0.0 {
                return Err(DematelError::AllZeroMatrix);
            }
            direct.entries.scale(1.0 / s)
        }
        Some(s) => return Err(DematelError::InvalidScale(s)),
    };
    let mut total = total_relation(&normalized)?;
    total.factors = direct.factors.clone();
    let groups = classify(&total);
    let digraph = digraph(&total, opts.alpha);
    Ok(DematelAnalysis {
        direct,
        normalized,
        total,
        groups,
        digraph,
    })
}
