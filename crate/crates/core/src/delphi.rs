//! Multi-round expert elicitation.
//!
//! Round 1 groups free-text opinions into statements under facilitator-chosen
//! headings. Every later round collects agreement ratings on a 1-9 scale,
//! summarizes them (median, Tukey-hinge IQR, histogram, Kendall's W) and, from
//! round 3 on, shows the previous round's group response before re-rating.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RATING_MIN: i64 = 1;
pub const RATING_MAX: i64 = 9;
const HISTOGRAM_BINS: usize = (RATING_MAX - RATING_MIN + 1) as usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DelphiError {
    #[error("no opinions were supplied")]
    EmptyOpinionSet,
    #[error("opinion {index} has no heading assigned")]
    UnassignedOpinion { index: usize },
    #[error("round {round} is closed")]
    RoundClosed { round: u32 },
    #[error("round {round} does not exist")]
    RoundNotFound { round: u32 },
    #[error("round order violated: {0}")]
    RoundOrder(String),
    #[error("statement {statement} is not part of round {round}")]
    UnknownStatement { round: u32, statement: String },
    #[error("rating {rating} for statement {statement} is outside {RATING_MIN}..={RATING_MAX}")]
    RatingOutOfScale { statement: String, rating: i64 },
    #[error("response from {panelist} does not rate statement {statement}")]
    IncompleteResponse { panelist: String, statement: String },
    #[error("rank order is not a permutation: {0}")]
    InvalidRankOrder(String),
    #[error("unknown panelist {0:?}")]
    UnknownPanelist(String),
    #[error("round has no responses")]
    NoResponses,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed response CSV: {0}")]
    Csv(String),
}

/// Draft questionnaire statement produced from grouped opinions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub id: String,
    pub heading: String,
    pub text: String,
    /// The free-text opinions this statement was grouped from.
    pub source: String,
}

/// A Round 1 opinion and the heading the facilitator filed it under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opinion {
    pub text: String,
    #[serde(default)]
    pub heading: Option<String>,
}

impl Opinion {
    pub fn new(text: impl Into<String>, heading: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            heading: Some(heading.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: u32,
    pub status: RoundStatus,
    pub statements: Vec<String>,
    /// Group response of the previous round; present from round 3 on.
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub panelist_id: String,
    #[serde(default)]
    pub round_index: u32,
    pub ratings: BTreeMap<String, i64>,
    #[serde(default)]
    pub rank_order: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatementStats {
    pub statement_id: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Counts of ratings 1 through 9.
    pub histogram: [u32; HISTOGRAM_BINS],
}

/// Where a summary's concordance coefficient came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcordanceSource {
    RankOrders,
    Ratings,
    /// Fewer than two judges or two items; W is reported as 1.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round_index: u32,
    pub statements: Vec<StatementStats>,
    pub kendall_w: f64,
    pub w_source: ConcordanceSource,
    pub respondent_count: usize,
}

impl RoundSummary {
    pub fn stats(&self, statement_id: &str) -> Option<&StatementStats> {
        self.statements.iter().find(|s| s.statement_id == statement_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusPolicy {
    pub iqr_max: f64,
    pub w_min: f64,
    pub max_rounds: u32,
}

impl Default for ConsensusPolicy {
    fn default() -> Self {
        Self {
            iqr_max: 1.0,
            w_min: 0.7,
            max_rounds: 4,
        }
    }
}

impl ConsensusPolicy {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.w_min) && self.iqr_max >= 0.0 && self.max_rounds >= 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusDecision {
    ConsensusReached,
    RunAnotherRound,
    StoppedAtMaxRounds,
}

/// What a panelist sees about the previous round before re-rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub round_index: u32,
    pub entries: Vec<FeedbackEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub statement_id: String,
    pub median: f64,
    pub iqr: f64,
    pub histogram: [u32; HISTOGRAM_BINS],
}

/// Groups opinions into one statement per heading, ordered by heading.
///
/// `drafts` optionally maps a heading to the facilitator's drafted wording;
/// otherwise the heading itself is used as the statement text.
pub fn group_opinions(opinions: &[Opinion], drafts: &BTreeMap<String, String>) -> Result<Vec<Statement>, DelphiError> {
    if opinions.iter().all(|o| o.text.trim().is_empty()) {
        return Err(DelphiError::EmptyOpinionSet);
    }
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (index, opinion) in opinions.iter().enumerate() {
        if opinion.text.trim().is_empty() {
            continue;
        }
        let heading = opinion
            .heading
            .as_deref()
            .map(str::trim)
            .filter(|h| !h.is_empty())
            .ok_or(DelphiError::UnassignedOpinion { index })?;
        groups.entry(heading).or_default().push(opinion.text.trim());
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(i, (heading, texts))| Statement {
            id: format!("S{}", i + 1),
            heading: heading.to_string(),
            text: drafts.get(heading).cloned().unwrap_or_else(|| heading.to_string()),
            source: texts.join("\n"),
        })
        .collect())
}

/// Median and Tukey hinges of a sample.
///
/// Hinges are medians of the lower and upper halves; for odd counts the halves
/// exclude the overall median. A single value has both hinges equal to it.
pub fn tukey_hinges(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let median = median_sorted(&sorted);
    if n == 1 {
        return (median, median, median);
    }
    let half = n / 2;
    let lower = &sorted[..half];
    let upper = &sorted[n - half..];
    (median_sorted(lower), median, median_sorted(upper))
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Ranks with ties sharing the average rank. Larger `score` ranks first.
pub fn average_ranks_desc(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Kendall's coefficient of concordance for `m` judges ranking `n` items.
///
/// `rankings[j][i]` is judge `j`'s rank for item `i`. No tie correction is
/// applied; tied items should carry their average rank.
pub fn kendall_w(rankings: &[Vec<f64>]) -> Result<f64, DelphiError> {
    let m = rankings.len();
    if m < 2 {
        return Err(DelphiError::DimensionMismatch(format!(
            "need at least 2 rankings, got {m}"
        )));
    }
    let n = rankings[0].len();
    if n < 2 {
        return Err(DelphiError::DimensionMismatch(format!(
            "need at least 2 items, got {n}"
        )));
    }
    if let Some(bad) = rankings.iter().find(|r| r.len() != n) {
        return Err(DelphiError::DimensionMismatch(format!(
            "ranking of length {} among rankings of length {n}",
            bad.len()
        )));
    }
    let expected_total = (n * (n + 1)) as f64 / 2.0;
    for (j, ranking) in rankings.iter().enumerate() {
        let total: f64 = ranking.iter().sum();
        let in_range = ranking.iter().all(|&r| r >= 1.0 && r <= n as f64);
        if !in_range || (total - expected_total).abs() > 1e-9 {
            return Err(DelphiError::InvalidRankOrder(format!(
                "ranking {j} is not a ranking of 1..={n}"
            )));
        }
    }

    let (m_f, n_f) = (m as f64, n as f64);
    let mean_total = m_f * (n_f + 1.0) / 2.0;
    let s: f64 = (0..n)
        .map(|i| {
            let r: f64 = rankings.iter().map(|ranking| ranking[i]).sum();
            (r - mean_total).powi(2)
        })
        .sum();
    let w = 12.0 * s / (m_f * m_f * (n_f.powi(3) - n_f));
    Ok(w.clamp(0.0, 1.0))
}

/// Per-statement statistics and panel concordance for one round.
///
/// Statements are ordered by id (numeric-aware). Every response must rate the
/// same statement set.
pub fn summarize_round(responses: &[Response]) -> Result<RoundSummary, DelphiError> {
    let first = responses.first().ok_or(DelphiError::NoResponses)?;
    let round_index = first.round_index;
    if let Some(other) = responses.iter().find(|r| r.round_index != round_index) {
        return Err(DelphiError::DimensionMismatch(format!(
            "responses from rounds {round_index} and {} mixed",
            other.round_index
        )));
    }
    let mut ids: Vec<&String> = first.ratings.keys().collect();
    ids.sort_by(|a, b| natural_cmp(a, b));
    for r in responses {
        if r.ratings.len() != ids.len() || ids.iter().any(|id| !r.ratings.contains_key(*id)) {
            return Err(DelphiError::DimensionMismatch(format!(
                "response from {} rates a different statement set",
                r.panelist_id
            )));
        }
    }

    let mut statements = Vec::with_capacity(ids.len());
    for id in &ids {
        let values: Vec<f64> = responses.iter().map(|r| r.ratings[*id] as f64).collect();
        let (q1, median, q3) = tukey_hinges(&values);
        let mut histogram = [0u32; HISTOGRAM_BINS];
        for r in responses {
            let rating = r.ratings[*id];
            if !(RATING_MIN..=RATING_MAX).contains(&rating) {
                return Err(DelphiError::RatingOutOfScale {
                    statement: (*id).clone(),
                    rating,
                });
            }
            histogram[(rating - RATING_MIN) as usize] += 1;
        }
        statements.push(StatementStats {
            statement_id: (*id).clone(),
            median,
            q1,
            q3,
            iqr: q3 - q1,
            histogram,
        });
    }

    let index_of: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let ranked: Vec<&Response> = responses.iter().filter(|r| r.rank_order.is_some()).collect();
    let (kendall, w_source) = if ids.len() < 2 || responses.len() < 2 {
        (1.0, ConcordanceSource::Degenerate)
    } else if ranked.len() >= 2 {
        let rankings = ranked
            .iter()
            .map(|r| ranks_from_order(r.rank_order.as_deref().unwrap_or_default(), &index_of))
            .collect::<Result<Vec<_>, _>>()?;
        (kendall_w(&rankings)?, ConcordanceSource::RankOrders)
    } else {
        let rankings: Vec<Vec<f64>> = responses
            .iter()
            .map(|r| {
                let scores: Vec<f64> = ids.iter().map(|id| r.ratings[*id] as f64).collect();
                average_ranks_desc(&scores)
            })
            .collect();
        (kendall_w(&rankings)?, ConcordanceSource::Ratings)
    };

    Ok(RoundSummary {
        round_index,
        statements,
        kendall_w: kendall,
        w_source,
        respondent_count: responses.len(),
    })
}

fn ranks_from_order(order: &[String], index_of: &BTreeMap<&str, usize>) -> Result<Vec<f64>, DelphiError> {
    if order.len() != index_of.len() {
        return Err(DelphiError::InvalidRankOrder(format!(
            "rank order lists {} statements, expected {}",
            order.len(),
            index_of.len()
        )));
    }
    let mut ranks = vec![0.0; order.len()];
    for (pos, id) in order.iter().enumerate() {
        let idx = *index_of
            .get(id.as_str())
            .ok_or_else(|| DelphiError::InvalidRankOrder(format!("unknown statement {id} in rank order")))?;
        if ranks[idx] != 0.0 {
            return Err(DelphiError::InvalidRankOrder(format!("statement {id} repeated")));
        }
        ranks[idx] = (pos + 1) as f64;
    }
    Ok(ranks)
}

/// Consensus requires both the concordance floor and every IQR within bound.
pub fn evaluate_consensus(summary: &RoundSummary, policy: &ConsensusPolicy, round_index: u32) -> ConsensusDecision {
    let concordant = summary.kendall_w >= policy.w_min;
    let tight = summary.statements.iter().all(|s| s.iqr <= policy.iqr_max);
    if round_index >= 2 && concordant && tight {
        ConsensusDecision::ConsensusReached
    } else if round_index >= policy.max_rounds {
        ConsensusDecision::StoppedAtMaxRounds
    } else {
        ConsensusDecision::RunAnotherRound
    }
}

pub fn build_feedback(summary: &RoundSummary) -> Feedback {
    Feedback {
        round_index: summary.round_index,
        entries: summary
            .statements
            .iter()
            .map(|s| FeedbackEntry {
                statement_id: s.statement_id.clone(),
                median: s.median,
                iqr: s.iqr,
                histogram: s.histogram,
            })
            .collect(),
    }
}

/// Orders identifiers like `S2` before `S10`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let digits = s.len() - s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        let (prefix, num) = s.split_at(s.len() - digits);
        (prefix, num.parse().ok())
    }
    let (pa, na) = split(a);
    let (pb, nb) = split(b);
    pa.cmp(pb).then(na.cmp(&nb)).then(a.cmp(b))
}

/// Acknowledgement returned for a stored response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub round_index: u32,
    pub panelist_id: String,
    /// True when an earlier response from the same panelist was replaced.
    pub replaced: bool,
    pub stored_responses: usize,
}

/// Delphi panel state: statements, rounds and the responses per round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Panel {
    pub statements: Vec<Statement>,
    pub rounds: Vec<Round>,
    pub responses: BTreeMap<u32, BTreeMap<String, Response>>,
    /// Opaque panelist tokens; when non-empty, only these may respond.
    #[serde(default)]
    pub tokens: Vec<String>,
    pub policy: ConsensusPolicy,
}

impl Panel {
    pub fn new(policy: ConsensusPolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    pub fn round(&self, index: u32) -> Result<&Round, DelphiError> {
        self.rounds
            .iter()
            .find(|r| r.index == index)
            .ok_or(DelphiError::RoundNotFound { round: index })
    }

    pub fn statement(&self, id: &str) -> Option<&Statement> {
        self.statements.iter().find(|s| s.id == id)
    }

    pub fn current_round(&self) -> Option<&Round> {
        self.rounds.last()
    }

    /// Round 1: draft statements from grouped opinions. Round 1 itself
    /// carries no ratings, so it is closed immediately.
    pub fn open_first_round(
        &mut self,
        opinions: &[Opinion],
        drafts: &BTreeMap<String, String>,
    ) -> Result<&Round, DelphiError> {
        if !self.rounds.is_empty() {
            return Err(DelphiError::RoundOrder("round 1 already exists".into()));
        }
        let statements = group_opinions(opinions, drafts)?;
        self.rounds.push(Round {
            index: 1,
            status: RoundStatus::Closed,
            statements: statements.iter().map(|s| s.id.clone()).collect(),
            feedback: None,
        });
        self.statements = statements;
        Ok(self.rounds.last().expect("just pushed"))
    }

    /// Closes the current round and opens the next rating round.
    pub fn open_next_round(&mut self) -> Result<&Round, DelphiError> {
        let current = self
            .rounds
            .last()
            .ok_or_else(|| DelphiError::RoundOrder("round 1 (opinion grouping) has not been run".into()))?;
        let next_index = current.index + 1;
        if next_index > self.policy.max_rounds {
            return Err(DelphiError::RoundOrder(format!(
                "round {next_index} exceeds the maximum of {} rounds",
                self.policy.max_rounds
            )));
        }
        let feedback = if next_index >= 3 {
            Some(build_feedback(&self.summary(current.index)?))
        } else {
            None
        };
        let statements = self.statements.iter().map(|s| s.id.clone()).collect();
        if let Some(last) = self.rounds.last_mut() {
            last.status = RoundStatus::Closed;
        }
        self.rounds.push(Round {
            index: next_index,
            status: RoundStatus::Open,
            statements,
            feedback,
        });
        Ok(self.rounds.last().expect("just pushed"))
    }

    pub fn close_round(&mut self, index: u32) -> Result<(), DelphiError> {
        let round = self
            .rounds
            .iter_mut()
            .find(|r| r.index == index)
            .ok_or(DelphiError::RoundNotFound { round: index })?;
        round.status = RoundStatus::Closed;
        Ok(())
    }

    pub fn issue_token(&mut self) -> String {
        let token = uuid::Uuid::new_v4().simple().to_string();
        self.tokens.push(token.clone());
        token
    }

    /// Checks a response against an open round without storing it.
    pub fn check_response(&self, round_index: u32, response: &Response) -> Result<(), DelphiError> {
        let round = self.round(round_index)?;
        if round.status == RoundStatus::Closed {
            return Err(DelphiError::RoundClosed { round: round_index });
        }
        if response.round_index != 0 && response.round_index != round_index {
            return Err(DelphiError::DimensionMismatch(format!(
                "response is tagged for round {} but was submitted to round {round_index}",
                response.round_index
            )));
        }
        let panelist = response.panelist_id.trim();
        if panelist.is_empty() || (!self.tokens.is_empty() && !self.tokens.iter().any(|t| t == panelist)) {
            return Err(DelphiError::UnknownPanelist(response.panelist_id.clone()));
        }
        let in_round: BTreeSet<&str> = round.statements.iter().map(String::as_str).collect();
        for (statement, &rating) in &response.ratings {
            if !in_round.contains(statement.as_str()) {
                return Err(DelphiError::UnknownStatement {
                    round: round_index,
                    statement: statement.clone(),
                });
            }
            if !(RATING_MIN..=RATING_MAX).contains(&rating) {
                return Err(DelphiError::RatingOutOfScale {
                    statement: statement.clone(),
                    rating,
                });
            }
        }
        if let Some(missing) = round.statements.iter().find(|s| !response.ratings.contains_key(*s)) {
            return Err(DelphiError::IncompleteResponse {
                panelist: response.panelist_id.clone(),
                statement: missing.clone(),
            });
        }
        if let Some(order) = &response.rank_order {
            let mut seen = BTreeSet::new();
            for id in order {
                if !in_round.contains(id.as_str()) {
                    return Err(DelphiError::UnknownStatement {
                        round: round_index,
                        statement: id.clone(),
                    });
                }
                if !seen.insert(id.as_str()) {
                    return Err(DelphiError::InvalidRankOrder(format!("statement {id} repeated")));
                }
            }
            if seen.len() != in_round.len() {
                return Err(DelphiError::InvalidRankOrder(format!(
                    "rank order lists {} of {} statements",
                    seen.len(),
                    in_round.len()
                )));
            }
        }
        Ok(())
    }

    /// Stores a response; a resubmission by the same panelist replaces the old one.
    pub fn submit_response(&mut self, round_index: u32, mut response: Response) -> Result<Ack, DelphiError> {
        self.check_response(round_index, &response)?;
        response.round_index = round_index;
        response.panelist_id = response.panelist_id.trim().to_string();
        let panelist_id = response.panelist_id.clone();
        let stored = self.responses.entry(round_index).or_default();
        let replaced = stored.insert(panelist_id.clone(), response).is_some();
        Ok(Ack {
            round_index,
            panelist_id,
            replaced,
            stored_responses: stored.len(),
        })
    }

    /// Validates every response first, then stores all of them.
    pub fn import_responses(&mut self, round_index: u32, responses: Vec<Response>) -> Result<Vec<Ack>, DelphiError> {
        for r in &responses {
            self.check_response(round_index, r)?;
        }
        responses
            .into_iter()
            .map(|r| self.submit_response(round_index, r))
            .collect()
    }

    pub fn responses_for(&self, round_index: u32) -> Vec<Response> {
        self.responses
            .get(&round_index)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn summary(&self, round_index: u32) -> Result<RoundSummary, DelphiError> {
        self.round(round_index)?;
        summarize_round(&self.responses_for(round_index))
    }

    pub fn decision(&self, round_index: u32) -> Result<(RoundSummary, ConsensusDecision), DelphiError> {
        if round_index < 2 {
            return Err(DelphiError::RoundOrder("round 1 collects opinions, not ratings".into()));
        }
        let summary = self.summary(round_index)?;
        let decision = evaluate_consensus(&summary, &self.policy, round_index);
        Ok((summary, decision))
    }

    /// Latest rating round (index >= 2), if any.
    pub fn latest_rating_round(&self) -> Option<u32> {
        self.rounds.iter().rev().map(|r| r.index).find(|&i| i >= 2)
    }
}

/// Reads `panelist_id,statement_id,rating` rows (header required) into one
/// response per panelist. Rating range is checked on submission, not here.
pub fn parse_responses_csv<R: Read>(reader: R, round_index: u32) -> Result<Vec<Response>, DelphiError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers().map_err(|e| DelphiError::Csv(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| DelphiError::Csv(format!("missing column {name}")))
    };
    let (p_col, s_col, r_col) = (column("panelist_id")?, column("statement_id")?, column("rating")?);

    let mut by_panelist: BTreeMap<String, Response> = BTreeMap::new();
    for (line, record) in csv.records().enumerate() {
        let record = record.map_err(|e| DelphiError::Csv(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let (panelist, statement, rating_text) = (field(p_col), field(s_col), field(r_col));
        let rating: i64 = rating_text
            .parse()
            .map_err(|_| DelphiError::Csv(format!("row {}: rating {rating_text:?} is not an integer", line + 2)))?;
        let response = by_panelist.entry(panelist.clone()).or_insert_with(|| Response {
            panelist_id: panelist.clone(),
            round_index,
            ratings: BTreeMap::new(),
            rank_order: None,
        });
        if response.ratings.insert(statement.clone(), rating).is_some() {
            return Err(DelphiError::Csv(format!(
                "row {}: duplicate rating of {statement} by {panelist}",
                line + 2
            )));
        }
    }
    Ok(by_panelist.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn response(panelist: &str, ratings: &[(&str, i64)]) -> Response {
        Response {
            panelist_id: panelist.into(),
            round_index: 2,
            ratings: ratings.iter().map(|(s, r)| (s.to_string(), *r)).collect(),
            rank_order: None,
        }
    }

    fn panel_with_round2(statements: usize) -> Panel {
        let opinions: Vec<Opinion> = (0..statements)
            .map(|i| Opinion::new(format!("opinion {i}"), format!("heading {i}")))
            .collect();
        let mut panel = Panel::new(ConsensusPolicy::default());
        panel.open_first_round(&opinions, &BTreeMap::new()).unwrap();
        panel.open_next_round().unwrap();
        panel
    }

    #[test]
    fn groups_by_heading() {
        let opinions = vec![
            Opinion::new("more R&D funding", "Funding"),
            Opinion::new("open data portals", "Data"),
            Opinion::new("tax credits", "Funding"),
            Opinion::new("shared indicators", "Data"),
        ];
        let statements = group_opinions(&opinions, &BTreeMap::new()).unwrap();
        assert_eq!(statements.len(), 2);
        assert_eq!(statements[0].heading, "Data");
        assert_eq!(statements[1].heading, "Funding");
        assert_eq!(statements[1].source, "more R&D funding\ntax credits");
        assert_eq!(statements[0].id, "S1");
    }

    #[test]
    fn single_opinion_source_is_identity() {
        let statements = group_opinions(&[Opinion::new("only one", "H")], &BTreeMap::new()).unwrap();
        assert_eq!(statements.len(), 1);
        assert_eq!(statements[0].source, "only one");
    }

    #[test]
    fn grouping_errors() {
        assert_eq!(group_opinions(&[], &BTreeMap::new()), Err(DelphiError::EmptyOpinionSet));
        let opinions = vec![
            Opinion::new("a", "H"),
            Opinion {
                text: "b".into(),
                heading: None,
            },
        ];
        assert_eq!(
            group_opinions(&opinions, &BTreeMap::new()),
            Err(DelphiError::UnassignedOpinion { index: 1 })
        );
    }

    #[test]
    fn drafts_override_statement_text() {
        let drafts = BTreeMap::from([("H".to_string(), "Drafted wording".to_string())]);
        let statements = group_opinions(&[Opinion::new("x", "H")], &drafts).unwrap();
        assert_eq!(statements[0].text, "Drafted wording");
    }

    #[test]
    fn stores_valid_response() {
        let mut panel = panel_with_round2(5);
        let ratings: Vec<(String, i64)> = (1..=5).map(|i| (format!("S{i}"), 5)).collect();
        let r = Response {
            panelist_id: "p1".into(),
            round_index: 0,
            ratings: ratings.into_iter().collect(),
            rank_order: None,
        };
        let ack = panel.submit_response(2, r).unwrap();
        assert!(!ack.replaced);
        assert_eq!(panel.responses_for(2).len(), 1);
    }

    #[test]
    fn rejects_rating_out_of_scale() {
        let mut panel = panel_with_round2(1);
        let err = panel.submit_response(2, response("p1", &[("S1", 10)])).unwrap_err();
        assert!(matches!(err, DelphiError::RatingOutOfScale { rating: 10, .. }));
        let err = panel.submit_response(2, response("p1", &[("S1", 0)])).unwrap_err();
        assert!(matches!(err, DelphiError::RatingOutOfScale { rating: 0, .. }));
    }

    #[test]
    fn resubmission_replaces() {
        let mut panel = panel_with_round2(1);
        panel.submit_response(2, response("p1", &[("S1", 3)])).unwrap();
        let ack = panel.submit_response(2, response("p1", &[("S1", 8)])).unwrap();
        assert!(ack.replaced);
        let stored = panel.responses_for(2);
        assert_eq!(stored.len(), 1);
        assert_eq!(stored[0].ratings["S1"], 8);
    }

    #[test]
    fn submission_errors() {
        let mut panel = panel_with_round2(2);
        assert!(matches!(
            panel.submit_response(1, response("p1", &[("S1", 3), ("S2", 3)])),
            Err(DelphiError::RoundClosed { round: 1 })
        ));
        assert!(matches!(
            panel.submit_response(7, response("p1", &[("S1", 3)])),
            Err(DelphiError::RoundNotFound { round: 7 })
        ));
        assert!(matches!(
            panel.submit_response(2, response("p1", &[("S1", 3), ("S9", 3)])),
            Err(DelphiError::UnknownStatement { .. })
        ));
        assert!(matches!(
            panel.submit_response(2, response("p1", &[("S1", 3)])),
            Err(DelphiError::IncompleteResponse { .. })
        ));
        let mut r = response("p1", &[("S1", 3), ("S2", 3)]);
        r.rank_order = Some(vec!["S1".into(), "S1".into()]);
        assert!(matches!(
            panel.submit_response(2, r),
            Err(DelphiError::InvalidRankOrder(_))
        ));
        assert!(matches!(
            panel.submit_response(2, response(" ", &[("S1", 3), ("S2", 3)])),
            Err(DelphiError::UnknownPanelist(_))
        ));
    }

    #[test]
    fn issued_tokens_gate_submissions() {
        let mut panel = panel_with_round2(1);
        let token = panel.issue_token();
        assert!(matches!(
            panel.submit_response(2, response("stranger", &[("S1", 3)])),
            Err(DelphiError::UnknownPanelist(_))
        ));
        panel.submit_response(2, response(&token, &[("S1", 3)])).unwrap();
    }

    #[test]
    fn import_is_all_or_nothing() {
        let mut panel = panel_with_round2(1);
        let batch = vec![response("p1", &[("S1", 3)]), response("p2", &[("S1", 12)])];
        assert!(panel.import_responses(2, batch).is_err());
        assert!(panel.responses_for(2).is_empty());
    }

    #[test]
    fn unanimous_statement_has_zero_iqr() {
        let responses: Vec<Response> = (0..4).map(|i| response(&format!("p{i}"), &[("S1", 7)])).collect();
        let summary = summarize_round(&responses).unwrap();
        let s = &summary.statements[0];
        assert_eq!((s.median, s.iqr), (7.0, 0.0));
        assert_eq!(s.histogram[6], 4);
    }

    #[test]
    fn tukey_hinges_odd_count() {
        // lower half [2,4] -> 3, upper half [5,7] -> 6
        assert_eq!(tukey_hinges(&[2.0, 4.0, 4.0, 5.0, 7.0]), (3.0, 4.0, 6.0));
        let responses: Vec<Response> = [2, 4, 4, 5, 7]
            .iter()
            .enumerate()
            .map(|(i, &v)| response(&format!("p{i}"), &[("S1", v)]))
            .collect();
        let s = &summarize_round(&responses).unwrap().statements[0];
        assert_eq!((s.median, s.q1, s.q3, s.iqr), (4.0, 3.0, 6.0, 3.0));
    }

    #[test]
    fn tukey_hinges_even_and_tiny() {
        assert_eq!(tukey_hinges(&[1.0, 2.0, 3.0, 4.0]), (1.5, 2.5, 3.5));
        assert_eq!(tukey_hinges(&[5.0]), (5.0, 5.0, 5.0));
        assert_eq!(tukey_hinges(&[3.0, 8.0]), (3.0, 5.5, 8.0));
    }

    #[test]
    fn summary_requires_responses() {
        assert_eq!(summarize_round(&[]), Err(DelphiError::NoResponses));
    }

    #[test]
    fn identical_rank_orders_give_full_concordance() {
        let order: Vec<String> = ["S2", "S1", "S4", "S3"].iter().map(|s| s.to_string()).collect();
        let responses: Vec<Response> = (0..3)
            .map(|i| {
                let mut r = response(&format!("p{i}"), &[("S1", 5), ("S2", 5), ("S3", 5), ("S4", 5)]);
                r.rank_order = Some(order.clone());
                r
            })
            .collect();
        let summary = summarize_round(&responses).unwrap();
        assert_eq!(summary.kendall_w, 1.0);
        assert_eq!(summary.w_source, ConcordanceSource::RankOrders);
    }

    #[test]
    fn kendall_examples() {
        let same = vec![vec![1.0, 2.0, 3.0, 4.0]; 3];
        assert_eq!(kendall_w(&same).unwrap(), 1.0);
        let reversed = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert_eq!(kendall_w(&reversed).unwrap(), 0.0);
        // rank totals (4,5,9), mean 6, S = 14
        let mixed = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 3.0]];
        assert!((kendall_w(&mixed).unwrap() - 168.0 / 216.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_dimension_errors() {
        assert!(matches!(
            kendall_w(&[vec![1.0, 2.0]]),
            Err(DelphiError::DimensionMismatch(_))
        ));
        assert!(matches!(
            kendall_w(&[vec![1.0, 2.0], vec![1.0, 2.0, 3.0]]),
            Err(DelphiError::DimensionMismatch(_))
        ));
        assert!(matches!(
            kendall_w(&[vec![1.0, 1.0], vec![1.0, 2.0]]),
            Err(DelphiError::InvalidRankOrder(_))
        ));
    }

    #[test]
    fn ratings_to_average_ranks() {
        assert_eq!(average_ranks_desc(&[9.0, 5.0, 5.0, 1.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn consensus_decisions() {
        let summary = |w: f64, iqr: f64| RoundSummary {
            round_index: 2,
            statements: vec![StatementStats {
                statement_id: "S1".into(),
                median: 7.0,
                q1: 7.0,
                q3: 7.0 + iqr,
                iqr,
                histogram: [0; 9],
            }],
            kendall_w: w,
            w_source: ConcordanceSource::Ratings,
            respondent_count: 3,
        };
        let policy = ConsensusPolicy::default();
        assert_eq!(
            evaluate_consensus(&summary(1.0, 0.0), &policy, 2),
            ConsensusDecision::ConsensusReached
        );
        assert_eq!(
            evaluate_consensus(&summary(0.3, 0.0), &policy, 2),
            ConsensusDecision::RunAnotherRound
        );
        assert_eq!(
            evaluate_consensus(&summary(0.3, 0.0), &policy, 4),
            ConsensusDecision::StoppedAtMaxRounds
        );
        assert_eq!(
            evaluate_consensus(&summary(0.9, 2.0), &policy, 2),
            ConsensusDecision::RunAnotherRound
        );
    }

    #[test]
    fn feedback_payload() {
        let responses: Vec<Response> = (0..3)
            .map(|i| response(&format!("p{i}"), &[("S1", 7), ("S2", 3 + i), ("S3", 5)]))
            .collect();
        let summary = summarize_round(&responses).unwrap();
        let feedback = build_feedback(&summary);
        assert_eq!(feedback.entries.len(), 3);
        let json = serde_json::to_string(&feedback).unwrap();
        assert_eq!(serde_json::from_str::<Feedback>(&json).unwrap(), feedback);

        let empty = RoundSummary {
            round_index: 2,
            statements: vec![],
            kendall_w: 1.0,
            w_source: ConcordanceSource::Degenerate,
            respondent_count: 0,
        };
        assert!(build_feedback(&empty).entries.is_empty());
    }

    #[test]
    fn round_three_carries_feedback() {
        let mut panel = panel_with_round2(2);
        assert!(panel.round(2).unwrap().feedback.is_none());
        assert!(matches!(panel.open_next_round(), Err(DelphiError::NoResponses)));
        panel
            .submit_response(2, response("p1", &[("S1", 4), ("S2", 6)]))
            .unwrap();
        let round3 = panel.open_next_round().unwrap().clone();
        assert_eq!(round3.index, 3);
        assert_eq!(round3.feedback.unwrap().entries.len(), 2);
        assert_eq!(panel.round(2).unwrap().status, RoundStatus::Closed);
    }

    #[test]
    fn round_limits() {
        let mut panel = Panel::new(ConsensusPolicy::default());
        assert!(matches!(panel.open_next_round(), Err(DelphiError::RoundOrder(_))));
        let mut panel = panel_with_round2(1);
        assert!(matches!(
            panel.open_first_round(&[Opinion::new("x", "y")], &BTreeMap::new()),
            Err(DelphiError::RoundOrder(_))
        ));
        for round in 2..4 {
            let untagged = Response {
                round_index: 0,
                ..response("p1", &[("S1", 5)])
            };
            panel.submit_response(round, untagged).unwrap();
            panel.open_next_round().unwrap();
        }
        assert_eq!(panel.current_round().unwrap().index, 4);
        let tagged = Response {
            round_index: 4,
            ..response("p1", &[("S1", 5)])
        };
        panel.submit_response(4, tagged).unwrap();
        assert!(matches!(panel.open_next_round(), Err(DelphiError::RoundOrder(_))));
    }

    #[test]
    fn csv_import() {
        let data = "panelist_id,statement_id,rating\np1,S1,7\np1,S2,3\np2,S1,6\np2,S2,4\n";
        let responses = parse_responses_csv(data.as_bytes(), 2).unwrap();
        assert_eq!(responses.len(), 2);
        assert_eq!(responses[0].ratings["S2"], 3);

        let bad = "panelist_id,statement_id,rating\np1,S1,high\n";
        assert!(matches!(
            parse_responses_csv(bad.as_bytes(), 2),
            Err(DelphiError::Csv(_))
        ));
        let missing = "panelist,statement_id,rating\np1,S1,3\n";
        assert!(matches!(
            parse_responses_csv(missing.as_bytes(), 2),
            Err(DelphiError::Csv(_))
        ));
    }

    #[test]
    fn natural_ordering() {
        let mut ids = vec!["S10", "S2", "S1"];
        ids.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(ids, vec!["S1", "S2", "S10"]);
    }
}
