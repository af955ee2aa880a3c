//! Project stage machine and file-backed project store.
//!
//! The four phases are checkpointed as six stages:
//!
//! | phase                         | stage reached          | evidence                             |
//! |-------------------------------|------------------------|--------------------------------------|
//! | 1. national requirements      | `RequirementsElicited` | Delphi consensus (or logged override) |
//! | 2. gaps and cause-effect      | `GapsIdentified`       | gap report + DEMATEL analysis        |
//! | 3. tool prioritization        | `ToolsPrioritized`     | consistent AHP synthesis             |
//! | 4. scorecard and simulation   | `ScorecardConstructed` | validated scorecard                  |
//! |                               | `SimulationReady`      | compiled stock-flow model            |
//!
//! Every phase edits a mutable workspace until its stage is reached; the
//! evidence is then frozen into the project's artifacts and the audit log.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ahp::{
    self, AhpError, Hierarchy, PairwiseMatrix, PriorityOptions, PriorityResult, Synthesis, SynthesisOptions,
};
use crate::delphi::{
    natural_cmp, Ack, ConsensusDecision, ConsensusPolicy, Opinion, Panel, Response, Round, RoundSummary, RATING_MAX,
    RATING_MIN,
};
use crate::dematel::{self, DematelAnalysis, DematelOptions, DirectMatrix};
use crate::error::{Error, ErrorCode, Result};
use crate::numerics::{DEFAULT_EIGEN_MAX_ITER, DEFAULT_EIGEN_TOL};
use crate::scorecard::{self, CausalLink, GapReport, Indicator, Requirement, Scorecard, ValidationReport};
use crate::sdm::{self, CompileOptions, Scenario, ScenarioLimits, SdmError, SdmModel, Trajectory};

pub const SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_LEASE_TIMEOUT: Duration = Duration::from_secs(5);
/// Statements whose final median reaches this become requirements.
pub const DEFAULT_REQUIREMENT_FLOOR: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("national goal must not be empty")]
    EmptyGoal,
    #[error("stage {expected} cannot be reached with {got}")]
    WrongEvidence { expected: String, got: String },
    #[error("out of order: {0}")]
    OutOfOrder(String),
    #[error("Delphi round {round} did not reach consensus ({decision:?})")]
    ConsensusNotReached { round: u32, decision: ConsensusDecision },
    #[error("need at least 2 criteria (requirements), got {0}")]
    TooFewCriteria(usize),
    #[error("need at least 2 alternatives (policy tools), got {0}")]
    TooFewAlternatives(usize),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("corrupt project file {path}: {message}")]
    CorruptFile {
        path: String,
        found: Option<u64>,
        expected: u64,
        message: String,
    },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("project {project} is locked by another writer (waited {waited_ms} ms)")]
    LeaseHeld { project: String, waited_ms: u64 },
    #[error("malformed input: {0}")]
    MalformedInput(String),
}

impl PipelineError {
    pub fn code(&self) -> ErrorCode {
        match self {
            PipelineError::EmptyGoal => ErrorCode::EmptyGoal,
            PipelineError::WrongEvidence { .. } => ErrorCode::WrongEvidence,
            PipelineError::OutOfOrder(_) => ErrorCode::OutOfOrder,
            PipelineError::ConsensusNotReached { .. } => ErrorCode::ConsensusNotReached,
            PipelineError::TooFewCriteria(_) => ErrorCode::TooFewCriteria,
            PipelineError::TooFewAlternatives(_) => ErrorCode::TooFewAlternatives,
            PipelineError::NotFound(_) => ErrorCode::NotFound,
            PipelineError::CorruptFile { .. } => ErrorCode::CorruptFile,
            PipelineError::Io(_) => ErrorCode::Io,
            PipelineError::LeaseHeld { .. } => ErrorCode::LeaseHeld,
            PipelineError::MalformedInput(_) => ErrorCode::MalformedInput,
        }
    }
}

fn io_error(context: &str, e: io::Error) -> Error {
    PipelineError::Io(format!("{context}: {e}")).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    GoalDefined,
    RequirementsElicited,
    GapsIdentified,
    ToolsPrioritized,
    ScorecardConstructed,
    SimulationReady,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GoalDefined,
        Stage::RequirementsElicited,
        Stage::GapsIdentified,
        Stage::ToolsPrioritized,
        Stage::ScorecardConstructed,
        Stage::SimulationReady,
    ];

    pub fn next(self) -> Option<Stage> {
        let i = Stage::ALL.iter().position(|&s| s == self)?;
        Stage::ALL.get(i + 1).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GoalDefined => "GoalDefined",
            Stage::RequirementsElicited => "RequirementsElicited",
            Stage::GapsIdentified => "GapsIdentified",
            Stage::ToolsPrioritized => "ToolsPrioritized",
            Stage::ScorecardConstructed => "ScorecardConstructed",
            Stage::SimulationReady => "SimulationReady",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Tunables stored with each project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub cr_threshold: f64,
    pub eigen_tol: f64,
    pub eigen_max_iter: usize,
    /// Minimum final median (1-9) for a statement to become a requirement.
    pub requirement_floor: f64,
    pub compile: CompileOptions,
    pub limits: ScenarioLimits,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            cr_threshold: ahp::DEFAULT_CR_THRESHOLD,
            eigen_tol: DEFAULT_EIGEN_TOL,
            eigen_max_iter: DEFAULT_EIGEN_MAX_ITER,
            requirement_floor: DEFAULT_REQUIREMENT_FLOOR,
            compile: CompileOptions::default(),
            limits: ScenarioLimits::default(),
        }
    }
}

impl Settings {
    pub fn priority_options(&self) -> PriorityOptions {
        PriorityOptions {
            tol: self.eigen_tol,
            max_iter: self.eigen_max_iter,
            cr_threshold: self.cr_threshold,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = self.cr_threshold > 0.0
            && self.eigen_tol > 0.0
            && self.eigen_max_iter >= 1
            && (RATING_MIN as f64..=RATING_MAX as f64).contains(&self.requirement_floor)
            && self.limits.max_horizon > 0.0
            && self.limits.min_dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PipelineError::MalformedInput("settings out of range".into()).into())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedRun {
    pub id: String,
    pub scenario: Scenario,
    pub trajectory: Trajectory,
}

/// Editable inputs of every phase.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Workspace {
    pub panel: Panel,
    pub requirements: Vec<Requirement>,
    pub indicators: Vec<Indicator>,
    pub dematel: Option<DematelAnalysis>,
    pub tools: Vec<String>,
    pub hierarchy: Option<Hierarchy>,
    pub scorecard: Option<Scorecard>,
    pub model: Option<SdmModel>,
    pub runs: Vec<SavedRun>,
}

/// What the facilitator asks to use as evidence; resolved against the workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceRequest {
    /// The decision of a rating round; defaults to the latest one.
    DelphiConsensus {
        #[serde(default)]
        round: Option<u32>,
    },
    FacilitatorOverride {
        reason: String,
    },
    Gaps,
    AhpRanking,
    Scorecard,
    SdmModel,
}

impl EvidenceRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            EvidenceRequest::DelphiConsensus { .. } => "delphi_consensus",
            EvidenceRequest::FacilitatorOverride { .. } => "facilitator_override",
            EvidenceRequest::Gaps => "gaps",
            EvidenceRequest::AhpRanking => "ahp_ranking",
            EvidenceRequest::Scorecard => "scorecard",
            EvidenceRequest::SdmModel => "sdm_model",
        }
    }

    pub fn produces(&self) -> Stage {
        match self {
            EvidenceRequest::DelphiConsensus { .. } | EvidenceRequest::FacilitatorOverride { .. } => {
                Stage::RequirementsElicited
            }
            EvidenceRequest::Gaps => Stage::GapsIdentified,
            EvidenceRequest::AhpRanking => Stage::ToolsPrioritized,
            EvidenceRequest::Scorecard => Stage::ScorecardConstructed,
            EvidenceRequest::SdmModel => Stage::SimulationReady,
        }
    }
}

/// Body of an advance call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceRequest {
    pub evidence: EvidenceRequest,
    /// Stage the caller expects to reach; rejected unless it is the next one.
    #[serde(default)]
    pub target: Option<Stage>,
}

/// Frozen evidence recorded with a stage transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    DelphiConsensus {
        round: u32,
        summary: RoundSummary,
        decision: ConsensusDecision,
        requirements: Vec<Requirement>,
    },
    FacilitatorOverride {
        reason: String,
        round: Option<u32>,
        summary: Option<RoundSummary>,
        requirements: Vec<Requirement>,
    },
    Gaps {
        report: GapReport,
        dematel: DematelAnalysis,
    },
    AhpRanking {
        hierarchy: Hierarchy,
        synthesis: Synthesis,
    },
    Scorecard {
        scorecard: Scorecard,
        validation: ValidationReport,
    },
    SdmModel {
        model: SdmModel,
    },
}

impl Evidence {
    pub fn kind(&self) -> &'static str {
        match self {
            Evidence::DelphiConsensus { .. } => "delphi_consensus",
            Evidence::FacilitatorOverride { .. } => "facilitator_override",
            Evidence::Gaps { .. } => "gaps",
            Evidence::AhpRanking { .. } => "ahp_ranking",
            Evidence::Scorecard { .. } => "scorecard",
            Evidence::SdmModel { .. } => "sdm_model",
        }
    }

    pub fn produces(&self) -> Stage {
        match self {
            Evidence::DelphiConsensus { .. } | Evidence::FacilitatorOverride { .. } => Stage::RequirementsElicited,
            Evidence::Gaps { .. } => Stage::GapsIdentified,
            Evidence::AhpRanking { .. } => Stage::ToolsPrioritized,
            Evidence::Scorecard { .. } => Stage::ScorecardConstructed,
            Evidence::SdmModel { .. } => Stage::SimulationReady,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub at: DateTime<Utc>,
    pub from: Stage,
    pub to: Stage,
    pub evidence: Evidence,
}

/// Outputs frozen when their producing stage completes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub requirements: Option<Vec<Requirement>>,
    pub gap_report: Option<GapReport>,
    pub dematel: Option<DematelAnalysis>,
    pub ranking: Option<Synthesis>,
    pub scorecard: Option<Scorecard>,
    pub model: Option<SdmModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub national_goal: String,
    pub stage: Stage,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub settings: Settings,
    #[serde(default)]
    pub workspace: Workspace,
    #[serde(default)]
    pub artifacts: Artifacts,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

/// New project at `GoalDefined`; `None` uses the default national goal.
pub fn create_project(goal: Option<&str>) -> Result<Project> {
    let goal = match goal {
        None => scorecard::DEFAULT_NATIONAL_GOAL.to_string(),
        Some(g) if g.trim().is_empty() => return Err(PipelineError::EmptyGoal.into()),
        Some(g) => g.trim().to_string(),
    };
    Ok(Project {
        id: uuid::Uuid::new_v4().to_string(),
        national_goal: goal,
        stage: Stage::GoalDefined,
        created_at: Utc::now(),
        settings: Settings::default(),
        workspace: Workspace::default(),
        artifacts: Artifacts::default(),
        audit: Vec::new(),
    })
}

/// Required level on the 0-100 index for a final median on the 1-9 scale.
pub fn required_level(median: f64) -> f64 {
    (median - RATING_MIN as f64) / (RATING_MAX - RATING_MIN) as f64 * 100.0
}

/// Criteria skeleton for stage 3: requirements (with advisory weights) as
/// criteria, policy tools as alternatives, all judgments neutral.
pub fn build_ahp_inputs(goal: &str, requirements: &[(String, Option<f64>)], tools: &[String]) -> Result<Hierarchy> {
    if requirements.len() < 2 {
        return Err(PipelineError::TooFewCriteria(requirements.len()).into());
    }
    if tools.len() < 2 {
        return Err(PipelineError::TooFewAlternatives(tools.len()).into());
    }
    Ok(ahp::skeleton(goal, requirements, tools)?)
}

impl Project {
    fn ensure_before(&self, stage: Stage, what: &str) -> Result<()> {
        if self.stage >= stage {
            return Err(PipelineError::OutOfOrder(format!(
                "{what} is frozen once the project reaches {stage} (now {})",
                self.stage
            ))
            .into());
        }
        Ok(())
    }

    pub fn set_settings(&mut self, settings: Settings) -> Result<()> {
        settings.check()?;
        self.settings = settings;
        Ok(())
    }

    pub fn set_consensus_policy(&mut self, policy: ConsensusPolicy) -> Result<()> {
        self.ensure_before(Stage::RequirementsElicited, "the Delphi panel")?;
        if !policy.is_valid() {
            return Err(PipelineError::MalformedInput("consensus policy out of range".into()).into());
        }
        self.workspace.panel.policy = policy;
        Ok(())
    }

    /// Round 1 from opinions when none exist yet, otherwise the next rating round.
    pub fn open_delphi_round(
        &mut self,
        opinions: Option<&[Opinion]>,
        drafts: &BTreeMap<String, String>,
    ) -> Result<Round> {
        self.ensure_before(Stage::RequirementsElicited, "the Delphi panel")?;
        let panel = &mut self.workspace.panel;
        let round = match opinions {
            Some(ops) => panel.open_first_round(ops, drafts)?,
            None => panel.open_next_round()?,
        };
        Ok(round.clone())
    }

    pub fn issue_token(&mut self) -> Result<String> {
        self.ensure_before(Stage::RequirementsElicited, "the Delphi panel")?;
        Ok(self.workspace.panel.issue_token())
    }

    pub fn submit_response(&mut self, round: u32, response: Response) -> Result<Ack> {
        self.ensure_before(Stage::RequirementsElicited, "the Delphi panel")?;
        Ok(self.workspace.panel.submit_response(round, response)?)
    }

    pub fn import_responses(&mut self, round: u32, responses: Vec<Response>) -> Result<Vec<Ack>> {
        self.ensure_before(Stage::RequirementsElicited, "the Delphi panel")?;
        Ok(self.workspace.panel.import_responses(round, responses)?)
    }

    /// Requirements implied by a round: statements with median at or above
    /// the floor, highest median first.
    pub fn requirements_from(&self, summary: &RoundSummary) -> Vec<Requirement> {
        let mut picked: Vec<(&str, f64, String)> = summary
            .statements
            .iter()
            .filter(|s| s.median >= self.settings.requirement_floor)
            .map(|s| {
                let label = self
                    .workspace
                    .panel
                    .statement(&s.statement_id)
                    .map(|st| st.heading.clone())
                    .unwrap_or_else(|| s.statement_id.clone());
                (s.statement_id.as_str(), s.median, label)
            })
            .collect();
        picked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| natural_cmp(a.0, b.0)));
        picked
            .into_iter()
            .map(|(_, median, label)| Requirement {
                label,
                required: required_level(median),
            })
            .collect()
    }

    pub fn set_requirements(&mut self, requirements: Vec<Requirement>) -> Result<()> {
        self.ensure_before(Stage::GapsIdentified, "the requirement list")?;
        let mut seen = std::collections::BTreeSet::new();
        for r in &requirements {
            if r.label.trim().is_empty() || !r.required.is_finite() {
                return Err(PipelineError::MalformedInput(format!("bad requirement {:?}", r.label)).into());
            }
            if !seen.insert(r.label.as_str()) {
                return Err(AhpError::DuplicateLabel(r.label.clone()).into());
            }
        }
        self.workspace.requirements = requirements;
        Ok(())
    }

    pub fn set_indicators(&mut self, indicators: Vec<Indicator>) -> Result<()> {
        self.ensure_before(Stage::GapsIdentified, "the indicator set")?;
        if let Some(bad) = indicators.iter().find(|i| !i.value.is_finite()) {
            return Err(PipelineError::MalformedInput(format!("indicator {:?} is not finite", bad.label)).into());
        }
        self.workspace.indicators = indicators;
        Ok(())
    }

    /// Frozen report once gaps are identified, otherwise computed from the workspace.
    pub fn gap_report(&self) -> GapReport {
        self.artifacts
            .gap_report
            .clone()
            .unwrap_or_else(|| scorecard::gap_analysis(&self.workspace.requirements, &self.workspace.indicators))
    }

    pub fn run_dematel(&mut self, direct: DirectMatrix, opts: &DematelOptions) -> Result<DematelAnalysis> {
        self.ensure_before(Stage::GapsIdentified, "the DEMATEL analysis")?;
        let analysis = dematel::analyze_with(direct, opts)?;
        self.workspace.dematel = Some(analysis.clone());
        Ok(analysis)
    }

    /// Builds the stage-3 skeleton from the current requirements and `tools`.
    pub fn init_ahp(&mut self, tools: Vec<String>) -> Result<Hierarchy> {
        self.ensure_before(Stage::ToolsPrioritized, "the AHP hierarchy")?;
        let reqs = self
            .artifacts
            .requirements
            .as_ref()
            .unwrap_or(&self.workspace.requirements);
        let total: f64 = reqs.iter().map(|r| r.required.max(0.0)).sum();
        let criteria: Vec<(String, Option<f64>)> = reqs
            .iter()
            .map(|r| (r.label.clone(), (total > 0.0).then(|| r.required.max(0.0) / total)))
            .collect();
        let h = build_ahp_inputs(&self.national_goal, &criteria, &tools)?;
        self.workspace.tools = tools;
        self.workspace.hierarchy = Some(h.clone());
        Ok(h)
    }

    pub fn set_hierarchy(&mut self, h: Hierarchy) -> Result<()> {
        self.ensure_before(Stage::ToolsPrioritized, "the AHP hierarchy")?;
        h.check_structure()?;
        for m in h.matrices.values() {
            m.validate()?;
        }
        self.workspace.tools = h.alternatives.clone();
        self.workspace.hierarchy = Some(h);
        Ok(())
    }

    pub fn hierarchy(&self) -> Result<&Hierarchy> {
        self.workspace
            .hierarchy
            .as_ref()
            .ok_or_else(|| PipelineError::NotFound("no AHP hierarchy; initialize it first".into()).into())
    }

    /// Replaces one node's matrix and returns its local priorities.
    pub fn set_ahp_matrix(&mut self, node: &str, matrix: PairwiseMatrix) -> Result<PriorityResult> {
        self.ensure_before(Stage::ToolsPrioritized, "the AHP hierarchy")?;
        let opts = self.settings.priority_options();
        let h = self
            .workspace
            .hierarchy
            .as_mut()
            .ok_or_else(|| PipelineError::NotFound("no AHP hierarchy; initialize it first".into()))?;
        let priorities = ahp::priorities_with(&matrix, &opts)?;
        h.set_matrix(node, matrix)?;
        Ok(priorities)
    }

    pub fn ahp_ranking(&self, force: bool) -> Result<Synthesis> {
        if let (Some(ranking), false) = (&self.artifacts.ranking, force) {
            return Ok(ranking.clone());
        }
        let opts = SynthesisOptions {
            priority: self.settings.priority_options(),
            force,
        };
        Ok(ahp::synthesize_with(self.hierarchy()?, &opts)?)
    }

    pub fn seed_scorecard(&mut self) -> Result<&Scorecard> {
        self.ensure_before(Stage::ScorecardConstructed, "the scorecard")?;
        let mut card = scorecard::seed_default();
        card.national_goal = self.national_goal.clone();
        self.workspace.scorecard = Some(card);
        Ok(self.workspace.scorecard.as_ref().expect("just set"))
    }

    pub fn scorecard(&self) -> Result<&Scorecard> {
        self.artifacts
            .scorecard
            .as_ref()
            .or(self.workspace.scorecard.as_ref())
            .ok_or_else(|| PipelineError::NotFound("no scorecard; seed or upload one first".into()).into())
    }

    pub fn set_scorecard(&mut self, card: Scorecard) -> Result<ValidationReport> {
        self.ensure_before(Stage::ScorecardConstructed, "the scorecard")?;
        let report = card.validate();
        self.workspace.scorecard = Some(card);
        Ok(report)
    }

    fn scorecard_mut(&mut self) -> Result<&mut Scorecard> {
        self.ensure_before(Stage::ScorecardConstructed, "the scorecard")?;
        self.workspace
            .scorecard
            .as_mut()
            .ok_or_else(|| PipelineError::NotFound("no scorecard; seed or upload one first".into()).into())
    }

    pub fn add_link(&mut self, link: CausalLink) -> Result<()> {
        Ok(self.scorecard_mut()?.add_link(link)?)
    }

    /// Applies indicator values to matching KPIs; returns how many matched.
    pub fn apply_indicators_to_kpis(&mut self, indicators: &[Indicator]) -> Result<usize> {
        Ok(self.scorecard_mut()?.apply_indicators(indicators))
    }

    pub fn compile_model(&mut self, opts: Option<CompileOptions>) -> Result<&SdmModel> {
        self.ensure_before(Stage::SimulationReady, "the simulation model")?;
        let opts = opts.unwrap_or_else(|| self.settings.compile.clone());
        let card = self
            .scorecard()
            .map_err(|_| SdmError::InvalidScorecard("no scorecard to compile".into()))?;
        let model = sdm::compile(card, &opts)?;
        self.workspace.model = Some(model);
        Ok(self.workspace.model.as_ref().expect("just set"))
    }

    pub fn set_model(&mut self, model: SdmModel) -> Result<()> {
        self.ensure_before(Stage::SimulationReady, "the simulation model")?;
        model.validate()?;
        self.workspace.model = Some(model);
        Ok(())
    }

    pub fn model(&self) -> Result<&SdmModel> {
        self.artifacts
            .model
            .as_ref()
            .or(self.workspace.model.as_ref())
            .ok_or_else(|| PipelineError::NotFound("no simulation model; compile one first".into()).into())
    }

    /// Runs a scenario within the project's limits and stores the result as `run-<n>`.
    pub fn simulate(&mut self, scenario: Scenario) -> Result<&SavedRun> {
        self.settings.limits.check(&scenario)?;
        let trajectory = sdm::simulate(self.model()?, &scenario)?;
        let id = format!("run-{}", self.workspace.runs.len() + 1);
        self.workspace.runs.push(SavedRun {
            id,
            scenario,
            trajectory,
        });
        Ok(self.workspace.runs.last().expect("just pushed"))
    }

    pub fn run(&self, id: &str) -> Result<&SavedRun> {
        self.workspace
            .runs
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| PipelineError::NotFound(format!("no run {id:?}")).into())
    }

    fn resolve(&self, request: &EvidenceRequest) -> Result<Evidence> {
        let missing = |what: &str| -> Error {
            PipelineError::WrongEvidence {
                expected: request.produces().to_string(),
                got: format!("{} without {what}", request.kind()),
            }
            .into()
        };
        Ok(match request {
            EvidenceRequest::DelphiConsensus { round } => {
                let round = round
                    .or_else(|| self.workspace.panel.latest_rating_round())
                    .ok_or_else(|| missing("a rating round"))?;
                let (summary, decision) = self.workspace.panel.decision(round)?;
                let requirements = self.requirements_from(&summary);
                Evidence::DelphiConsensus {
                    round,
                    summary,
                    decision,
                    requirements,
                }
            }
            EvidenceRequest::FacilitatorOverride { reason } => {
                let round = self
                    .workspace
                    .panel
                    .latest_rating_round()
                    .filter(|&r| self.workspace.panel.summary(r).is_ok());
                let summary = round.map(|r| self.workspace.panel.summary(r)).transpose()?;
                let requirements = summary.as_ref().map(|s| self.requirements_from(s)).unwrap_or_default();
                Evidence::FacilitatorOverride {
                    reason: reason.clone(),
                    round,
                    summary,
                    requirements,
                }
            }
            EvidenceRequest::Gaps => {
                let dematel = self
                    .workspace
                    .dematel
                    .clone()
                    .ok_or_else(|| missing("a DEMATEL analysis"))?;
                if self.workspace.requirements.is_empty() {
                    return Err(missing("requirements"));
                }
                Evidence::Gaps {
                    report: self.gap_report(),
                    dematel,
                }
            }
            EvidenceRequest::AhpRanking => {
                let hierarchy = self.hierarchy().map_err(|_| missing("an AHP hierarchy"))?.clone();
                let synthesis = self.ahp_ranking(false)?;
                Evidence::AhpRanking { hierarchy, synthesis }
            }
            EvidenceRequest::Scorecard => {
                let scorecard = self.workspace.scorecard.clone().ok_or_else(|| missing("a scorecard"))?;
                let validation = scorecard.validate();
                Evidence::Scorecard { scorecard, validation }
            }
            EvidenceRequest::SdmModel => Evidence::SdmModel {
                model: self
                    .workspace
                    .model
                    .clone()
                    .ok_or_else(|| missing("a compiled model"))?,
            },
        })
    }

    /// Moves one stage forward using evidence drawn from the workspace.
    /// On error the project is left unchanged.
    pub fn advance(&mut self, request: &AdvanceRequest) -> Result<Stage> {
        let next = self.next_stage()?;
        if let Some(target) = request.target {
            if target != next {
                return Err(PipelineError::OutOfOrder(format!(
                    "cannot move from {} to {target}; the next stage is {next}",
                    self.stage
                ))
                .into());
            }
        }
        if request.evidence.produces() != next {
            return Err(PipelineError::WrongEvidence {
                expected: next.to_string(),
                got: request.evidence.kind().to_string(),
            }
            .into());
        }
        let evidence = self.resolve(&request.evidence)?;
        self.apply_evidence(evidence, Utc::now())
    }

    fn next_stage(&self) -> Result<Stage> {
        self.stage
            .next()
            .ok_or_else(|| PipelineError::OutOfOrder(format!("{} is the final stage", self.stage)).into())
    }

    /// Checks `evidence` for the next stage, freezes it and appends to the audit log.
    pub fn apply_evidence(&mut self, evidence: Evidence, at: DateTime<Utc>) -> Result<Stage> {
        let next = self.next_stage()?;
        if evidence.produces() != next {
            return Err(PipelineError::WrongEvidence {
                expected: next.to_string(),
                got: evidence.kind().to_string(),
            }
            .into());
        }
        let mut artifacts = self.artifacts.clone();
        match &evidence {
            Evidence::DelphiConsensus {
                round,
                decision,
                requirements,
                ..
            } => {
                if *decision != ConsensusDecision::ConsensusReached {
                    return Err(PipelineError::ConsensusNotReached {
                        round: *round,
                        decision: *decision,
                    }
                    .into());
                }
                artifacts.requirements = Some(requirements.clone());
            }
            Evidence::FacilitatorOverride {
                reason, requirements, ..
            } => {
                if reason.trim().is_empty() {
                    return Err(PipelineError::MalformedInput("an override needs a reason".into()).into());
                }
                artifacts.requirements = Some(requirements.clone());
            }
            Evidence::Gaps { report, dematel } => {
                artifacts.gap_report = Some(report.clone());
                artifacts.dematel = Some(dematel.clone());
            }
            Evidence::AhpRanking { hierarchy, .. } => {
                let opts = SynthesisOptions {
                    priority: self.settings.priority_options(),
                    force: false,
                };
                artifacts.ranking = Some(ahp::synthesize_with(hierarchy, &opts)?);
            }
            Evidence::Scorecard { scorecard, .. } => {
                scorecard.validate().into_result().map_err(Error::from)?;
                artifacts.scorecard = Some(scorecard.clone());
            }
            Evidence::SdmModel { model } => {
                model.validate()?;
                artifacts.model = Some(model.clone());
            }
        }
        if let (Some(reqs), true) = (&artifacts.requirements, self.workspace.requirements.is_empty()) {
            self.workspace.requirements = reqs.clone();
        }
        self.artifacts = artifacts;
        self.audit.push(AuditEntry {
            seq: self.audit.len() + 1,
            at,
            from: self.stage,
            to: next,
            evidence,
        });
        self.stage = next;
        Ok(next)
    }
}

/// Replays an audit log against a fresh project with the same goal and settings.
pub fn replay(original: &Project) -> Result<Project> {
    let mut p = create_project(Some(&original.national_goal))?;
    p.id = original.id.clone();
    p.settings = original.settings.clone();
    for entry in &original.audit {
        p.apply_evidence(entry.evidence.clone(), entry.at)?;
    }
    Ok(p)
}

#[derive(Debug, Serialize, Deserialize)]
struct ProjectFile {
    schema_version: u64,
    project: Project,
}

/// One JSON file per project under `<data_dir>/projects/`.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    lease_timeout: Duration,
}

/// Exclusive write lease on one project; released on drop.
#[derive(Debug)]
pub struct Lease {
    _file: File,
}

impl Store {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            root: data_dir.into(),
            lease_timeout: DEFAULT_LEASE_TIMEOUT,
        }
    }

    pub fn with_lease_timeout(mut self, timeout: Duration) -> Self {
        self.lease_timeout = timeout;
        self
    }

    pub fn data_dir(&self) -> &Path {
        &self.root
    }

    fn projects_dir(&self) -> Result<PathBuf> {
        let dir = self.root.join("projects");
        fs::create_dir_all(&dir).map_err(|e| io_error(&format!("creating {}", dir.display()), e))?;
        Ok(dir)
    }

    fn check_id(id: &str) -> Result<()> {
        let ok =
            !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if ok {
            Ok(())
        } else {
            Err(PipelineError::NotFound(format!("project {id:?}")).into())
        }
    }

    pub fn project_path(&self, id: &str) -> Result<PathBuf> {
        Self::check_id(id)?;
        Ok(self.projects_dir()?.join(format!("{id}.json")))
    }

    /// Waits up to the lease timeout for the project's write lock.
    pub fn lease(&self, id: &str) -> Result<Lease> {
        Self::check_id(id)?;
        let path = self.projects_dir()?.join(format!("{id}.lock"));
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| io_error(&format!("opening {}", path.display()), e))?;
        let start = Instant::now();
        loop {
            match file.try_lock() {
                Ok(()) => return Ok(Lease { _file: file }),
                Err(fs::TryLockError::WouldBlock) => {
                    if start.elapsed() >= self.lease_timeout {
                        return Err(PipelineError::LeaseHeld {
                            project: id.to_string(),
                            waited_ms: start.elapsed().as_millis() as u64,
                        }
                        .into());
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(fs::TryLockError::Error(e)) => return Err(io_error("locking project", e)),
            }
        }
    }

    pub fn create(&self, goal: Option<&str>) -> Result<Project> {
        let p = create_project(goal)?;
        let _lease = self.lease(&p.id)?;
        self.write(&p)?;
        Ok(p)
    }

    pub fn load(&self, id: &str) -> Result<Project> {
        let path = self.project_path(id)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(PipelineError::NotFound(format!("project {id}")).into())
            }
            Err(e) => return Err(io_error(&format!("reading {}", path.display()), e)),
        };
        parse_project_file(&text, &path)
    }

    /// Writes `p` under its lease. Prefer [`Store::update`] for read-modify-write.
    pub fn save(&self, p: &Project) -> Result<()> {
        let _lease = self.lease(&p.id)?;
        self.write(p)
    }

    fn write(&self, p: &Project) -> Result<()> {
        let path = self.project_path(&p.id)?;
        let dir = path.parent().expect("project files live in a directory");
        let body = serde_json::to_vec_pretty(&ProjectFile {
            schema_version: SCHEMA_VERSION,
            project: p.clone(),
        })
        .map_err(|e| PipelineError::Io(format!("encoding project: {e}")))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error("creating temp file", e))?;
        tmp.write_all(&body).map_err(|e| io_error("writing temp file", e))?;
        tmp.as_file().sync_all().map_err(|e| io_error("syncing temp file", e))?;
        tmp.persist(&path)
            .map_err(|e| io_error(&format!("replacing {}", path.display()), e.error))?;
        Ok(())
    }

    /// Loads, mutates and saves one project under its write lease. If `f`
    /// fails nothing is written.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&mut Project) -> Result<T>) -> Result<(Project, T)> {
        let _lease = self.lease(id)?;
        let mut p = self.load(id)?;
        let out = f(&mut p)?;
        self.write(&p)?;
        Ok((p, out))
    }

    /// All readable projects, oldest first.
    pub fn list(&self) -> Result<Vec<Project>> {
        let dir = self.projects_dir()?;
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_error("listing projects", e))? {
            let path = entry.map_err(|e| io_error("listing projects", e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| io_error(&format!("reading {}", path.display()), e))?;
            out.push(parse_project_file(&text, &path)?);
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }
}

fn parse_project_file(text: &str, path: &Path) -> Result<Project> {
    let corrupt = |found: Option<u64>, message: String| -> Error {
        PipelineError::CorruptFile {
            path: path.display().to_string(),
            found,
            expected: SCHEMA_VERSION,
            message,
        }
        .into()
    };
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(None, e.to_string()))?;
    let found = value.get("schema_version").and_then(serde_json::Value::as_u64);
    if found != Some(SCHEMA_VERSION) {
        let shown = found.map_or_else(|| "missing".to_string(), |v| v.to_string());
        return Err(corrupt(
            found,
            format!("schema version {shown}, this build reads version {SCHEMA_VERSION}"),
        ));
    }
    let file: ProjectFile = serde_json::from_value(value).map_err(|e| corrupt(found, e.to_string()))?;
    Ok(file.project)
}
