//! Operations shared by the HTTP routes and the CLI. Each takes parsed input,
//! loads or updates a project through the store and returns a serializable value.

use std::collections::{BTreeMap, HashMap};

use esi_core::ahp::{NodeSpec, PairwiseMatrix, PriorityResult, Synthesis};
use esi_core::delphi::{
    self, Ack, ConsensusDecision, ConsensusPolicy, Opinion, Response, Round, RoundSummary, Statement,
};
use esi_core::dematel::{DematelAnalysis, DematelOptions, DirectMatrix};
use esi_core::numerics::Matrix;
use esi_core::pipeline::{AdvanceRequest, PipelineError, SavedRun, Settings};
use esi_core::scorecard::{self, CausalLink, GapReport, Indicator, LinkMap, Requirement, Scorecard, ValidationReport};
use esi_core::sdm::{self, CompileOptions, Expression, Scenario, SdmModel};
use esi_core::{ahp, Error, Project, Result, Stage, Store};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn malformed(message: impl Into<String>) -> Error {
    PipelineError::MalformedInput(message.into()).into()
}

pub fn parse_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| malformed(format!("invalid JSON body: {e}")))
}

/// Like [`parse_json`], but an empty body yields the default value.
pub fn parse_json_or_default<T: DeserializeOwned + Default>(bytes: &[u8]) -> Result<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse_json(bytes)
    }
}

pub fn parse_round(text: &str) -> Result<u32> {
    text.parse()
        .map_err(|_| malformed(format!("round {text:?} is not a positive integer")))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NewProject {
    #[serde(default)]
    pub goal: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectSummary {
    pub id: String,
    pub national_goal: String,
    pub stage: Stage,
}

pub fn create_project(store: &Store, body: NewProject) -> Result<Project> {
    store.create(body.goal.as_deref())
}

pub fn get_project(store: &Store, id: &str) -> Result<Project> {
    store.load(id)
}

pub fn list_projects(store: &Store) -> Result<Vec<ProjectSummary>> {
    Ok(store
        .list()?
        .into_iter()
        .map(|p| ProjectSummary {
            id: p.id,
            national_goal: p.national_goal,
            stage: p.stage,
        })
        .collect())
}

pub fn advance(store: &Store, id: &str, request: AdvanceRequest) -> Result<Project> {
    Ok(store.update(id, |p| p.advance(&request))?.0)
}

pub fn set_settings(store: &Store, id: &str, settings: Settings) -> Result<Settings> {
    let (p, ()) = store.update(id, |p| p.set_settings(settings))?;
    Ok(p.settings)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OpenRound {
    /// Round 1 opinions; omit to open the next rating round.
    #[serde(default)]
    pub opinions: Option<Vec<Opinion>>,
    /// Optional statement wording per heading.
    #[serde(default)]
    pub drafts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundView {
    pub round: Round,
    pub statements: Vec<Statement>,
}

fn round_view(p: &Project, round: Round) -> RoundView {
    let statements = round
        .statements
        .iter()
        .filter_map(|id| p.workspace.panel.statement(id).cloned())
        .collect();
    RoundView { round, statements }
}

pub fn open_round(store: &Store, id: &str, body: OpenRound) -> Result<RoundView> {
    let (p, round) = store.update(id, |p| p.open_delphi_round(body.opinions.as_deref(), &body.drafts))?;
    Ok(round_view(&p, round))
}

pub fn get_round(store: &Store, id: &str, round: u32) -> Result<RoundView> {
    let p = store.load(id)?;
    let r = p.workspace.panel.round(round)?.clone();
    Ok(round_view(&p, r))
}

pub fn set_policy(store: &Store, id: &str, policy: ConsensusPolicy) -> Result<ConsensusPolicy> {
    let (p, ()) = store.update(id, |p| p.set_consensus_policy(policy))?;
    Ok(p.workspace.panel.policy)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Token {
    pub token: String,
}

pub fn issue_token(store: &Store, id: &str) -> Result<Token> {
    let (_, token) = store.update(id, |p| p.issue_token())?;
    Ok(Token { token })
}

/// One response or a batch; a batch is validated as a whole before storing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Submission {
    One(Response),
    Many(Vec<Response>),
}

pub fn submit(store: &Store, id: &str, round: u32, submission: Submission) -> Result<Vec<Ack>> {
    let (_, acks) = store.update(id, |p| match submission {
        Submission::One(r) => p.submit_response(round, r).map(|a| vec![a]),
        Submission::Many(rs) => p.import_responses(round, rs),
    })?;
    Ok(acks)
}

pub fn import_csv(store: &Store, id: &str, round: u32, csv: &[u8]) -> Result<Vec<Ack>> {
    let responses = delphi::parse_responses_csv(csv, round)?;
    submit(store, id, round, Submission::Many(responses))
}

pub fn summary(store: &Store, id: &str, round: u32) -> Result<RoundSummary> {
    Ok(store.load(id)?.workspace.panel.summary(round)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionView {
    pub round: u32,
    pub decision: ConsensusDecision,
    pub policy: ConsensusPolicy,
    pub summary: RoundSummary,
}

pub fn decision(store: &Store, id: &str, round: u32) -> Result<DecisionView> {
    let p = store.load(id)?;
    let (summary, decision) = p.workspace.panel.decision(round)?;
    Ok(DecisionView {
        round,
        decision,
        policy: p.workspace.panel.policy,
        summary,
    })
}

pub fn set_requirements(store: &Store, id: &str, requirements: Vec<Requirement>) -> Result<Vec<Requirement>> {
    let (p, ()) = store.update(id, |p| p.set_requirements(requirements))?;
    Ok(p.workspace.requirements)
}

pub fn set_indicators(store: &Store, id: &str, indicators: Vec<Indicator>) -> Result<Vec<Indicator>> {
    let (p, ()) = store.update(id, |p| p.set_indicators(indicators))?;
    Ok(p.workspace.indicators)
}

pub fn read_indicators_csv(csv: &[u8]) -> Result<Vec<Indicator>> {
    Ok(scorecard::read_indicators_csv(csv)?)
}

/// Direct-influence input: one matrix, or several expert matrices averaged.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DematelInput {
    pub factors: Vec<String>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, flatten)]
    pub options: DematelOptions,
}

impl DematelInput {
    pub fn direct(&self) -> Result<DirectMatrix> {
        let single = |rows: &[Vec<f64>]| -> Result<DirectMatrix> {
            Ok(DirectMatrix::new(self.factors.clone(), Matrix::from_rows(rows)?)?)
        };
        match (&self.matrix, &self.matrices) {
            (Some(rows), None) => single(rows),
            (None, Some(all)) if !all.is_empty() => {
                let parsed = all.iter().map(|m| single(m)).collect::<Result<Vec<_>>>()?;
                Ok(DirectMatrix::merge_mean(&parsed)?)
            }
            _ => Err(malformed("give exactly one of `matrix` or a non-empty `matrices`")),
        }
    }
}

pub fn run_dematel(store: &Store, id: &str, direct: DirectMatrix, opts: DematelOptions) -> Result<DematelAnalysis> {
    Ok(store.update(id, |p| p.run_dematel(direct, &opts))?.1)
}

pub fn read_dematel_csv(csv: &[u8]) -> Result<DirectMatrix> {
    Ok(DirectMatrix::read_csv(csv)?)
}

pub fn dematel_result(store: &Store, id: &str) -> Result<DematelAnalysis> {
    let p = store.load(id)?;
    p.artifacts
        .dematel
        .or(p.workspace.dematel)
        .ok_or_else(|| PipelineError::NotFound("no DEMATEL analysis yet".into()).into())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AhpInit {
    pub tools: Vec<String>,
}

pub fn init_ahp(store: &Store, id: &str, body: AhpInit) -> Result<ahp::Hierarchy> {
    Ok(store.update(id, |p| p.init_ahp(body.tools))?.1)
}

pub fn get_hierarchy(store: &Store, id: &str) -> Result<ahp::Hierarchy> {
    Ok(store.load(id)?.hierarchy()?.clone())
}

pub fn set_hierarchy(store: &Store, id: &str, h: ahp::Hierarchy) -> Result<ahp::Hierarchy> {
    let (p, ()) = store.update(id, |p| p.set_hierarchy(h))?;
    Ok(p.hierarchy()?.clone())
}

/// A node's judgments as a full matrix or as the entries above the diagonal.
/// Labels default to those the node compares.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MatrixInput {
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
}

impl MatrixInput {
    pub fn resolve(self, spec: &NodeSpec) -> Result<PairwiseMatrix> {
        let labels = self.labels.unwrap_or_else(|| spec.compares.clone());
        match (self.matrix, self.upper) {
            (Some(rows), None) => Ok(PairwiseMatrix::new(labels, Matrix::from_rows(&rows)?)),
            (None, Some(upper)) => Ok(PairwiseMatrix::from_upper(labels, &upper)?),
            _ => Err(malformed("give exactly one of `matrix` or `upper`")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixView {
    #[serde(flatten)]
    pub spec: NodeSpec,
    pub matrix: PairwiseMatrix,
    /// Absent when the stored judgments cannot be evaluated.
    pub priorities: Option<PriorityResult>,
}

pub fn get_matrix(store: &Store, id: &str, node: &str) -> Result<MatrixView> {
    let p = store.load(id)?;
    let h = p.hierarchy()?;
    let spec = h.node(node)?;
    let matrix = h
        .matrices
        .get(node)
        .cloned()
        .unwrap_or_else(|| PairwiseMatrix::neutral(spec.compares.clone()));
    let priorities = ahp::priorities_with(&matrix, &p.settings.priority_options()).ok();
    Ok(MatrixView {
        spec,
        matrix,
        priorities,
    })
}

pub fn put_matrix(store: &Store, id: &str, node: &str, input: MatrixInput) -> Result<PriorityResult> {
    let (_, result) = store.update(id, |p| {
        let spec = p.hierarchy()?.node(node)?;
        let matrix = input.resolve(&spec)?;
        p.set_ahp_matrix(node, matrix)
    })?;
    Ok(result)
}

pub fn read_matrix_csv(csv: &[u8]) -> Result<MatrixInput> {
    let (labels, m) = PairwiseMatrix::read_csv(csv).map(|m| (m.labels, m.entries))?;
    Ok(MatrixInput {
        labels: Some(labels),
        matrix: Some(m.to_rows()),
        upper: None,
    })
}

pub fn ranking(store: &Store, id: &str, force: bool) -> Result<Synthesis> {
    store.load(id)?.ahp_ranking(force)
}

pub fn get_scorecard(store: &Store, id: &str) -> Result<Scorecard> {
    Ok(store.load(id)?.scorecard()?.clone())
}

pub fn seed_scorecard(store: &Store, id: &str) -> Result<Scorecard> {
    Ok(store.update(id, |p| p.seed_scorecard().cloned())?.1)
}

pub fn put_scorecard(store: &Store, id: &str, card: Scorecard) -> Result<ValidationReport> {
    Ok(store.update(id, |p| p.set_scorecard(card))?.1)
}

pub fn add_link(store: &Store, id: &str, link: CausalLink) -> Result<LinkMap> {
    let (p, ()) = store.update(id, |p| p.add_link(link))?;
    Ok(scorecard::link_map(p.scorecard()?)?)
}

pub fn validation(store: &Store, id: &str) -> Result<ValidationReport> {
    Ok(store.load(id)?.scorecard()?.validate())
}

pub fn link_map(store: &Store, id: &str) -> Result<LinkMap> {
    Ok(scorecard::link_map(store.load(id)?.scorecard()?)?)
}

pub fn gaps(store: &Store, id: &str) -> Result<GapReport> {
    Ok(store.load(id)?.gap_report())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpiUpdate {
    pub matched: usize,
}

pub fn apply_indicators(store: &Store, id: &str, indicators: Vec<Indicator>) -> Result<KpiUpdate> {
    let (_, matched) = store.update(id, |p| p.apply_indicators_to_kpis(&indicators))?;
    Ok(KpiUpdate { matched })
}

pub fn compile(store: &Store, id: &str, opts: Option<CompileOptions>) -> Result<SdmModel> {
    Ok(store.update(id, |p| p.compile_model(opts).cloned())?.1)
}

pub fn get_model(store: &Store, id: &str) -> Result<SdmModel> {
    Ok(store.load(id)?.model()?.clone())
}

pub fn put_model(store: &Store, id: &str, model: SdmModel) -> Result<SdmModel> {
    let (p, ()) = store.update(id, |p| p.set_model(model))?;
    Ok(p.model()?.clone())
}

pub fn simulate(store: &Store, id: &str, scenario: Scenario) -> Result<SavedRun> {
    Ok(store.update(id, |p| p.simulate(scenario).cloned())?.1)
}

pub fn trajectory(store: &Store, id: &str, run: &str) -> Result<SavedRun> {
    Ok(store.load(id)?.run(run)?.clone())
}

pub fn trajectory_csv(run: &SavedRun) -> Result<String> {
    let mut out = Vec::new();
    run.trajectory
        .write_csv(&mut out)
        .map_err(|e| malformed(format!("cannot write CSV: {e}")))?;
    Ok(String::from_utf8(out).expect("CSV writer emits UTF-8"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalInput {
    pub expression: Expression,
    #[serde(default)]
    pub env: HashMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub value: f64,
}

pub fn eval(input: &EvalInput) -> Result<EvalOutput> {
    Ok(EvalOutput {
        value: sdm::evaluate(&input.expression, &input.env)?,
    })
}
