//! Four-perspective balanced scorecard, its strategy map and gap analysis.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delphi::natural_cmp;

pub const DEFAULT_NATIONAL_GOAL: &str =
    "develop a functional Evidence-Based Platform for Science and Innovation Policy";
/// Target given to generated KPIs until a facilitator agrees a real one.
pub const PLACEHOLDER_TARGET: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorecardError {
    #[error("broken reference: {0}")]
    BrokenReference(String),
    #[error("link {from} -> {to} already exists")]
    DuplicateLink { from: String, to: String },
    #[error("invalid link: {0}")]
    InvalidLink(String),
    #[error("scorecard has {} validation error(s): {}", .0.len(), .0.join("; "))]
    InvalidScorecard(Vec<String>),
    #[error("malformed indicator CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PerspectiveKind {
    Academic,
    Government,
    Industry,
    Public,
}

impl PerspectiveKind {
    pub const ALL: [PerspectiveKind; 4] = [
        PerspectiveKind::Academic,
        PerspectiveKind::Government,
        PerspectiveKind::Industry,
        PerspectiveKind::Public,
    ];

    /// Single-letter prefix used for seeded objective ids.
    pub fn prefix(self) -> char {
        match self {
            PerspectiveKind::Academic => 'A',
            PerspectiveKind::Government => 'G',
            PerspectiveKind::Industry => 'I',
            PerspectiveKind::Public => 'P',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perspective {
    pub kind: PerspectiveKind,
    pub goal: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub id: String,
    pub perspective: PerspectiveKind,
    pub text: String,
    /// Tools or measure ideas listed beside the objective that are not KPIs themselves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
    #[serde(default)]
    pub kpis: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpiKind {
    Input,
    Process,
    Output,
    Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kpi {
    pub id: String,
    pub name: String,
    pub unit: String,
    pub direction: Direction,
    pub target: f64,
    #[serde(default)]
    pub current: Option<f64>,
    pub kind: KpiKind,
    /// Generated stand-in whose target has not been agreed yet.
    #[serde(default)]
    pub target_unset: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

impl TryFrom<i8> for Polarity {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(format!("polarity must be 1 or -1, got {other}")),
        }
    }
}

impl From<Polarity> for i8 {
    fn from(p: Polarity) -> i8 {
        match p {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

/// Directed cause-and-effect link of the strategy map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalLink {
    pub from_objective: String,
    pub to_objective: String,
    pub polarity: Polarity,
    /// In (0, 1].
    pub strength: f64,
    /// Years, >= 0.
    #[serde(default)]
    pub lag: f64,
}

impl CausalLink {
    pub fn new(from: impl Into<String>, to: impl Into<String>, polarity: Polarity, strength: f64, lag: f64) -> Self {
        Self {
            from_objective: from.into(),
            to_objective: to.into(),
            polarity,
            strength,
            lag,
        }
    }

    fn shape_problem(&self) -> Option<String> {
        if self.from_objective == self.to_objective {
            Some(format!("self-link on {}", self.from_objective))
        } else if !(self.strength > 0.0 && self.strength <= 1.0) {
            Some(format!(
                "link {} -> {} has strength {}, expected (0, 1]",
                self.from_objective, self.to_objective, self.strength
            ))
        } else if !(self.lag >= 0.0 && self.lag.is_finite()) {
            Some(format!(
                "link {} -> {} has lag {}, expected a finite value >= 0",
                self.from_objective, self.to_objective, self.lag
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorecard {
    pub national_goal: String,
    pub perspectives: Vec<Perspective>,
    pub objectives: Vec<Objective>,
    pub kpis: Vec<Kpi>,
    #[serde(default)]
    pub links: Vec<CausalLink>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    BrokenReference,
    MissingPerspective,
    DuplicatePerspective,
    DuplicateId,
    DuplicateLink,
    InvalidLink,
    InvalidKpi,
    ObjectiveWithoutKpi,
    StrategyMapCycle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub message: String,
}

impl Issue {
    fn new(kind: IssueKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<ValidationReport, ScorecardError> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(ScorecardError::InvalidScorecard(
                self.errors.into_iter().map(|e| e.message).collect(),
            ))
        }
    }
}

impl Scorecard {
    pub fn objective(&self, id: &str) -> Option<&Objective> {
        self.objectives.iter().find(|o| o.id == id)
    }

    pub fn kpi(&self, id: &str) -> Option<&Kpi> {
        self.kpis.iter().find(|k| k.id == id)
    }

    pub fn kpis_of<'a>(&'a self, objective: &'a Objective) -> impl Iterator<Item = &'a Kpi> + 'a {
        objective.kpis.iter().filter_map(|id| self.kpi(id))
    }

    /// Validation errors block downstream use; warnings are for facilitator review.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let errors = &mut report.errors;

        let mut kinds = BTreeMap::new();
        for p in &self.perspectives {
            *kinds.entry(p.kind).or_insert(0) += 1;
        }
        for kind in PerspectiveKind::ALL {
            match kinds.get(&kind).copied().unwrap_or(0) {
                0 => errors.push(Issue::new(
                    IssueKind::MissingPerspective,
                    format!("no {kind:?} perspective"),
                )),
                1 => {}
                n => errors.push(Issue::new(
                    IssueKind::DuplicatePerspective,
                    format!("{kind:?} perspective appears {n} times"),
                )),
            }
        }

        let mut objective_ids = BTreeSet::new();
        for o in &self.objectives {
            if !objective_ids.insert(o.id.as_str()) {
                errors.push(Issue::new(
                    IssueKind::DuplicateId,
                    format!("objective id {} repeated", o.id),
                ));
            }
        }
        let mut kpi_ids = BTreeSet::new();
        for k in &self.kpis {
            if !kpi_ids.insert(k.id.as_str()) {
                errors.push(Issue::new(IssueKind::DuplicateId, format!("KPI id {} repeated", k.id)));
            }
            if !k.target.is_finite() || k.current.is_some_and(|c| !c.is_finite()) {
                errors.push(Issue::new(
                    IssueKind::InvalidKpi,
                    format!("KPI {} has a non-finite value", k.id),
                ));
            }
        }
        for o in &self.objectives {
            for k in &o.kpis {
                if !kpi_ids.contains(k.as_str()) {
                    errors.push(Issue::new(
                        IssueKind::BrokenReference,
                        format!("objective {} references unknown KPI {k}", o.id),
                    ));
                }
            }
            if o.kpis.is_empty() {
                report.warnings.push(Issue::new(
                    IssueKind::ObjectiveWithoutKpi,
                    format!("objective {} has no KPI", o.id),
                ));
            }
        }

        let mut pairs = BTreeSet::new();
        for l in &self.links {
            for end in [&l.from_objective, &l.to_objective] {
                if !objective_ids.contains(end.as_str()) {
                    errors.push(Issue::new(
                        IssueKind::BrokenReference,
                        format!(
                            "link {} -> {} references unknown objective {end}",
                            l.from_objective, l.to_objective
                        ),
                    ));
                }
            }
            if let Some(problem) = l.shape_problem() {
                errors.push(Issue::new(IssueKind::InvalidLink, problem));
            }
            if !pairs.insert((l.from_objective.as_str(), l.to_objective.as_str())) {
                errors.push(Issue::new(
                    IssueKind::DuplicateLink,
                    format!("link {} -> {} repeated", l.from_objective, l.to_objective),
                ));
            }
        }

        for cycle in self.cycles() {
            report.warnings.push(Issue::new(
                IssueKind::StrategyMapCycle,
                format!("feedback loop among {}", cycle.join(", ")),
            ));
        }
        report
    }

    /// Strongly connected groups of two or more objectives, each sorted.
    pub fn cycles(&self) -> Vec<Vec<String>> {
        let mut graph: DiGraphMap<&str, ()> = DiGraphMap::new();
        for l in &self.links {
            if l.from_objective != l.to_objective {
                graph.add_edge(l.from_objective.as_str(), l.to_objective.as_str(), ());
            }
        }
        let mut cycles: Vec<Vec<String>> = tarjan_scc(&graph)
            .into_iter()
            .filter(|c| c.len() > 1)
            .map(|c| {
                let mut ids: Vec<String> = c.into_iter().map(str::to_string).collect();
                ids.sort_by(|a, b| natural_cmp(a, b));
                ids
            })
            .collect();
        cycles.sort();
        cycles
    }

    /// Inserts a link after checking ends, shape and uniqueness.
    pub fn add_link(&mut self, link: CausalLink) -> Result<(), ScorecardError> {
        for end in [&link.from_objective, &link.to_objective] {
            if self.objective(end).is_none() {
                return Err(ScorecardError::BrokenReference(format!("unknown objective {end}")));
            }
        }
        if let Some(problem) = link.shape_problem() {
            return Err(ScorecardError::InvalidLink(problem));
        }
        if self
            .links
            .iter()
            .any(|l| l.from_objective == link.from_objective && l.to_objective == link.to_objective)
        {
            return Err(ScorecardError::DuplicateLink {
                from: link.from_objective,
                to: link.to_objective,
            });
        }
        self.links.push(link);
        Ok(())
    }

    /// Sets `current` on every KPI whose id or name equals an indicator label.
    /// Returns the number of KPIs updated.
    pub fn apply_indicators(&mut self, indicators: &[Indicator]) -> usize {
        let mut updated = 0;
        for k in &mut self.kpis {
            if let Some(ind) = indicators.iter().find(|i| i.label == k.id || i.label == k.name) {
                k.current = Some(ind.value);
                updated += 1;
            }
        }
        updated
    }

    fn cmp_objectives(&self, a: &str, b: &str) -> Ordering {
        let kind = |id: &str| self.objective(id).map(|o| o.perspective);
        kind(a).cmp(&kind(b)).then_with(|| natural_cmp(a, b))
    }
}

struct SeedObjective {
    text: &'static str,
    annotation: Option<&'static str>,
}

const fn obj(text: &'static str) -> SeedObjective {
    SeedObjective { text, annotation: None }
}

const fn obj_with(text: &'static str, annotation: &'static str) -> SeedObjective {
    SeedObjective {
        text,
        annotation: Some(annotation),
    }
}

const ACADEMIC_GOAL: &str = "Map the Ecological System of Innovation";
const GOVERNMENT_GOAL: &str = "Make Science and innovation policy more rigorous, transparent and scalable";
const INDUSTRY_GOAL: &str =
    "Establish better linkages and communications to accelerate innovations based on academic research";
const PUBLIC_GOAL: &str = "Highlight new discoveries and innovations that improve social welfare e.g. eco-innovation";

const ACADEMIC: [SeedObjective; 5] = [
    obj_with(
        "Develop a new taxonomy of science, technology and innovation",
        "Bibliometric, scientometric and visualization tools to mine patent, publication and CV data to establish linkages between known disciplines and to establish births and deaths of fields",
    ),
    obj_with(
        "Establish the theory and practice on organizational structure that facilitates discovery and innovation",
        "Creativity: Computational models of the creativity process. Organizations: Business-2-Business, industry-university partnerships; collaboratories/virtual organizations; interdisciplinary, multidisciplinary, transdisciplinary teams",
    ),
    obj_with(
        "Gather data and create metrics of the ESI",
        "Workforce data: S&E, postdocs, graduate students, undergraduates; foreign born and domestic. Expenditure data: R&D-federal, state, firms, academic. Output data: patents, peer-reviewed publications, intangible assets. Innovation metrics",
    ),
    obj_with(
        "Develop new methodologies to reduce uncertainty in prospective policies.",
        "Develop new measures for assessing basic research and evaluating novel ideas/proposals",
    ),
    obj("Develop a theoretical and analytical model/frame work for linking input metrics to scientific achievement or societal benefit"),
];

const GOVERNMENT: [SeedObjective; 7] = [
    obj("Develop econometric models that utilize network analysis and a systems approach to stimulate policy scenarios, creating a portfolio of scientific investments"),
    obj("Create a roadmap for funding agencies to use as they implement new datasets, metrics, tools, and models in their decision-making processes"),
    obj("Include risk-analysis & probability tools to determine the capacity of alternative science policies for achieving desirable outcomes"),
    obj("Develop/Use benchmarking tools that present realistic scenarios for ascertaining comparative and competitive advantages in the international arena"),
    obj("Adopt, modify (if necessary) and implement best practices from industry relating to funding/investment decision"),
    obj("Assess spillover effects of funding decisions in basic sciences"),
    obj("Develop a cost benefit analysis procedure that enables policy makers at various levels of decision-making to prioritize investments in science, technology and innovation"),
];

const INDUSTRY: [SeedObjective; 3] = [
    obj("Bridge \"valley of death\""),
    obj("Create links between public and industry innovation to study the ultimate effect. Gathering matrix of public reaction and adoption of innovative products should be useful in designing pathways for future innovation in product/processes."),
    obj("Utilize tools for better assessment of uncertain technologies and making investment decisions in R&D."),
];

const PUBLIC: [SeedObjective; 2] = [
    obj("Create a sectoral report on research output as they relate to or address social issues."),
    obj("Create linkages between science, scientist and education strategies"),
];

/// Scorecard seeded with the four perspective goals and their 17 objectives.
/// Every objective gets one placeholder KPI with `target_unset` set.
pub fn seed_default() -> Scorecard {
    let tables: [(PerspectiveKind, &str, &[SeedObjective]); 4] = [
        (PerspectiveKind::Academic, ACADEMIC_GOAL, &ACADEMIC),
        (PerspectiveKind::Government, GOVERNMENT_GOAL, &GOVERNMENT),
        (PerspectiveKind::Industry, INDUSTRY_GOAL, &INDUSTRY),
        (PerspectiveKind::Public, PUBLIC_GOAL, &PUBLIC),
    ];
    let mut card = Scorecard {
        national_goal: DEFAULT_NATIONAL_GOAL.to_string(),
        perspectives: Vec::new(),
        objectives: Vec::new(),
        kpis: Vec::new(),
        links: Vec::new(),
    };
    for (kind, goal, objectives) in tables {
        card.perspectives.push(Perspective {
            kind,
            goal: goal.to_string(),
        });
        for (i, seed) in objectives.iter().enumerate() {
            let id = format!("{}{}", kind.prefix(), i + 1);
            let kpi_id = format!("{id}-K1");
            card.kpis.push(Kpi {
                id: kpi_id.clone(),
                name: format!("{id} progress index"),
                unit: "index".to_string(),
                direction: Direction::HigherIsBetter,
                target: PLACEHOLDER_TARGET,
                current: None,
                kind: KpiKind::Outcome,
                target_unset: true,
            });
            card.objectives.push(Objective {
                id,
                perspective: kind,
                text: seed.text.to_string(),
                annotation: seed.annotation.map(str::to_string),
                kpis: vec![kpi_id],
            });
        }
    }
    card
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpiState {
    OnTrack,
    Behind,
    NoData,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiStatus {
    pub state: KpiState,
    /// Unbounded when the reference value is zero and the other is not.
    pub attainment: Option<f64>,
}

/// Attainment is current/target, or target/current for lower-is-better; 1
/// when both are zero; on track iff attainment >= 1.
pub fn kpi_status(k: &Kpi) -> KpiStatus {
    let Some(current) = k.current else {
        return KpiStatus {
            state: KpiState::NoData,
            attainment: None,
        };
    };
    let (num, den) = match k.direction {
        Direction::HigherIsBetter => (current, k.target),
        Direction::LowerIsBetter => (k.target, current),
    };
    if den == 0.0 {
        // num/0: met exactly at 0/0, otherwise the sign decides
        let met = num >= 0.0;
        return KpiStatus {
            state: if met { KpiState::OnTrack } else { KpiState::Behind },
            attainment: (num == 0.0).then_some(1.0),
        };
    }
    let attainment = num / den;
    KpiStatus {
        state: if attainment >= 1.0 {
            KpiState::OnTrack
        } else {
            KpiState::Behind
        },
        attainment: Some(attainment),
    }
}

/// Required performance level for one requirement label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    pub label: String,
    pub required: f64,
}

/// Measured value of an existing innovation indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Indicator {
    pub label: String,
    pub value: f64,
    #[serde(default)]
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub label: String,
    pub required: f64,
    pub current: Option<f64>,
    pub gap: f64,
    /// current / required; 1 when both are zero, absent when undefined.
    pub ratio: Option<f64>,
    pub missing_indicator: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub entries: Vec<GapEntry>,
}

/// Sorted by descending absolute gap, then label. An unmatched requirement is
/// reported with `gap = required`.
pub fn gap_analysis(requirements: &[Requirement], indicators: &[Indicator]) -> GapReport {
    let mut entries: Vec<GapEntry> = requirements
        .iter()
        .map(|r| match indicators.iter().find(|i| i.label == r.label) {
            Some(ind) => {
                let ratio = if r.required != 0.0 {
                    Some(ind.value / r.required)
                } else if ind.value == 0.0 {
                    Some(1.0)
                } else {
                    None
                };
                GapEntry {
                    label: r.label.clone(),
                    required: r.required,
                    current: Some(ind.value),
                    gap: r.required - ind.value,
                    ratio,
                    missing_indicator: false,
                }
            }
            None => GapEntry {
                label: r.label.clone(),
                required: r.required,
                current: None,
                gap: r.required,
                ratio: None,
                missing_indicator: true,
            },
        })
        .collect();
    entries.sort_by(|a, b| b.gap.abs().total_cmp(&a.gap.abs()).then_with(|| a.label.cmp(&b.label)));
    GapReport { entries }
}

/// Reads `label,value,unit` rows (header required, unit optional).
pub fn read_indicators_csv<R: Read>(reader: R) -> Result<Vec<Indicator>, ScorecardError> {
    #[derive(Deserialize)]
    struct Row {
        label: String,
        value: f64,
        #[serde(default)]
        unit: Option<String>,
    }
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (line, row) in csv.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| ScorecardError::Csv(format!("line {}: {e}", line + 2)))?;
        if !row.value.is_finite() {
            return Err(ScorecardError::Csv(format!("line {}: value is not finite", line + 2)));
        }
        out.push(Indicator {
            label: row.label,
            value: row.value,
            unit: row.unit.unwrap_or_default(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyEntry {
    pub from_objective: String,
    pub to_objective: String,
    pub polarity: Polarity,
    pub strength: f64,
    pub lag: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveDegree {
    pub objective: String,
    pub perspective: PerspectiveKind,
    pub in_degree: usize,
    pub out_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMap {
    pub adjacency: Vec<AdjacencyEntry>,
    pub degrees: Vec<ObjectiveDegree>,
}

/// Adjacency listing ordered by perspective then objective id, with degrees.
pub fn link_map(s: &Scorecard) -> Result<LinkMap, ScorecardError> {
    if let Some(broken) = s
        .validate()
        .errors
        .into_iter()
        .find(|e| e.kind == IssueKind::BrokenReference)
    {
        return Err(ScorecardError::BrokenReference(broken.message));
    }
    let mut adjacency: Vec<AdjacencyEntry> = s
        .links
        .iter()
        .map(|l| AdjacencyEntry {
            from_objective: l.from_objective.clone(),
            to_objective: l.to_objective.clone(),
            polarity: l.polarity,
            strength: l.strength,
            lag: l.lag,
        })
        .collect();
    adjacency.sort_by(|a, b| {
        s.cmp_objectives(&a.from_objective, &b.from_objective)
            .then_with(|| s.cmp_objectives(&a.to_objective, &b.to_objective))
    });
    let mut degrees: Vec<ObjectiveDegree> = s
        .objectives
        .iter()
        .map(|o| ObjectiveDegree {
            objective: o.id.clone(),
            perspective: o.perspective,
            in_degree: s.links.iter().filter(|l| l.to_objective == o.id).count(),
            out_degree: s.links.iter().filter(|l| l.from_objective == o.id).count(),
        })
        .collect();
    degrees.sort_by(|a, b| s.cmp_objectives(&a.objective, &b.objective));
    Ok(LinkMap { adjacency, degrees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kpi(direction: Direction, target: f64, current: Option<f64>) -> Kpi {
        Kpi {
            id: "k".into(),
            name: "k".into(),
            unit: "".into(),
            direction,
            target,
            current,
            kind: KpiKind::Output,
            target_unset: false,
        }
    }

    #[test]
    fn seed_shape() {
        let s = seed_default();
        assert_eq!(s.perspectives.len(), 4);
        assert_eq!(s.objectives.len(), 17);
        let count = |k| s.objectives.iter().filter(|o| o.perspective == k).count();
        assert_eq!(count(PerspectiveKind::Academic), 5);
        assert_eq!(count(PerspectiveKind::Government), 7);
        assert_eq!(count(PerspectiveKind::Industry), 3);
        assert_eq!(count(PerspectiveKind::Public), 2);
        assert_eq!(
            s.objective("A1").unwrap().text,
            "Develop a new taxonomy of science, technology and innovation"
        );
        assert!(s
            .objective("G2")
            .unwrap()
            .text
            .starts_with("Create a roadmap for funding agencies"));
        assert_eq!(s.objective("I1").unwrap().text, "Bridge \"valley of death\"");
        assert!(s.objective("A5").unwrap().annotation.is_none());
        let report = s.validate();
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn objective_without_kpi_warns() {
        let mut s = seed_default();
        s.objectives[0].kpis.clear();
        let r = s.validate();
        assert!(r.is_valid());
        assert_eq!(r.warnings[0].kind, IssueKind::ObjectiveWithoutKpi);
    }

    #[test]
    fn two_cycle_warns() {
        let mut s = seed_default();
        s.add_link(CausalLink::new("A1", "G1", Polarity::Positive, 0.5, 0.0))
            .unwrap();
        s.add_link(CausalLink::new("G1", "A1", Polarity::Positive, 0.5, 1.0))
            .unwrap();
        let r = s.validate();
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].kind, IssueKind::StrategyMapCycle);
        assert_eq!(s.cycles(), vec![vec!["A1".to_string(), "G1".to_string()]]);
    }

    #[test]
    fn broken_references_and_missing_perspective() {
        let mut s = seed_default();
        s.perspectives.pop();
        s.objectives[0].kpis.push("nope".into());
        s.links.push(CausalLink::new("A1", "Z9", Polarity::Negative, 1.0, 0.0));
        let r = s.validate();
        let kinds: Vec<IssueKind> = r.errors.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&IssueKind::MissingPerspective));
        assert_eq!(kinds.iter().filter(|k| **k == IssueKind::BrokenReference).count(), 2);
        assert!(matches!(link_map(&s), Err(ScorecardError::BrokenReference(_))));
    }

    #[test]
    fn add_link_rules() {
        let mut s = seed_default();
        s.add_link(CausalLink::new("A1", "A2", Polarity::Positive, 1.0, 0.0))
            .unwrap();
        assert!(matches!(
            s.add_link(CausalLink::new("A1", "A2", Polarity::Negative, 0.2, 0.0)),
            Err(ScorecardError::DuplicateLink { .. })
        ));
        assert!(matches!(
            s.add_link(CausalLink::new("A1", "A1", Polarity::Positive, 0.2, 0.0)),
            Err(ScorecardError::InvalidLink(_))
        ));
        assert!(matches!(
            s.add_link(CausalLink::new("A1", "A3", Polarity::Positive, 0.0, 0.0)),
            Err(ScorecardError::InvalidLink(_))
        ));
        assert!(matches!(
            s.add_link(CausalLink::new("A1", "A3", Polarity::Positive, 0.5, -1.0)),
            Err(ScorecardError::InvalidLink(_))
        ));
        assert!(matches!(
            s.add_link(CausalLink::new("A1", "X", Polarity::Positive, 0.5, 0.0)),
            Err(ScorecardError::BrokenReference(_))
        ));
    }

    #[test]
    fn polarity_serde() {
        let l = CausalLink::new("A1", "A2", Polarity::Negative, 0.5, 0.0);
        let json = serde_json::to_value(&l).unwrap();
        assert_eq!(json["polarity"], -1);
        let bad = r#"{"from_objective":"a","to_objective":"b","polarity":0,"strength":1}"#;
        assert!(serde_json::from_str::<CausalLink>(bad).is_err());
    }

    #[test]
    fn kpi_status_cases() {
        let s = kpi_status(&kpi(Direction::HigherIsBetter, 100.0, Some(120.0)));
        assert_eq!(s.state, KpiState::OnTrack);
        assert!((s.attainment.unwrap() - 1.2).abs() < 1e-12);
        let s = kpi_status(&kpi(Direction::LowerIsBetter, 10.0, Some(20.0)));
        assert_eq!(s.state, KpiState::Behind);
        assert_eq!(s.attainment, Some(0.5));
        assert_eq!(
            kpi_status(&kpi(Direction::HigherIsBetter, 1.0, None)).state,
            KpiState::NoData
        );
        let s = kpi_status(&kpi(Direction::LowerIsBetter, 0.0, Some(0.0)));
        assert_eq!((s.state, s.attainment), (KpiState::OnTrack, Some(1.0)));
        let s = kpi_status(&kpi(Direction::LowerIsBetter, 5.0, Some(0.0)));
        assert_eq!((s.state, s.attainment), (KpiState::OnTrack, None));
    }

    #[test]
    fn gap_cases() {
        let reqs = vec![
            Requirement {
                label: "a".into(),
                required: 80.0,
            },
            Requirement {
                label: "b".into(),
                required: 50.0,
            },
            Requirement {
                label: "c".into(),
                required: 30.0,
            },
        ];
        let inds = vec![
            Indicator {
                label: "a".into(),
                value: 60.0,
                unit: "".into(),
            },
            Indicator {
                label: "b".into(),
                value: 50.0,
                unit: "".into(),
            },
        ];
        let r = gap_analysis(&reqs, &inds);
        let labels: Vec<&str> = r.entries.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["c", "a", "b"]);
        assert_eq!((r.entries[1].gap, r.entries[1].ratio), (20.0, Some(0.75)));
        assert_eq!((r.entries[2].gap, r.entries[2].ratio), (0.0, Some(1.0)));
        assert!(r.entries[0].missing_indicator);
        assert_eq!(r.entries[0].gap, 30.0);
    }

    #[test]
    fn gap_zero_required() {
        let reqs = vec![Requirement {
            label: "z".into(),
            required: 0.0,
        }];
        let zero = gap_analysis(
            &reqs,
            &[Indicator {
                label: "z".into(),
                value: 0.0,
                unit: "".into(),
            }],
        );
        assert_eq!(zero.entries[0].ratio, Some(1.0));
        let some = gap_analysis(
            &reqs,
            &[Indicator {
                label: "z".into(),
                value: 3.0,
                unit: "".into(),
            }],
        );
        assert_eq!(some.entries[0].ratio, None);
        assert_eq!(some.entries[0].gap, -3.0);
    }

    #[test]
    fn link_map_order_and_degrees() {
        let mut s = seed_default();
        let empty = link_map(&s).unwrap();
        assert!(empty.adjacency.is_empty());
        assert!(empty.degrees.iter().all(|d| d.in_degree == 0 && d.out_degree == 0));

        s.add_link(CausalLink::new("P1", "A1", Polarity::Positive, 0.3, 0.0))
            .unwrap();
        s.add_link(CausalLink::new("A2", "G1", Polarity::Positive, 0.3, 1.0))
            .unwrap();
        s.add_link(CausalLink::new("A2", "A3", Polarity::Negative, 0.3, 0.0))
            .unwrap();
        let m = link_map(&s).unwrap();
        let pairs: Vec<(&str, &str)> = m
            .adjacency
            .iter()
            .map(|e| (e.from_objective.as_str(), e.to_objective.as_str()))
            .collect();
        assert_eq!(pairs, [("A2", "A3"), ("A2", "G1"), ("P1", "A1")]);
        let a2 = m.degrees.iter().find(|d| d.objective == "A2").unwrap();
        assert_eq!((a2.in_degree, a2.out_degree), (0, 2));
        assert_eq!(m.degrees.iter().map(|d| d.in_degree).sum::<usize>(), 3);
        assert_eq!(m.degrees.iter().map(|d| d.out_degree).sum::<usize>(), 3);
        assert_eq!(m.degrees[0].objective, "A1");
        assert_eq!(m.degrees[16].objective, "P2");
    }

    #[test]
    fn indicators_csv() {
        let data = "label,value,unit\nA1-K1,42,index\nfunding,3.5,\n";
        let inds = read_indicators_csv(data.as_bytes()).unwrap();
        assert_eq!(inds.len(), 2);
        assert_eq!(inds[0].unit, "index");
        let mut s = seed_default();
        assert_eq!(s.apply_indicators(&inds), 1);
        assert_eq!(s.kpi("A1-K1").unwrap().current, Some(42.0));
        assert!(matches!(
            read_indicators_csv("label,value\nx,abc\n".as_bytes()),
            Err(ScorecardError::Csv(_))
        ));
    }
}
