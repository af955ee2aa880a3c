//! Plain-text tables for `--format table`.

use std::fmt::Write;

use esi_core::ahp::{Hierarchy, PriorityResult, Synthesis};
use esi_core::delphi::{Ack, RoundSummary};
use esi_core::dematel::{DematelAnalysis, Group};
use esi_core::scorecard::{GapReport, Indicator, LinkMap, Requirement, Scorecard, ValidationReport};
use esi_core::sdm::SdmModel;
use esi_core::Project;
use serde::Serialize;

use crate::ops::{DecisionView, MatrixView, ProjectSummary, RoundView};

/// Left-aligned columns separated by two spaces.
fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:<w$}");
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(&mut headers.iter().copied());
    for row in rows {
        out += &line(&mut row.iter().map(String::as_str));
    }
    out
}

fn num(x: f64) -> String {
    format!("{x:.4}")
}

pub fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output types serialize") + "\n"
}

pub fn project(p: &Project) -> String {
    let mut out = format!("id     {}\ngoal   {}\nstage  {}\n", p.id, p.national_goal, p.stage);
    if !p.audit.is_empty() {
        out.push('\n');
        let rows: Vec<Vec<String>> = p
            .audit
            .iter()
            .map(|a| {
                vec![
                    a.seq.to_string(),
                    a.from.to_string(),
                    a.to.to_string(),
                    a.evidence.kind().to_string(),
                    a.at.to_rfc3339(),
                ]
            })
            .collect();
        out += &table(&["seq", "from", "to", "evidence", "at"], &rows);
    }
    out
}

pub fn project_list(list: &[ProjectSummary]) -> String {
    let rows: Vec<Vec<String>> = list
        .iter()
        .map(|p| vec![p.id.clone(), p.stage.to_string(), p.national_goal.clone()])
        .collect();
    table(&["id", "stage", "goal"], &rows)
}

pub fn round(view: &RoundView) -> String {
    let r = &view.round;
    let mut out = format!("round {} ({:?})\n", r.index, r.status).to_lowercase();
    let rows: Vec<Vec<String>> = view
        .statements
        .iter()
        .map(|s| {
            let mut row = vec![s.id.clone(), s.heading.clone(), s.text.clone()];
            if let Some(f) = r
                .feedback
                .as_ref()
                .and_then(|f| f.entries.iter().find(|e| e.statement_id == s.id))
            {
                row.push(format!("median {} iqr {}", f.median, f.iqr));
            }
            row
        })
        .collect();
    let headers: &[&str] = if r.feedback.is_some() {
        &["id", "heading", "statement", "previous round"]
    } else {
        &["id", "heading", "statement"]
    };
    out += &table(headers, &rows);
    out
}

pub fn acks(acks: &[Ack]) -> String {
    let rows: Vec<Vec<String>> = acks
        .iter()
        .map(|a| vec![a.panelist_id.clone(), a.round_index.to_string(), a.replaced.to_string()])
        .collect();
    let mut out = table(&["panelist", "round", "replaced"], &rows);
    if let Some(last) = acks.last() {
        let _ = writeln!(
            out,
            "{} response(s) stored for round {}",
            last.stored_responses, last.round_index
        );
    }
    out
}

pub fn summary(s: &RoundSummary) -> String {
    let rows: Vec<Vec<String>> = s
        .statements
        .iter()
        .map(|st| {
            vec![
                st.statement_id.clone(),
                st.median.to_string(),
                st.q1.to_string(),
                st.q3.to_string(),
                st.iqr.to_string(),
                st.histogram.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    let mut out = table(&["statement", "median", "q1", "q3", "iqr", "histogram 1-9"], &rows);
    let _ = writeln!(
        out,
        "respondents {}  kendall W {} ({:?})",
        s.respondent_count,
        num(s.kendall_w),
        s.w_source
    );
    out
}

pub fn decision(d: &DecisionView) -> String {
    let mut out = summary(&d.summary);
    let _ = writeln!(
        out,
        "decision {:?} (W >= {}, IQR <= {}, max rounds {})",
        d.decision, d.policy.w_min, d.policy.iqr_max, d.policy.max_rounds
    );
    out
}

pub fn dematel(a: &DematelAnalysis) -> String {
    let t = &a.total;
    let rows: Vec<Vec<String>> = a
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let group = match g.group {
                Group::Cause => "cause",
                Group::Effect => "effect",
            };
            vec![
                g.factor.clone(),
                num(t.r[i]),
                num(t.c[i]),
                num(g.prominence),
                num(g.relation),
                group.to_string(),
            ]
        })
        .collect();
    let mut out = table(&["factor", "R", "C", "R+C", "R-C", "group"], &rows);
    let _ = writeln!(
        out,
        "threshold {}  edges {}",
        num(a.digraph.alpha),
        a.digraph.edges.len()
    );
    out
}

pub fn hierarchy(h: &Hierarchy) -> String {
    let mut out = format!("goal  {}\nalternatives  {}\n", h.goal, h.alternatives.join(", "));
    let rows: Vec<Vec<String>> = h
        .nodes()
        .into_iter()
        .map(|n| vec![n.node, n.label, n.compares.join(", ")])
        .collect();
    out += &table(&["node", "label", "compares"], &rows);
    out
}

pub fn matrix(m: &MatrixView) -> String {
    let mut headers = vec![""];
    headers.extend(m.matrix.labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = m
        .matrix
        .labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let mut row = vec![label.clone()];
            row.extend(m.matrix.entries.row(i).iter().map(|x| num(*x)));
            row
        })
        .collect();
    let mut out = format!("node {} ({})\n", m.spec.node, m.spec.label);
    out += &table(&headers, &rows);
    if let Some(p) = &m.priorities {
        out += &priorities(p);
    }
    out
}

pub fn priorities(p: &PriorityResult) -> String {
    let rows: Vec<Vec<String>> = p
        .labels
        .iter()
        .zip(&p.weights)
        .map(|(l, w)| vec![l.clone(), num(*w)])
        .collect();
    let mut out = table(&["label", "weight"], &rows);
    let _ = writeln!(
        out,
        "lambda_max {}  CI {}  CR {}  {}",
        num(p.lambda_max),
        num(p.ci),
        num(p.cr),
        if p.consistent { "consistent" } else { "inconsistent" }
    );
    out
}

pub fn synthesis(s: &Synthesis) -> String {
    let rows: Vec<Vec<String>> = s
        .ranking
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                r.label.clone(),
                num(r.weight),
                if r.tied { "tied".into() } else { String::new() },
            ]
        })
        .collect();
    let mut out = table(&["rank", "alternative", "weight", ""], &rows);
    if s.forced {
        out += "forced: some matrices exceed the consistency threshold\n";
    }
    out
}

pub fn scorecard(s: &Scorecard) -> String {
    let mut out = format!("{}\n\n", s.national_goal);
    let rows: Vec<Vec<String>> = s
        .objectives
        .iter()
        .map(|o| {
            vec![
                o.id.clone(),
                format!("{:?}", o.perspective),
                o.text.clone(),
                o.kpis.join(", "),
            ]
        })
        .collect();
    out += &table(&["id", "perspective", "objective", "kpis"], &rows);
    let _ = writeln!(out, "{} link(s)", s.links.len());
    out
}

pub fn validation(r: &ValidationReport) -> String {
    let mut out = format!("{} error(s), {} warning(s)\n", r.errors.len(), r.warnings.len());
    for e in &r.errors {
        let _ = writeln!(out, "error    {:?}: {}", e.kind, e.message);
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning  {:?}: {}", w.kind, w.message);
    }
    out
}

pub fn link_map(m: &LinkMap) -> String {
    let rows: Vec<Vec<String>> = m
        .adjacency
        .iter()
        .map(|a| {
            vec![
                a.from_objective.clone(),
                a.to_objective.clone(),
                i8::from(a.polarity).to_string(),
                num(a.strength),
                num(a.lag),
            ]
        })
        .collect();
    let mut out = table(&["from", "to", "polarity", "strength", "lag"], &rows);
    out.push('\n');
    let rows: Vec<Vec<String>> = m
        .degrees
        .iter()
        .map(|d| vec![d.objective.clone(), d.in_degree.to_string(), d.out_degree.to_string()])
        .collect();
    out += &table(&["objective", "in", "out"], &rows);
    out
}

pub fn requirements(reqs: &[Requirement]) -> String {
    let rows: Vec<Vec<String>> = reqs.iter().map(|r| vec![r.label.clone(), num(r.required)]).collect();
    table(&["requirement", "required"], &rows)
}

pub fn indicators(inds: &[Indicator]) -> String {
    let rows: Vec<Vec<String>> = inds
        .iter()
        .map(|i| vec![i.label.clone(), num(i.value), i.unit.clone()])
        .collect();
    table(&["indicator", "value", "unit"], &rows)
}

pub fn gaps(r: &GapReport) -> String {
    let opt = |x: Option<f64>| x.map(num).unwrap_or_else(|| "-".into());
    let rows: Vec<Vec<String>> = r
        .entries
        .iter()
        .map(|e| {
            vec![
                e.label.clone(),
                num(e.required),
                opt(e.current),
                num(e.gap),
                opt(e.ratio),
                if e.missing_indicator {
                    "no indicator".into()
                } else {
                    String::new()
                },
            ]
        })
        .collect();
    table(&["requirement", "required", "current", "gap", "ratio", ""], &rows)
}

pub fn model(m: &SdmModel) -> String {
    format!(
        "stocks {}  flows {}  auxiliaries {}  constants {}  delays {}  clamp {}\n",
        m.stocks.len(),
        m.flows.len(),
        m.auxiliaries.len(),
        m.constants.len(),
        m.delays.len(),
        m.clamp
    )
}
