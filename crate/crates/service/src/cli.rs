use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{self, Read, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use esi_core::delphi::Response;
use esi_core::dematel::{parse_ratio, DematelOptions};
use esi_core::pipeline::{AdvanceRequest, EvidenceRequest, PipelineError};
use esi_core::scorecard::{CausalLink, Polarity};
use esi_core::sdm::{CompileOptions, Scenario, DEFAULT_DT};
use esi_core::{Error, Result, Stage, Store};
use serde::Serialize;

use crate::api::{router, ApiError};
use crate::ops::{self, malformed, parse_json};
use crate::render;

#[derive(Debug, Parser)]
#[command(name = "esi", version, about = "Facilitator CLI for innovation-policy projects")]
pub struct Cli {
    /// Directory holding the project store.
    #[arg(long, env = "ESI_DATA_DIR", default_value = "esi-data", global = true)]
    pub data_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
    /// How long a write waits for another writer on the same project.
    #[arg(long, env = "ESI_LEASE_TIMEOUT_MS", default_value_t = 5000, global = true)]
    pub lease_timeout_ms: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(subcommand)]
    Project(ProjectCmd),
    #[command(subcommand)]
    Delphi(DelphiCmd),
    #[command(subcommand)]
    Dematel(DematelCmd),
    #[command(subcommand)]
    Ahp(AhpCmd),
    #[command(subcommand)]
    Scorecard(ScorecardCmd),
    #[command(subcommand)]
    Sdm(SdmCmd),
    /// Run the HTTP API over the same store.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProjectCmd {
    New {
        #[arg(long)]
        goal: Option<String>,
    },
    Show {
        id: String,
    },
    List,
    /// Move to the next stage using evidence from the workspace.
    Advance {
        id: String,
        #[arg(value_enum)]
        evidence: EvidenceKind,
        /// Rating round to use for delphi-consensus (default: latest).
        #[arg(long)]
        round: Option<u32>,
        /// Justification for facilitator-override.
        #[arg(long)]
        reason: Option<String>,
        /// Stage the caller expects to reach.
        #[arg(long, value_parser = parse_stage)]
        target: Option<Stage>,
    },
    /// Replace project settings from a JSON file ("-" for stdin).
    Settings {
        id: String,
        file: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvidenceKind {
    DelphiConsensus,
    FacilitatorOverride,
    Gaps,
    AhpRanking,
    Scorecard,
    SdmModel,
}

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum DelphiCmd {
    /// Open round 1 from an opinions file, or the next rating round without one.
    Open {
        id: String,
        /// JSON list of {"text", "heading"} opinions.
        #[arg(long)]
        opinions: Option<PathBuf>,
        /// JSON object mapping heading to drafted statement text.
        #[arg(long)]
        drafts: Option<PathBuf>,
    },
    Show {
        id: String,
        round: u32,
    },
    /// Issue an anonymous panelist token.
    Token {
        id: String,
    },
    /// Submit one response, from a JSON file or from flags.
    Respond {
        id: String,
        round: u32,
        #[arg(long, conflicts_with_all = ["panelist", "rating", "rank"])]
        file: Option<PathBuf>,
        #[arg(long)]
        panelist: Option<String>,
        /// Statement rating as ID=VALUE; repeat per statement.
        #[arg(long, value_parser = parse_assignment::<i64>)]
        rating: Vec<(String, i64)>,
        /// Comma-separated statement ids, most important first.
        #[arg(long, value_delimiter = ',')]
        rank: Option<Vec<String>>,
    },
    /// Import panelist_id,statement_id,rating rows.
    ImportCsv {
        id: String,
        round: u32,
        file: PathBuf,
    },
    Summarize {
        id: String,
        round: u32,
    },
    Decide {
        id: String,
        round: u32,
    },
    /// Change the consensus thresholds.
    Policy {
        id: String,
        #[arg(long)]
        iqr_max: Option<f64>,
        #[arg(long)]
        w_min: Option<f64>,
        #[arg(long)]
        max_rounds: Option<u32>,
    },
}

fn parse_assignment<T: std::str::FromStr>(s: &str) -> std::result::Result<(String, T), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    let value = value
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse value in {s:?}"))?;
    Ok((name.trim().to_string(), value))
}

#[derive(Debug, Subcommand)]
pub enum DematelCmd {
    /// Analyze a direct-influence matrix (labeled CSV or JSON).
    Run {
        id: String,
        file: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        /// Fixed normalization divisor instead of the largest row sum.
        #[arg(long)]
        scale: Option<f64>,
    },
    Show {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum AhpCmd {
    /// Build the hierarchy from the requirements and the candidate tools.
    Init {
        id: String,
        #[arg(long = "tool", required = true)]
        tools: Vec<String>,
    },
    /// Show the hierarchy, or replace it from a JSON file.
    Hierarchy {
        id: String,
        #[arg(long)]
        set: Option<PathBuf>,
    },
    ShowMatrix {
        id: String,
        node: String,
    },
    /// Enter a node's judgments.
    Edit {
        id: String,
        node: String,
        /// Entries above the diagonal in row order, e.g. "3,5,1/3".
        #[arg(long, value_delimiter = ',', conflicts_with = "file")]
        upper: Option<Vec<String>>,
        /// JSON {"matrix"|"upper", "labels"?} or a labeled CSV matrix.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    Rank {
        id: String,
        /// Rank even when a matrix fails the consistency threshold.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScorecardCmd {
    Seed {
        id: String,
    },
    Show {
        id: String,
    },
    /// Replace the scorecard from a JSON file.
    Import {
        id: String,
        file: PathBuf,
    },
    Link {
        id: String,
        from: String,
        to: String,
        #[arg(long)]
        negative: bool,
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
        #[arg(long, default_value_t = 0.0)]
        lag: f64,
    },
    Validate {
        id: String,
    },
    Map {
        id: String,
    },
    /// Replace the requirement list from a JSON file.
    Requirements {
        id: String,
        file: PathBuf,
    },
    /// Replace the indicator set (CSV or JSON); with --kpis, apply values to KPIs instead.
    Indicators {
        id: String,
        file: PathBuf,
        #[arg(long)]
        kpis: bool,
    },
    Gaps {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum SdmCmd {
    Compile {
        id: String,
        #[command(flatten)]
        opts: CompileArgs,
    },
    /// Replace the model from a JSON file.
    Import {
        id: String,
        file: PathBuf,
    },
    Show {
        id: String,
    },
    /// Run a scenario; prints the trajectory as CSV.
    Simulate {
        id: String,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
        /// Constant override as NAME=VALUE; repeatable.
        #[arg(long = "set", value_parser = parse_assignment::<f64>)]
        overrides: Vec<(String, f64)>,
    },
    /// Write a saved run as CSV.
    Export {
        id: String,
        run: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate an expression against an environment (JSON {"expression", "env"}).
    Eval {
        file: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[arg(long)]
    k_gain: Option<f64>,
    #[arg(long)]
    k_decay: Option<f64>,
    #[arg(long)]
    no_clamp: bool,
}

enum Output {
    Doc { json: serde_json::Value, table: String },
    Raw(String),
}

fn doc<T: Serialize>(value: &T, table: String) -> Output {
    Output::Doc {
        json: serde_json::to_value(value).expect("output types serialize"),
        table,
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let result = if path == Path::new("-") {
        io::stdin().read_to_end(&mut buf).map(|_| ())
    } else {
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map(|_| ())
    };
    result.map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            PipelineError::NotFound(format!("input file {}", path.display())).into()
        } else {
            Error::from(PipelineError::Io(format!("{}: {e}", path.display())))
        }
    })?;
    Ok(buf)
}

fn looks_like_json(bytes: &[u8]) -> bool {
    matches!(bytes.iter().find(|b| !b.is_ascii_whitespace()), Some(b'{' | b'['))
}

/// Parses argv and runs one command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let store = Store::new(&cli.data_dir).with_lease_timeout(Duration::from_millis(cli.lease_timeout_ms));
    let format = cli.format;
    match execute(&store, cli.command) {
        Ok(Output::Raw(text)) => {
            print!("{text}");
            0
        }
        Ok(Output::Doc { json, table }) => {
            match format {
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&json).expect("JSON values serialize")
                ),
                Format::Table => print!("{table}"),
            }
            0
        }
        Err(e) => {
            let err = ApiError::from(e);
            let mut stderr = io::stderr().lock();
            let _ = match format {
                Format::Json => writeln!(stderr, "{}", serde_json::to_string(&err).expect("errors serialize")),
                Format::Table => writeln!(stderr, "error[{}]: {}", err.code, err.message),
            };
            if err.code.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(store: &Store, command: Command) -> Result<Output> {
    match command {
        Command::Project(cmd) => project(store, cmd),
        Command::Delphi(cmd) => delphi(store, cmd),
        Command::Dematel(cmd) => dematel(store, cmd),
        Command::Ahp(cmd) => ahp(store, cmd),
        Command::Scorecard(cmd) => scorecard(store, cmd),
        Command::Sdm(cmd) => sdm(store, cmd),
        Command::Serve { addr } => serve(store.clone(), addr),
    }
}

fn project(store: &Store, cmd: ProjectCmd) -> Result<Output> {
    Ok(match cmd {
        ProjectCmd::New { goal } => {
            let p = ops::create_project(store, ops::NewProject { goal })?;
            doc(&p, render::project(&p))
        }
        ProjectCmd::Show { id } => {
            let p = ops::get_project(store, &id)?;
            doc(&p, render::project(&p))
        }
        ProjectCmd::List => {
            let list = ops::list_projects(store)?;
            doc(&list, render::project_list(&list))
        }
        ProjectCmd::Advance {
            id,
            evidence,
            round,
            reason,
            target,
        } => {
            let evidence = match evidence {
                EvidenceKind::DelphiConsensus => EvidenceRequest::DelphiConsensus { round },
                EvidenceKind::FacilitatorOverride => EvidenceRequest::FacilitatorOverride {
                    reason: reason.unwrap_or_default(),
                },
                EvidenceKind::Gaps => EvidenceRequest::Gaps,
                EvidenceKind::AhpRanking => EvidenceRequest::AhpRanking,
                EvidenceKind::Scorecard => EvidenceRequest::Scorecard,
                EvidenceKind::SdmModel => EvidenceRequest::SdmModel,
            };
            let p = ops::advance(store, &id, AdvanceRequest { evidence, target })?;
            doc(&p, render::project(&p))
        }
        ProjectCmd::Settings { id, file } => {
            let settings = ops::set_settings(store, &id, parse_json(&read_input(&file)?)?)?;
            doc(&settings, render::json(&settings))
        }
    })
}

fn delphi(store: &Store, cmd: DelphiCmd) -> Result<Output> {
    Ok(match cmd {
        DelphiCmd::Open { id, opinions, drafts } => {
            let opinions = opinions
                .map(|f| read_input(&f).and_then(|b| parse_json(&b)))
                .transpose()?;
            let drafts = drafts
                .map(|f| read_input(&f).and_then(|b| parse_json(&b)))
                .transpose()?
                .unwrap_or_default();
            let view = ops::open_round(store, &id, ops::OpenRound { opinions, drafts })?;
            doc(&view, render::round(&view))
        }
        DelphiCmd::Show { id, round } => {
            let view = ops::get_round(store, &id, round)?;
            doc(&view, render::round(&view))
        }
        DelphiCmd::Token { id } => {
            let token = ops::issue_token(store, &id)?;
            doc(&token, format!("{}\n", token.token))
        }
        DelphiCmd::Respond {
            id,
            round,
            file,
            panelist,
            rating,
            rank,
        } => {
            let submission = match file {
                Some(f) => parse_json(&read_input(&f)?)?,
                None => ops::Submission::One(Response {
                    panelist_id: panelist.ok_or_else(|| malformed("--panelist or --file is required"))?,
                    round_index: round,
                    ratings: rating.into_iter().collect::<BTreeMap<_, _>>(),
                    rank_order: rank,
                }),
            };
            let acks = ops::submit(store, &id, round, submission)?;
            doc(&acks, render::acks(&acks))
        }
        DelphiCmd::ImportCsv { id, round, file } => {
            let acks = ops::import_csv(store, &id, round, &read_input(&file)?)?;
            doc(&acks, render::acks(&acks))
        }
        DelphiCmd::Summarize { id, round } => {
            let s = ops::summary(store, &id, round)?;
            doc(&s, render::summary(&s))
        }
        DelphiCmd::Decide { id, round } => {
            let d = ops::decision(store, &id, round)?;
            doc(&d, render::decision(&d))
        }
        DelphiCmd::Policy {
            id,
            iqr_max,
            w_min,
            max_rounds,
        } => {
            let mut policy = ops::get_project(store, &id)?.workspace.panel.policy;
            policy.iqr_max = iqr_max.unwrap_or(policy.iqr_max);
            policy.w_min = w_min.unwrap_or(policy.w_min);
            policy.max_rounds = max_rounds.unwrap_or(policy.max_rounds);
            let policy = ops::set_policy(store, &id, policy)?;
            doc(&policy, render::json(&policy))
        }
    })
}

fn dematel(store: &Store, cmd: DematelCmd) -> Result<Output> {
    Ok(match cmd {
        DematelCmd::Run { id, file, alpha, scale } => {
            let bytes = read_input(&file)?;
            let (direct, mut opts) = if looks_like_json(&bytes) {
                let input: ops::DematelInput = parse_json(&bytes)?;
                (input.direct()?, input.options)
            } else {
                (ops::read_dematel_csv(&bytes)?, DematelOptions::default())
            };
            opts.alpha = alpha.or(opts.alpha);
            opts.scale = scale.or(opts.scale);
            let a = ops::run_dematel(store, &id, direct, opts)?;
            doc(&a, render::dematel(&a))
        }
        DematelCmd::Show { id } => {
            let a = ops::dematel_result(store, &id)?;
            doc(&a, render::dematel(&a))
        }
    })
}

fn ahp(store: &Store, cmd: AhpCmd) -> Result<Output> {
    Ok(match cmd {
        AhpCmd::Init { id, tools } => {
            let h = ops::init_ahp(store, &id, ops::AhpInit { tools })?;
            doc(&h, render::hierarchy(&h))
        }
        AhpCmd::Hierarchy { id, set } => {
            let h = match set {
                Some(f) => ops::set_hierarchy(store, &id, parse_json(&read_input(&f)?)?)?,
                None => ops::get_hierarchy(store, &id)?,
            };
            doc(&h, render::hierarchy(&h))
        }
        AhpCmd::ShowMatrix { id, node } => {
            let m = ops::get_matrix(store, &id, &node)?;
            doc(&m, render::matrix(&m))
        }
        AhpCmd::Edit { id, node, upper, file } => {
            let input = match (upper, file) {
                (Some(cells), None) => {
                    let upper = cells
                        .iter()
                        .map(|c| parse_ratio(c).ok_or_else(|| malformed(format!("cannot read judgment {c:?}"))))
                        .collect::<Result<Vec<f64>>>()?;
                    ops::MatrixInput {
                        upper: Some(upper),
                        ..Default::default()
                    }
                }
                (None, Some(f)) => {
                    let bytes = read_input(&f)?;
                    if looks_like_json(&bytes) {
                        parse_json(&bytes)?
                    } else {
                        ops::read_matrix_csv(&bytes)?
                    }
                }
                _ => return Err(malformed("give --upper or --file")),
            };
            let r = ops::put_matrix(store, &id, &node, input)?;
            doc(&r, render::priorities(&r))
        }
        AhpCmd::Rank { id, force } => {
            let s = ops::ranking(store, &id, force)?;
            doc(&s, render::synthesis(&s))
        }
    })
}

fn scorecard(store: &Store, cmd: ScorecardCmd) -> Result<Output> {
    Ok(match cmd {
        ScorecardCmd::Seed { id } => {
            let card = ops::seed_scorecard(store, &id)?;
            doc(&card, render::scorecard(&card))
        }
        ScorecardCmd::Show { id } => {
            let card = ops::get_scorecard(store, &id)?;
            doc(&card, render::scorecard(&card))
        }
        ScorecardCmd::Import { id, file } => {
            let report = ops::put_scorecard(store, &id, parse_json(&read_input(&file)?)?)?;
            doc(&report, render::validation(&report))
        }
        ScorecardCmd::Link {
            id,
            from,
            to,
            negative,
            strength,
            lag,
        } => {
            let polarity = if negative {
                Polarity::Negative
            } else {
                Polarity::Positive
            };
            let map = ops::add_link(store, &id, CausalLink::new(from, to, polarity, strength, lag))?;
            doc(&map, render::link_map(&map))
        }
        ScorecardCmd::Validate { id } => {
            let report = ops::validation(store, &id)?;
            let report = report.into_result()?;
            doc(&report, render::validation(&report))
        }
        ScorecardCmd::Map { id } => {
            let map = ops::link_map(store, &id)?;
            doc(&map, render::link_map(&map))
        }
        ScorecardCmd::Requirements { id, file } => {
            let reqs = ops::set_requirements(store, &id, parse_json(&read_input(&file)?)?)?;
            doc(&reqs, render::requirements(&reqs))
        }
        ScorecardCmd::Indicators { id, file, kpis } => {
            let bytes = read_input(&file)?;
            let indicators = if looks_like_json(&bytes) {
                parse_json(&bytes)?
            } else {
                ops::read_indicators_csv(&bytes)?
            };
            if kpis {
                let update = ops::apply_indicators(store, &id, indicators)?;
                doc(&update, format!("{} KPI(s) updated\n", update.matched))
            } else {
                let set = ops::set_indicators(store, &id, indicators)?;
                doc(&set, render::indicators(&set))
            }
        }
        ScorecardCmd::Gaps { id } => {
            let report = ops::gaps(store, &id)?;
            doc(&report, render::gaps(&report))
        }
    })
}

fn sdm(store: &Store, cmd: SdmCmd) -> Result<Output> {
    Ok(match cmd {
        SdmCmd::Compile { id, opts } => {
            let base = ops::get_project(store, &id)?.settings.compile;
            let opts = CompileOptions {
                k_gain: opts.k_gain.unwrap_or(base.k_gain),
                k_decay: opts.k_decay.unwrap_or(base.k_decay),
                clamp: base.clamp && !opts.no_clamp,
                ..base
            };
            let m = ops::compile(store, &id, Some(opts))?;
            doc(&m, render::model(&m))
        }
        SdmCmd::Import { id, file } => {
            let m = ops::put_model(store, &id, parse_json(&read_input(&file)?)?)?;
            doc(&m, render::model(&m))
        }
        SdmCmd::Show { id } => {
            let m = ops::get_model(store, &id)?;
            doc(&m, render::model(&m))
        }
        SdmCmd::Simulate {
            id,
            horizon,
            dt,
            overrides,
        } => {
            let scenario = Scenario {
                overrides: overrides.into_iter().collect(),
                horizon,
                dt,
            };
            let run = ops::simulate(store, &id, scenario)?;
            let csv = ops::trajectory_csv(&run)?;
            doc(&run, csv)
        }
        SdmCmd::Export { id, run, output } => {
            let run = ops::trajectory(store, &id, &run)?;
            let csv = ops::trajectory_csv(&run)?;
            match output {
                Some(path) => {
                    std::fs::write(&path, csv)
                        .map_err(|e| Error::from(PipelineError::Io(format!("{}: {e}", path.display()))))?;
                    Output::Raw(String::new())
                }
                None => Output::Raw(csv),
            }
        }
        SdmCmd::Eval { file } => {
            let out = ops::eval(&parse_json(&read_input(&file)?)?)?;
            doc(&out, format!("{}\n", out.value))
        }
    })
}

fn serve(store: Store, addr: SocketAddr) -> Result<Output> {
    let io_err = |e: io::Error| Error::from(PipelineError::Io(e.to_string()));
    let runtime = tokio::runtime::Runtime::new().map_err(io_err)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(io_err)?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(io_err)?);
        axum::serve(listener, router(store)).await.map_err(io_err)
    })?;
    Ok(Output::Raw(String::new()))
}
