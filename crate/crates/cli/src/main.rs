//! `ergoflow`: construct, verify, flow, probe, export.
//!
//! Exit codes: 0 every check passed, 1 a margin failed or a construction step
//! is infeasible, 2 usage or input error, 3 an enclosure stayed undecided.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ergoflow_core::construction::{construct, conditions_report, witness_report, ConstructionParams, ConstructionState, ModeKind};
use ergoflow_core::flow::{correlation_csv, correlation_probe, flow_advance, rigidity_times, FlowObservable, FlowPoint};
use ergoflow_core::report::VerificationReport;
use ergoflow_core::roof::RoofSpec;
use ergoflow_core::skew::{SkewConfig, SlitMode};
use ergoflow_core::suites::{run_suite, SuiteContext, SUITES};
use ergoflow_core::torus::{CircleSet, TorusIntervalSet, TorusPoint};
use ergoflow_core::{desk, fmt_q, parse_q, LabError, LogSum, Verdict, Q};
use serde::Serialize;

use config::{parse_mode, FileConfig};

pub const PRECISION_ENV: &str = "ERGOFLOW_PRECISION_BITS";

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        let code = match &e {
            LabError::Undecided { .. } => 3,
            LabError::Parse(_)
            | LabError::Precondition(_)
            | LabError::InvalidSchedule(_)
            | LabError::InsufficientPrefix { .. }
            | LabError::DegenerateAngle
            | LabError::ClassViolation(_)
            | LabError::RegionUndefined(_)
            | LabError::Unsupported(_) => 2,
            _ => 1,
        };
        Failure { code, msg: e.to_string() }
    }
}

type Res<T> = Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "ergoflow", version, about = "Exact-arithmetic lab for a special flow over a Z2 skew product of a rotation")]
struct Cli {
    /// flat key-value config file with [run], [relaxed], [criterion] sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// ceiling for enclosure precision escalation (>= 64); also ERGOFLOW_PRECISION_BITS
    #[arg(long, global = true)]
    precision_bits: Option<u32>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build construction stages and check every condition
    Construct(ConstructArgs),
    /// Run one verification suite
    Verify(VerifyArgs),
    /// Advance a point of the flow by an exact time
    Flow(FlowArgs),
    /// Seeded Monte-Carlo correlation estimates (diagnostic, not certified)
    Probe(ProbeArgs),
    /// Merge report files into one tidy table
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct ModeArgs {
    #[arg(long)]
    mode: Option<String>,
    /// window multiplier τ (relaxed mode only)
    #[arg(long)]
    tau: Option<String>,
}

#[derive(Args, Debug)]
struct ConstructArgs {
    #[command(flatten)]
    mode: ModeArgs,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    cap_bits: Option<u64>,
    /// output directory
    #[arg(long, default_value = "ergoflow-out")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// built-in schedule name (desk, desk-248, desk-268, desk-468, toy) or a schedule file
    #[arg(long, conflicts_with = "state")]
    schedule: Option<String>,
    /// construction state written by `construct`
    #[arg(long)]
    state: Option<PathBuf>,
    #[command(flatten)]
    mode: ModeArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    suite: String,
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "ergoflow-out")]
    output: PathBuf,
    /// format echoed to stdout; both files are always written
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args, Debug)]
struct FlowArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    x: String,
    #[arg(long, default_value_t = 0)]
    level: u8,
    #[arg(long, default_value = "0")]
    height: String,
    #[arg(long)]
    time: String,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// comma-separated times; default: rigidity times of the state, else a generic ladder
    #[arg(long)]
    times: Option<String>,
    /// CSV file; stdout when absent
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// directory holding `*.json` reports from `verify` and `construct`
    #[arg(long, default_value = "ergoflow-out")]
    reports: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// file; stdout when absent
    #[arg(long)]
    output: Option<PathBuf>,
}

struct Globals {
    file: FileConfig,
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(v) => ExitCode::from(verdict_code(v)),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn verdict_code(v: Verdict) -> u8 {
    match v {
        Verdict::Pass => 0,
        Verdict::Fail => 1,
        Verdict::Undecided => 3,
    }
}

fn run(cli: Cli) -> Res<Verdict> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let env_bits = match std::env::var(PRECISION_ENV) {
        Ok(v) => Some(v.trim().parse::<u32>().map_err(|_| Failure::usage(format!("{} must be an integer, got {:?}", PRECISION_ENV, v)))?),
        Err(_) => None,
    };
    if let Some(bits) = cli.precision_bits.or(env_bits).or(file.precision_bits) {
        if bits < 64 {
            return Err(Failure::usage("precision bits must be at least 64"));
        }
        ergoflow_core::encl::set_precision_ceiling(bits);
    }
    let g = Globals { workers: cli.workers.or(file.workers), file };
    match cli.cmd {
        Cmd::Construct(a) => cmd_construct(&g, a),
        Cmd::Verify(a) => cmd_verify(&g, a),
        Cmd::Flow(a) => cmd_flow(&g, a),
        Cmd::Probe(a) => cmd_probe(&g, a),
        Cmd::Export(a) => cmd_export(a),
    }
}

fn rational(what: &str, s: &str) -> Res<Q> {
    parse_q(s.trim()).map_err(|e| Failure::usage(format!("--{}: {}", what, e)))
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::usage(format!("{}: {}", path.display(), e))
}

fn write(path: &Path, text: &str) -> Res<()> {
    fs::write(path, text).map_err(|e| Failure { code: 1, msg: format!("cannot write {}: {}", path.display(), e) })
}

fn params(g: &Globals, m: &ModeArgs) -> Res<ConstructionParams> {
    let mode = match &m.mode {
        Some(s) => parse_mode(s)?,
        None => g.file.mode.unwrap_or(ModeKind::Relaxed),
    };
    let mut p = match mode {
        ModeKind::Faithful => ConstructionParams::faithful(),
        ModeKind::Relaxed => ConstructionParams::relaxed(),
    };
    g.file.apply_relaxed(&mut p)?;
    if let Some(t) = &m.tau {
        if mode == ModeKind::Faithful {
            return Err(Failure::usage("--tau is a relaxed-mode override"));
        }
        p = p.with_tau(&rational("tau", t)?);
    }
    p.workers = g.workers;
    Ok(p)
}

fn construction_report(st: &ConstructionState) -> Res<VerificationReport> {
    let mut rep = conditions_report(st)?;
    for k in 1..=st.stage {
        if st.witness(k).is_some() {
            rep.extend(witness_report(st, k)?);
        }
    }
    for m in &st.magnitude {
        rep.constant(format!("magnitude certificate ({})", m.quantity), format!("{} >= coefficient {} x q_{}; q has more than {} bits", m.log_bound, m.coefficient, m.q_ref, m.bits));
    }
    rep.title = "construct".into();
    Ok(rep)
}

fn cmd_construct(g: &Globals, a: ConstructArgs) -> Res<Verdict> {
    let mut p = params(g, &a.mode)?;
    if let Some(b) = a.cap_bits.or(g.file.cap_bits) {
        p.cap_bits = b;
    }
    let stages = a.stages.or(g.file.stages).unwrap_or(1);
    if stages == 0 {
        return Err(Failure::usage("--stages must be at least 1"));
    }
    let st = construct(&p, stages)?;
    let rep = construction_report(&st)?;
    fs::create_dir_all(&a.output).map_err(|e| io(&a.output, e))?;
    write(&a.output.join("state.json"), &st.to_json())?;
    save_report(&a.output, &rep)?;
    print!("{}", rep.table());
    println!("# state written to {}", a.output.join("state.json").display());
    Ok(rep.verdict())
}

fn save_report(dir: &Path, rep: &VerificationReport) -> Res<()> {
    let json = serde_json::to_string_pretty(rep).expect("reports serialize");
    write(&dir.join(format!("{}.json", rep.title)), &(json + "\n"))?;
    write(&dir.join(format!("{}.csv", rep.title)), &rep.criterion_csv())?;
    write(&dir.join(format!("{}.txt", rep.title)), &rep.table())
}

struct Source {
    cfg: SkewConfig,
    state: Option<ConstructionState>,
    roof_a: Q,
    constants_note: Vec<(String, String)>,
}

fn load_schedule(name: &str) -> Res<SkewConfig> {
    if desk::names().contains(&name) {
        return Ok(desk::config(name)?);
    }
    let path = Path::new(name);
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("schedule {:?} is neither built in ({}) nor readable: {}", name, desk::names().join(", "), e)))?;
    let s = ergoflow_core::cf::DigitSchedule::parse(&text)?;
    Ok(SkewConfig::for_schedule(s, ergoflow_core::cf::DEFAULT_PADDING, SlitMode::Full)?)
}

fn source(g: &Globals, s: &SourceArgs) -> Res<Source> {
    if let Some(path) = &s.state {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        let st = ConstructionState::from_json(&text)?;
        if s.mode.mode.is_some() || s.mode.tau.is_some() {
            return Err(Failure::usage("--mode and --tau come from the state file when --state is given"));
        }
        let roof_a = st.constants.roof_a()?;
        let note = vec![("mode".to_string(), st.mode.to_string()), ("tau".to_string(), st.constants.tau.clone())];
        return Ok(Source { cfg: st.config()?, roof_a, state: Some(st), constants_note: note });
    }
    let p = params(g, &s.mode)?;
    let cfg = load_schedule(s.schedule.as_deref().unwrap_or("desk"))?;
    let note = vec![("mode".to_string(), p.mode.to_string()), ("tau".to_string(), p.constants.tau.clone())];
    Ok(Source { cfg, state: None, roof_a: p.constants.roof_a()?, constants_note: note })
}

fn cmd_verify(g: &Globals, a: VerifyArgs) -> Res<Verdict> {
    if !SUITES.contains(&a.suite.as_str()) {
        return Err(Failure::usage(format!("unknown suite {:?} (known: {})", a.suite, SUITES.join(", "))));
    }
    let src = source(g, &a.source)?;
    let mut ctx = SuiteContext::new(src.cfg, src.roof_a.clone());
    ctx.state = src.state;
    ctx.workers = g.workers;
    if let Some(n) = a.samples.or(g.file.samples) {
        ctx.samples = n;
    }
    ctx.seed = a.seed.or(g.file.seed).unwrap_or(0);
    if let Some(c) = &g.file.crit_c {
        ctx.crit_c = c.clone();
    }
    if let Some(c) = &g.file.crit_big_c {
        ctx.crit_big_c = c.clone();
    }
    if let Some(e) = &g.file.eps {
        ctx.ue_eps = e.clone();
    }
    let mut rep = run_suite(&a.suite, &ctx)?;
    for (k, v) in src.constants_note {
        rep.constant(k, v);
    }
    rep.constant("A", fmt_q(&src.roof_a));
    rep.constant("precision ceiling", ergoflow_core::encl::precision_ceiling());
    fs::create_dir_all(&a.output).map_err(|e| io(&a.output, e))?;
    save_report(&a.output, &rep)?;
    match a.format {
        Format::Csv => print!("{}", rep.table()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&rep).expect("reports serialize")),
    }
    Ok(rep.verdict())
}

#[derive(Serialize)]
struct FlowOut {
    x: String,
    level: u8,
    height: ergoflow_core::logsum::SymbolicValue,
}

fn cmd_flow(g: &Globals, a: FlowArgs) -> Res<Verdict> {
    let src = source(g, &a.source)?;
    let spec = RoofSpec::for_config(&src.cfg, src.roof_a.clone())?;
    if a.level > 1 {
        return Err(Failure::usage("--level must be 0 or 1"));
    }
    let z = TorusPoint::new(ergoflow_core::frac(&rational("x", &a.x)?), a.level);
    let p = FlowPoint::new(&spec, z, LogSum::rational(rational("height", &a.height)?))?;
    let out = flow_advance(&spec, &src.cfg, &p, &LogSum::rational(rational("time", &a.time)?))?;
    let res = FlowOut { x: fmt_q(&out.base.x), level: out.base.level, height: out.height.symbolic(ergoflow_core::encl::DEFAULT_PRECISION)? };
    println!("{}", serde_json::to_string_pretty(&res).expect("serializes"));
    Ok(Verdict::Pass)
}

fn cmd_probe(g: &Globals, a: ProbeArgs) -> Res<Verdict> {
    let src = source(g, &a.source)?;
    let spec = RoofSpec::for_config(&src.cfg, src.roof_a.clone())?;
    let times: Vec<f64> = match (&a.times, &src.state) {
        (Some(t), _) => t.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| Failure::usage(format!("--times: bad number {:?}", v)))).collect::<Res<_>>()?,
        (None, Some(st)) => rigidity_times(&spec, st)?,
        (None, None) => vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
    };
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Failure::usage("--times must be finite and nonnegative"));
    }
    let obs = FlowObservable { base: TorusIntervalSet::both_levels(CircleSet::interval(Q::from_integer(0.into()), ergoflow_core::q(1, 2))), heights: (Q::from_integer(0.into()), Q::from_integer(2.into())) };
    let rows = correlation_probe(&spec, &src.cfg, &obs, &obs, &times, a.samples.or(g.file.samples).unwrap_or(20_000), a.seed.or(g.file.seed).unwrap_or(0));
    let csv = correlation_csv(&rows);
    match &a.output {
        Some(p) => write(p, &csv)?,
        None => print!("{}", csv),
    }
    Ok(Verdict::Pass)
}

#[derive(Serialize)]
struct Row<'a> {
    suite: &'a str,
    k: String,
    sample: &'a str,
    value: &'a str,
    bound: &'a str,
    margin: &'a str,
    passed: String,
}

fn cmd_export(a: ExportArgs) -> Res<Verdict> {
    let dir = fs::read_dir(&a.reports).map_err(|e| io(&a.reports, e))?;
    let mut files: Vec<PathBuf> = dir.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().map_or(false, |x| x == "json")).collect();
    files.sort();
    let mut reports = vec![];
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| io(f, e))?;
        // state.json and other non-report files are skipped
        if let Ok(r) = serde_json::from_str::<VerificationReport>(&text) {
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(Failure::usage(format!("no reports in {}", a.reports.display())));
    }
    let rows: Vec<Row> = reports
        .iter()
        .flat_map(|r| {
            r.checks.iter().map(move |c| Row {
                suite: &r.title,
                k: c.k.map(|k| k.to_string()).unwrap_or_default(),
                sample: c.sample.as_deref().unwrap_or(""),
                value: &c.value,
                bound: &c.bound,
                margin: &c.margin,
                passed: c.verdict.to_string(),
            })
        })
        .collect();
    let text = match a.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(vec![]);
            w.write_record(["suite", "k", "sample", "value", "bound", "margin", "passed"]).expect("in-memory write");
            for r in &rows {
                w.write_record([r.suite, &r.k, r.sample, r.value, r.bound, r.margin, &r.passed]).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
        }
        Format::Json => serde_json::to_string_pretty(&rows).expect("serializes") + "\n",
    };
    match &a.output {
        Some(p) => write(p, &text)?,
        None => print!("{}", text),
    }
    Ok(Verdict::Pass)
}
