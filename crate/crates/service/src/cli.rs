//! Command line front end.
//!
//! Exit codes: 0 on success, 2 on invalid input (including usage errors),
//! 1 on any other failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use brachynav_core::case::{generate_phantom, load_case, OarSet, PatientCase, PhantomSpec, DEFAULT_SAMPLES_PER_ROI};
use brachynav_core::dose::{DoseEngine, SliceAxis, SliceSpec, SourceModel};
use brachynav_core::dv::{evaluate_plan, AimStatus, DvValue, EvalContext, PointCount};
use brachynav_core::optimizer::{
    evaluate_candidate, optimize, reoptimize, FractionBounds, MaxTimeOverride, OptimizationSettings, Plan, PlanId,
    PlanSet, Provenance,
};
use brachynav_core::{Parallelism, SCHEMA_VERSION};

use crate::api::{self, AppState};
use crate::diff::{diff_plans, PlanDiff};
use crate::error::{ErrorCode, Result, ServiceError};
use crate::export::{dwell_times, export_plan, import_plan, read_export, write_export, ExportedPlan};
use crate::session::SessionStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    #[value(alias = "json-like")]
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "brachynav", version, about = "Multi-objective HDR brachytherapy planning")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value = "text", global = true)]
    pub format: Format,
    /// Worker threads; 1 runs everything sequentially. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Source model file replacing the built-in kernel.
    #[arg(long, global = true)]
    pub source: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic phantom case.
    Phantom(PhantomArgs),
    /// Run an initial optimization.
    Plan(PlanArgs),
    /// Continue from a plan set with changed settings.
    Reoptimize(ReoptimizeArgs),
    /// Print the DV table of a plan.
    Evaluate(EvaluateArgs),
    /// Compare two plans.
    Diff(DiffArgs),
    /// Export a plan.
    Export(ExportArgs),
    /// Re-evaluate an exported plan into a one-plan set.
    Import(ImportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub needles: u32,
    #[arg(long, default_value_t = 34.5)]
    pub ctv_volume: f64,
    #[arg(long, value_enum, default_value = "all")]
    pub oars: OarChoice,
    #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_ROI)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OarChoice {
    All,
    Pelvic,
}

#[derive(Args, Debug)]
pub struct SettingsArgs {
    /// Settings file; flags below override its fields.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub population: Option<usize>,
    /// Upper bound on the share of any single needle.
    #[arg(long)]
    pub single_needle_max: Option<f64>,
    /// Upper bound on the share of all needles.
    #[arg(long)]
    pub total_needle_max: Option<f64>,
    /// Per-position maximum as CATHETER:POSITION=SECONDS; 0 disables the position.
    #[arg(long = "max-time", value_parser = parse_override)]
    pub max_time: Vec<MaxTimeOverride>,
    /// Ignore the contiguous high-dose constraint.
    #[arg(long)]
    pub no_contiguity: bool,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReoptimizeArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub previous: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Points {
    Opt,
    Final,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub case: PathBuf,
    /// `zero`, a plan-set or export file, or `FILE#RUN-INDEX`.
    #[arg(long)]
    pub plan: String,
    #[arg(long, value_enum, default_value = "opt")]
    pub points: Points,
}

#[derive(Args, Debug)]
pub struct DiffArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub left: String,
    #[arg(long)]
    pub right: String,
    #[arg(long, value_enum)]
    pub axis: Option<AxisChoice>,
    #[arg(long, allow_negative_numbers = true)]
    pub position: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisChoice {
    Axial,
    Sagittal,
    Coronal,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub plan: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long)]
    pub export: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

fn parse_override(s: &str) -> std::result::Result<MaxTimeOverride, String> {
    let bad = || format!("'{s}' is not CATHETER:POSITION=SECONDS");
    let (loc, t) = s.split_once('=').ok_or_else(bad)?;
    let (c, p) = loc.split_once(':').ok_or_else(bad)?;
    Ok(MaxTimeOverride {
        catheter: c.trim().parse().map_err(|_| bad())?,
        position: p.trim().parse().map_err(|_| bad())?,
        max_time_s: t.trim().parse().map_err(|_| bad())?,
    })
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let format = cli.format;
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = match format {
                Format::Json => writeln!(
                    err,
                    "{}",
                    serde_json::json!({ "schema_version": SCHEMA_VERSION, "code": e.code, "message": e.message, "field": e.field })
                ),
                Format::Text => match &e.field {
                    Some(f) => writeln!(err, "error: {} ({f})", e.message),
                    None => writeln!(err, "error: {}", e.message),
                },
            };
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let source = match &cli.source {
        Some(p) => SourceModel::load(p)?,
        None => SourceModel::default(),
    };
    let parallelism = if cli.workers == Some(1) {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    let engine = DoseEngine::new(source, parallelism);
    let format = cli.format;
    match (cli.workers, cli.command) {
        (_, Command::Serve(args)) => serve(engine, args),
        (Some(n), command) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| ServiceError::new(ErrorCode::Configuration, e.to_string()))?;
            let mut buf = Vec::new();
            let r = pool.install(|| dispatch(&engine, format, command, &mut buf));
            out.write_all(&buf)?;
            r
        }
        (Some(0), _) => Err(ServiceError::validation("workers", "must be at least 1")),
        (_, command) => dispatch(&engine, format, command, out),
    }
}

fn dispatch(engine: &DoseEngine, format: Format, command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Phantom(a) => phantom(format, a, out),
        Command::Plan(a) => plan(engine, format, a, out),
        Command::Reoptimize(a) => reopt(engine, format, a, out),
        Command::Evaluate(a) => evaluate(engine, format, a, out),
        Command::Diff(a) => diff(engine, format, a, out),
        Command::Export(a) => export(engine, format, a, out),
        Command::Import(a) => import(engine, format, a, out),
        Command::Serve(_) => unreachable!("handled by execute"),
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, body: &T) -> Result<()> {
    let mut v = serde_json::to_value(body)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_plan_set(path: &Path) -> Result<PlanSet> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Serialize)]
struct PhantomSummary<'a> {
    case_id: &'a str,
    path: String,
    rois: Vec<(&'a str, f64)>,
    catheters: usize,
    dwell_positions: usize,
    usable_positions: usize,
}

fn phantom(format: Format, a: PhantomArgs, out: &mut dyn Write) -> Result<()> {
    let spec = PhantomSpec {
        seed: a.seed,
        n_needles: a.needles,
        ctv_hr_volume_cm3: a.ctv_volume,
        oar_set: match a.oars {
            OarChoice::All => OarSet::All,
            OarChoice::Pelvic => OarSet::Pelvic,
        },
        samples_per_roi: a.samples,
    };
    let case = generate_phantom(&spec)?;
    brachynav_core::case::save_case(&case, &a.out)?;
    let summary = PhantomSummary {
        case_id: &case.id,
        path: a.out.display().to_string(),
        rois: case.rois.iter().map(|r| (r.name.as_str(), r.volume_cm3)).collect(),
        catheters: case.catheters.len(),
        dwell_positions: case.dwell_count(),
        usable_positions: case.dwell_mask.usable_count(),
    };
    match format {
        Format::Json => emit(out, &summary),
        Format::Text => {
            writeln!(out, "case {} written to {}", summary.case_id, summary.path)?;
            for (name, v) in &summary.rois {
                writeln!(out, "  {name:<10} {v:>8.2} cm3")?;
            }
            writeln!(
                out,
                "  {} catheters, {} dwell positions ({} usable)",
                summary.catheters, summary.dwell_positions, summary.usable_positions
            )?;
            Ok(())
        }
    }
}

fn settings_from(base: OptimizationSettings, a: &SettingsArgs) -> Result<OptimizationSettings> {
    let mut s = match &a.settings {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => base,
    };
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.budget {
        s.evaluation_budget = v;
        s.reoptimization_budget = Some(v);
    }
    if let Some(v) = a.population {
        s.population_size = v;
    }
    if let Some(v) = a.single_needle_max {
        s.single_needle_fraction = FractionBounds { max: v, ..s.single_needle_fraction };
    }
    if let Some(v) = a.total_needle_max {
        s.total_needle_fraction = FractionBounds { max: v, ..s.total_needle_fraction };
    }
    for o in &a.max_time {
        s.max_time_overrides
            .retain(|e| !(e.catheter == o.catheter && e.position == o.position));
        s.max_time_overrides.push(*o);
    }
    if a.no_contiguity {
        s.enforce_contiguity = false;
    }
    Ok(s)
}

#[derive(Serialize)]
struct PlanSetReport {
    path: String,
    run_id: u32,
    evaluations: usize,
    feasible_found: bool,
    plans: usize,
    golden_corner: usize,
    default_plan: PlanId,
    default_lci: f64,
    default_lsi: f64,
}

fn report_plan_set(format: Format, set: &PlanSet, path: &Path, out: &mut dyn Write) -> Result<()> {
    let default_plan = set.default_plan()?;
    let d = set.plan(default_plan).expect("default plan exists");
    let report = PlanSetReport {
        path: path.display().to_string(),
        run_id: set.run_id,
        evaluations: set.evaluations,
        feasible_found: set.feasible_found,
        plans: set.plans.len(),
        golden_corner: set.plans.iter().filter(|p| p.objective.in_golden_corner).count(),
        default_plan,
        default_lci: d.objective.lci,
        default_lsi: d.objective.lsi,
    };
    match format {
        Format::Json => emit(out, &report),
        Format::Text => {
            writeln!(
                out,
                "run {}: {} plans ({} in the golden corner) from {} evaluations, written to {}",
                report.run_id, report.plans, report.golden_corner, report.evaluations, report.path
            )?;
            if !report.feasible_found {
                writeln!(out, "warning: no plan met the contiguity constraint")?;
            }
            writeln!(
                out,
                "default plan {}: LCI {:+.3}  LSI {:+.3}",
                report.default_plan, report.default_lci, report.default_lsi
            )?;
            Ok(())
        }
    }
}

fn plan(engine: &DoseEngine, format: Format, a: PlanArgs, out: &mut dyn Write) -> Result<()> {
    let case = load_case(&a.case)?;
    let settings = settings_from(OptimizationSettings::default(), &a.settings)?;
    if settings.evaluation_budget < settings.population_size {
        return Err(ServiceError::validation("budget", "must be at least the population size"));
    }
    let set = optimize(engine, &case, &settings)?;
    write_json(&a.out, &set)?;
    report_plan_set(format, &set, &a.out, out)
}

fn reopt(engine: &DoseEngine, format: Format, a: ReoptimizeArgs, out: &mut dyn Write) -> Result<()> {
    let case = load_case(&a.case)?;
    let previous = read_plan_set(&a.previous)?;
    let settings = settings_from(previous.settings.clone(), &a.settings)?;
    let set = reoptimize(engine, &case, &previous, &settings)?;
    write_json(&a.out, &set)?;
    report_plan_set(format, &set, &a.out, out)
}

/// A plan named on the command line.
struct PlanRef {
    id: PlanId,
    times: Vec<f64>,
    /// Evaluated plan when the reference is a plan set.
    plan: Option<Plan>,
    settings: OptimizationSettings,
}

fn resolve_plan(case: &PatientCase, reference: &str) -> Result<PlanRef> {
    if reference == "zero" {
        return Ok(PlanRef {
            id: PlanId { run: 0, index: 0 },
            times: vec![0.0; case.dwell_count()],
            plan: None,
            settings: OptimizationSettings::default(),
        });
    }
    let (path, id) = match reference.rsplit_once('#') {
        Some((p, id)) => (p, Some(id.parse::<PlanId>()?)),
        None => (reference, None),
    };
    let bytes = fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    if value.get("channels").is_some() {
        let exported: ExportedPlan = serde_json::from_value(value)?;
        return Ok(PlanRef {
            id: exported.plan_id,
            times: dwell_times(case, &exported)?,
            plan: None,
            settings: OptimizationSettings::default(),
        });
    }
    let set: PlanSet = serde_json::from_value(value)?;
    let id = match id {
        Some(id) => id,
        None => set.default_plan()?,
    };
    let plan = set
        .plan(id)
        .ok_or_else(|| ServiceError::not_found(format!("plan {id} not in {path}")))?
        .clone();
    Ok(PlanRef {
        id,
        times: plan.dwell_times.clone(),
        plan: Some(plan),
        settings: set.settings,
    })
}

#[derive(Serialize)]
struct DvReport {
    plan_id: PlanId,
    points: &'static str,
    total_time_s: f64,
    rows: Vec<DvValue>,
}

fn status_name(s: AimStatus) -> &'static str {
    match s {
        AimStatus::AimMet => "aim_met",
        AimStatus::LimitMet => "limit_met",
        AimStatus::NotMet => "not_met",
        AimStatus::ReportOnly => "report_only",
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

pub fn write_dv_table(out: &mut dyn Write, rows: &[DvValue]) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<22} {:>10} {:>9} {:>8} {:>8}  status",
        "aim", "value", "EQD2", "aim", "limit"
    )?;
    for r in rows {
        let unit = if r.eqd2_total.is_some() { "Gy" } else { "cm3" };
        writeln!(
            out,
            "{:<22} {:>7.3} {:<3}{:>8} {:>8} {:>8}  {} {}",
            r.label,
            r.physical,
            unit,
            fmt_opt(r.eqd2_total, 2),
            fmt_opt(r.aim, 2),
            fmt_opt(r.limit, 2),
            r.status.marker(),
            status_name(r.status)
        )?;
    }
    Ok(())
}

fn evaluate(engine: &DoseEngine, format: Format, a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let case = load_case(&a.case)?;
    let plan = resolve_plan(&case, &a.plan)?;
    let count = match a.points {
        Points::Opt => PointCount::Optimization,
        Points::Final => PointCount::Final,
    };
    let mut case = case;
    if let Some(p) = &plan.settings.protocol {
        case.protocol = p.clone();
    }
    let ctx = EvalContext::for_case(&case, count)?;
    let rows = evaluate_plan(engine, &case, &plan.times, &ctx)?;
    let report = DvReport {
        plan_id: plan.id,
        points: match a.points {
            Points::Opt => "optimization",
            Points::Final => "final",
        },
        total_time_s: plan.times.iter().fold(0.0, |s, t| s + t),
        rows,
    };
    match format {
        Format::Json => emit(out, &report),
        Format::Text => {
            writeln!(
                out,
                "plan {} ({} points), total time {:.1} s",
                report.plan_id, report.points, report.total_time_s
            )?;
            write_dv_table(out, &report.rows)?;
            Ok(())
        }
    }
}

fn evaluated(engine: &DoseEngine, case: &PatientCase, r: PlanRef) -> Result<Plan> {
    match r.plan {
        Some(p) => Ok(p),
        None => Ok(evaluate_candidate(engine, case, &r.settings, &r.times, r.id, Provenance::ManualImport)?),
    }
}

fn diff(engine: &DoseEngine, format: Format, a: DiffArgs, out: &mut dyn Write) -> Result<()> {
    let case = load_case(&a.case)?;
    let left = evaluated(engine, &case, resolve_plan(&case, &a.left)?)?;
    let right = evaluated(engine, &case, resolve_plan(&case, &a.right)?)?;
    let slice = match (a.axis, a.position) {
        (Some(axis), Some(position_mm)) => Some(SliceSpec {
            axis: match axis {
                AxisChoice::Axial => SliceAxis::Axial,
                AxisChoice::Sagittal => SliceAxis::Sagittal,
                AxisChoice::Coronal => SliceAxis::Coronal,
            },
            position_mm,
            spacing_mm: a.spacing,
        }),
        (None, None) => None,
        _ => return Err(ServiceError::validation("axis", "--axis and --position go together")),
    };
    let d: PlanDiff = diff_plans(engine, &case, &left, &right, slice.as_ref())?;
    match format {
        Format::Json => emit(out, &d),
        Format::Text => {
            writeln!(out, "left {}  right {}", d.left_id, d.right_id)?;
            writeln!(out, "{:<22} {:>10} {:>10} {:>10}  better", "aim", "left", "right", "right-left")?;
            for r in &d.dv_table {
                writeln!(
                    out,
                    "{:<22} {:>10.3} {:>10.3} {:>+10.3}  {}",
                    r.label,
                    r.left,
                    r.right,
                    r.difference_physical,
                    serde_json::to_value(r.better)?.as_str().unwrap_or("")
                )?;
            }
            if let Some(g) = &d.grid_diff {
                let (lo, hi) = g
                    .difference_gy
                    .iter()
                    .fold((0.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                writeln!(
                    out,
                    "slice {:?} at {} mm: {}x{} cells, difference range [{lo:+.3}, {hi:+.3}] Gy",
                    g.left.axis, g.left.position_mm, g.left.n_u, g.left.n_v
                )?;
            }
            Ok(())
        }
    }
}

fn export(engine: &DoseEngine, format: Format, a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    let case = load_case(&a.case)?;
    let r = resolve_plan(&case, &a.plan)?;
    let plan = evaluated(engine, &case, r)?;
    let exported = export_plan(engine, &case, &plan)?;
    write_export(&exported, &a.out)?;
    #[derive(Serialize)]
    struct Report {
        path: String,
        plan_id: PlanId,
        total_time_s: f64,
    }
    let report = Report {
        path: a.out.display().to_string(),
        plan_id: exported.plan_id,
        total_time_s: exported.total_time_s,
    };
    match format {
        Format::Json => emit(out, &report),
        Format::Text => {
            writeln!(
                out,
                "plan {} exported to {} (total time {:.1} s)",
                report.plan_id, report.path, report.total_time_s
            )?;
            Ok(())
        }
    }
}

fn import(engine: &DoseEngine, format: Format, a: ImportArgs, out: &mut dyn Write) -> Result<()> {
    let case = load_case(&a.case)?;
    let exported = read_export(&a.export)?;
    let settings = OptimizationSettings::default();
    let plan = import_plan(engine, &case, &exported, &settings, PlanId { run: 1, index: 0 })?;
    let set = PlanSet {
        schema_version: SCHEMA_VERSION,
        run_id: 1,
        provenance: Provenance::ManualImport,
        parent_run: None,
        settings,
        evaluations: 1,
        feasible_found: plan.feasible,
        plans: vec![plan],
    };
    write_json(&a.out, &set)?;
    report_plan_set(format, &set, &a.out, out)
}

fn serve(engine: DoseEngine, a: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        fs::create_dir_all(&a.data_dir)?;
        let state = AppState::new(SessionStore::new(&a.data_dir), engine);
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        api::serve(listener, state).await?;
        Ok(())
    })
}
