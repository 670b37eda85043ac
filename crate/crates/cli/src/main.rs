use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use fluxforge_core::approximant::{self, PipelineSettings};
use fluxforge_core::audit::{self, Verdict};
use fluxforge_core::connections;
use fluxforge_core::decomposition::{self, CubeClass};
use fluxforge_core::field::ffld::{read_ffld, write_ffld};
use fluxforge_core::field::{self, ChargeSet, PointField, VectorField, WeightedMeasure};
use fluxforge_core::oned::{self, Profile};
use fluxforge_core::smoothing::Budget;

mod output;

use output::{fail, read_text, write_text, Failure};

/// Integer-flux vector fields: generation, audit, strong approximation, connections.
#[derive(Debug, Parser, Serialize)]
#[command(name = "fluxforge", version)]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FLUXFORGE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Write a synthetic field to an FFLD file.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Random cube-flux audit of a field.
    Audit(AuditArgs),
    /// Pick the mesh shift and classify cubes.
    Decompose(DecomposeArgs),
    /// Build the approximant at one epsilon.
    Approximate(ApproximateArgs),
    /// Approximation error over a list of epsilons.
    Converge(ConvergeArgs),
    /// Greedy and minimal connections for a charge file.
    Connect(ConnectArgs),
    /// One-dimensional constructions on sampled profiles.
    Oned {
        #[command(subcommand)]
        kind: OnedKind,
    },
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GenKind {
    /// Superposition of point-charge fields.
    Vortex {
        #[arg(long)]
        charges: PathBuf,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long = "N", default_value_t = 128)]
        cells: usize,
        /// Multiplies every degree (0.5 gives a half-integer field).
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Current of a circle-valued map with the given winding points (n = 2).
    CircleMap {
        #[arg(long)]
        charges: PathBuf,
        #[arg(long = "N", default_value_t = 128)]
        cells: usize,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth divergence-free field drawn from --seed.
    Divfree {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long = "N", default_value_t = 128)]
        cells: usize,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Serialize)]
struct AuditArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = audit::DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    centers: usize,
    #[arg(long, default_value_t = 4)]
    radii: usize,
    /// Face nodes per axis.
    #[arg(long, default_value_t = audit::DEFAULT_NODES)]
    nodes: usize,
    /// Also slice concentric cubes around this point (comma separated).
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 32)]
    levels: usize,
}

#[derive(Debug, Args, Serialize)]
struct PipelineArgs {
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    /// Weight exponent; defaults to the one stored in the field file.
    #[arg(long)]
    q: Option<f64>,
    /// Flux tolerance for the cube classification.
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long, default_value_t = decomposition::DEFAULT_CANDIDATES)]
    candidates: usize,
    /// Smoothing budget per face as a fraction of the face's L^p norm.
    #[arg(long, default_value_t = 0.1)]
    smooth_delta: f64,
    /// Round non-integral cube fluxes instead of aborting.
    #[arg(long)]
    force_round: bool,
    /// Solver cells per axis on each cube.
    #[arg(long)]
    cells: Option<usize>,
}

impl PipelineArgs {
    fn settings(&self, seed: u64) -> Result<PipelineSettings, Failure> {
        if !(self.smooth_delta > 0.0) {
            return Err(fail(2, format!("--smooth-delta must be positive, got {}", self.smooth_delta)));
        }
        Ok(PipelineSettings {
            tolerance: self.tol,
            n_candidates: self.candidates,
            seed,
            budget: Budget::Relative(self.smooth_delta),
            force_round: self.force_round,
            cells: self.cells,
            ..Default::default()
        })
    }

    fn measure(&self, stored: WeightedMeasure) -> Result<WeightedMeasure, Failure> {
        match self.q {
            Some(q) => Ok(WeightedMeasure::new(q)?),
            None => Ok(stored),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct DecomposeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long, default_value_t = decomposition::DEFAULT_CANDIDATES)]
    candidates: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ApproximateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    epsilon: f64,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Summary JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Samples of the rescaled approximant on the input grid, as FFLD.
    #[arg(long)]
    field_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ConvergeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Strictly decreasing list, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.125,0.0625")]
    eps: Vec<f64>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ConnectArgs {
    #[arg(long)]
    charges: PathBuf,
    /// Current file for the minimal connection.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid resolution of the dual certificate.
    #[arg(long, default_value_t = 128)]
    dual_res: usize,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum OnedKind {
    /// Integer step function plus constant close to the samples.
    Project {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Levels above this are dropped.
        #[arg(long = "K", default_value_t = 10)]
        k: i64,
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        #[arg(long, default_value_t = 2.0)]
        p: f64,
    },
    /// Integer-valued function with the same dyadic averages at level --level.
    Weak {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        level: u32,
    },
}

fn load_field(path: &Path) -> Result<(VectorField, WeightedMeasure), Failure> {
    let file = std::fs::File::open(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
    read_ffld(&mut std::io::BufReader::new(file)).map_err(|e| Failure::from(e).context(path))
}

fn save_field(path: &Path, v: &VectorField, mu: WeightedMeasure) -> Result<(), Failure> {
    let mut bytes = Vec::new();
    write_ffld(&mut bytes, v, mu)?;
    std::fs::write(path, bytes).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

fn load_charges(path: &Path) -> Result<ChargeSet, Failure> {
    ChargeSet::from_json(&read_text(path)?).map_err(|e| Failure::from(e).context(path))
}

/// One value per record; a non-numeric first record is taken as a header.
fn load_samples(path: &Path) -> Result<Vec<f64>, Failure> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let cell = rec.get(0).unwrap_or("");
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Err(_) if i == 0 => continue,
            _ => return Err(fail(2, format!("{}: bad sample {cell:?} at byte {offset}", path.display()))),
        }
    }
    if out.is_empty() {
        return Err(fail(2, format!("{}: no samples", path.display())));
    }
    Ok(out)
}

fn with_config(config: &Value, result: impl Serialize) -> Value {
    let mut v = serde_json::to_value(result).expect("result serializes");
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("config".into(), config.clone());
            v
        }
        None => json!({ "config": config, "result": v }),
    }
}

struct Report {
    text: String,
    json: Value,
    code: u8,
}

fn gen(kind: &GenKind, seed: u64) -> Result<Report, Failure> {
    let (v, q, out) = match kind {
        GenKind::Vortex { charges, n, cells, strength, q, out } => {
            let cs = load_charges(charges)?;
            (field::gen_vortex_scaled(*n, *cells, &cs, *strength)?, *q, out)
        }
        GenKind::CircleMap { charges, cells, q, out } => {
            let cs = load_charges(charges)?;
            (field::gen_circle_map_current(*cells, &cs)?, *q, out)
        }
        GenKind::Divfree { n, cells, q, out } => (field::gen_divfree(seed, *n, *cells)?, *q, out),
    };
    let mu = WeightedMeasure::new(q)?;
    save_field(out, &v, mu)?;
    let g = v.grid();
    Ok(Report {
        text: format!("wrote {} (n = {}, N = {}, q = {q})", out.display(), g.dim, g.cells_per_axis),
        json: json!({ "out": out, "dim": g.dim, "cells_per_axis": g.cells_per_axis, "q": q }),
        code: 0,
    })
}

fn run_audit(a: &AuditArgs, seed: u64) -> Result<Report, Failure> {
    let (v, _) = load_field(&a.input)?;
    let scan = audit::integer_flux_scan(&v, a.tol, a.centers, a.radii, seed, a.nodes)?;
    let slice = match &a.x0 {
        Some(x0) => Some(audit::lipschitz_slice_check(&v, x0, a.levels, a.tol, a.nodes)?),
        None => None,
    };
    let verdicts: Vec<Verdict> = std::iter::once(scan.verdict).chain(slice.as_ref().map(|s| s.verdict)).collect();
    let overall = if verdicts.contains(&Verdict::NonIntegral) {
        Verdict::NonIntegral
    } else if verdicts.contains(&Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Integral
    };
    let name = |v: Verdict| serde_json::to_value(v).unwrap().as_str().unwrap().to_string();
    let mut text = format!(
        "verdict {}\nscan: {} samples ({} skipped), pass fraction {:.4}, max deviation {:.3e}",
        name(overall),
        scan.samples.len(),
        scan.skipped,
        scan.pass_fraction,
        scan.max_deviation
    );
    if let Some(s) = &slice {
        text += &format!(
            "\nslice: {} levels, pass fraction {:.4}, max deviation {:.3e}, verdict {}",
            s.samples.len(),
            s.pass_fraction,
            s.max_deviation,
            name(s.verdict)
        );
    }
    Ok(Report {
        text,
        json: json!({ "verdict": overall, "scan": scan, "slice": slice }),
        code: if overall == Verdict::Integral { 0 } else { 1 },
    })
}

fn run_decompose(a: &DecomposeArgs, seed: u64, config: &Value) -> Result<Report, Failure> {
    let (v, mu) = load_field(&a.input)?;
    let n = v.grid().dim;
    let mesh = decomposition::select_shift(&v, n, a.epsilon, a.p, mu, a.candidates, seed, 32)?;
    let records = decomposition::classify_cubes(&v, &mesh, a.tol, audit::DEFAULT_NODES)?;
    let count = |c: CubeClass| records.iter().filter(|r| r.class == c).count();
    let (good, bad, odd) = (count(CubeClass::Good), count(CubeClass::Bad), count(CubeClass::NonIntegral));
    let result = json!({ "mesh": mesh, "records": records, "good": good, "bad": bad, "non_integral": odd });
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&with_config(config, &result)).unwrap())?;
    }
    let mut text = format!(
        "{} cubes of side {} (shift {:?}): {good} good, {bad} bad, {odd} non-integral",
        mesh.num_cubes(),
        mesh.epsilon,
        mesh.shift
    );
    for r in records.iter().filter(|r| r.class != CubeClass::Good) {
        text += &format!("\n  {:?} at {:?}: flux {:.6}", r.class, r.center, r.flux);
    }
    Ok(Report { text, json: result, code: if odd > 0 { 1 } else { 0 } })
}

fn run_approximate(a: &ApproximateArgs, seed: u64, config: &Value) -> Result<Report, Failure> {
    let (v, stored) = load_field(&a.input)?;
    let mu = a.pipeline.measure(stored)?;
    let settings = a.pipeline.settings(seed)?;
    let tilde = approximant::assemble(&v, a.epsilon, a.pipeline.p, mu, &settings)?;
    let bar = approximant::rescale(&tilde);
    let lp = approximant::lp_error(&bar, &v);
    let te = approximant::tilde_error(&tilde, &v);
    let summary = bar.summary();
    let result = json!({ "lp_error": lp, "tilde_error": te, "summary": summary });
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&with_config(config, &result)).unwrap())?;
    }
    if let Some(out) = &a.field_out {
        let g = v.grid();
        let mut values = vec![0.0; g.num_cells() * g.dim];
        let mut x = vec![0.0; g.dim];
        for (c, chunk) in values.chunks_mut(g.dim).enumerate() {
            g.center(c, &mut x);
            bar.eval_into(&x, chunk);
        }
        save_field(out, &VectorField::from_values(g, values)?, mu)?;
    }
    let mut text = format!(
        "epsilon {} alpha {:.6}: {} bad cubes, lp_error {:.6e}, tilde_error {:.6e}",
        a.epsilon,
        bar.alpha,
        tilde.bad_count(),
        lp,
        te
    );
    for c in &bar.charges.charges {
        text += &format!("\n  charge {:+} at {:?}", c.deg, c.pos);
    }
    Ok(Report { text, json: result, code: 0 })
}

fn run_converge(a: &ConvergeArgs, seed: u64, config: &Value) -> Result<Report, Failure> {
    let (v, stored) = load_field(&a.input)?;
    let mu = a.pipeline.measure(stored)?;
    let settings = a.pipeline.settings(seed)?;
    let rows = approximant::converge_sweep(&v, a.pipeline.p, mu, &a.eps, &settings)?;
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epsilon", "lp_error", "bad_count", "alpha", "wallclock_ms", "tilde_error"])
            .map_err(|e| fail(2, e.to_string()))?;
        for r in &rows {
            w.write_record([
                r.epsilon.to_string(),
                r.lp_error.to_string(),
                r.bad_count.to_string(),
                r.alpha.to_string(),
                format!("{:.3}", r.wallclock_ms),
                r.tilde_error.to_string(),
            ])
            .map_err(|e| fail(2, e.to_string()))?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| fail(2, e.to_string()))?).unwrap();
        write_text(path, &format!("# config={}\n{body}", serde_json::to_string(config).unwrap()))?;
    }
    let mut text = format!("{:>10} {:>14} {:>9} {:>10} {:>14}", "epsilon", "lp_error", "bad", "alpha", "wallclock_ms");
    for r in &rows {
        match &r.error {
            None => {
                text += &format!(
                    "\n{:>10} {:>14.6e} {:>9} {:>10.6} {:>14.1}",
                    r.epsilon, r.lp_error, r.bad_count, r.alpha, r.wallclock_ms
                )
            }
            Some(e) => text += &format!("\n{:>10} failed: {e}", r.epsilon),
        }
    }
    let failed = rows.iter().any(|r| r.error.is_some());
    Ok(Report { text, json: json!({ "rows": rows }), code: if failed { 1 } else { 0 } })
}

fn run_connect(a: &ConnectArgs, config: &Value) -> Result<Report, Failure> {
    let cs = load_charges(&a.charges)?;
    let (current, mass) = connections::minimal_connection(&cs)?;
    let dual = connections::dual_value(&cs, a.dual_res)?;
    let greedy = match cs.total_degree() {
        0 => connections::greedy_connection(&cs, None)?,
        _ => {
            let b = cs.charges.first().map(|c| connections::nearest_boundary_point(&c.pos)).unwrap_or_default();
            connections::greedy_connection(&cs, Some(&b))?
        }
    };
    if let Some(out) = &a.out {
        write_text(out, &serde_json::to_string_pretty(&with_config(config, &current)).unwrap())?;
    }
    let h = 1.0 / a.dual_res as f64;
    let text = format!(
        "minimal mass {mass:.12}\ndual value {:.12} (gap {:.3e}, grid h = {h})\ngreedy mass {:.12}\n{} segments",
        dual.value,
        mass - dual.value,
        greedy.mass(),
        current.segments.len()
    );
    let result = json!({
        "mass": mass,
        "dual_value": dual.value,
        "gap": mass - dual.value,
        "feasibility_residual": dual.feasibility_residual,
        "greedy_mass": greedy.mass(),
        "current": current,
    });
    Ok(Report { text, json: result, code: 0 })
}

fn run_oned(kind: &OnedKind, config: &Value) -> Result<Report, Failure> {
    let (step, out) = match kind {
        OnedKind::Project { input, out, k, tol, p } => {
            let s = load_samples(input)?;
            (oned::integer_step_projection(&s, *k, *tol, *p)?, out)
        }
        OnedKind::Weak { input, out, level } => {
            let s = load_samples(input)?;
            (oned::weak_approx_sequence(&Profile::Samples(&s), *level)?, out)
        }
    };
    if let Some(out) = out {
        write_text(out, &serde_json::to_string_pretty(&with_config(config, &step)).unwrap())?;
    }
    let mut text = format!("offset {}, {} intervals", step.offset, step.values.len());
    for (a, b, v) in step.pieces().take(20) {
        text += &format!("\n  [{a:.6}, {b:.6}) {v}");
    }
    if step.values.len() > 20 {
        text += "\n  ...";
    }
    Ok(Report { text, json: serde_json::to_value(&step).unwrap(), code: 0 })
}

fn run(cli: &Cli) -> Result<Report, Failure> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(fail(2, "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| fail(2, e.to_string()))?;
    }
    let config = serde_json::to_value(cli).expect("config serializes");
    match &cli.command {
        Command::Gen { kind } => gen(kind, cli.seed),
        Command::Audit(a) => run_audit(a, cli.seed),
        Command::Decompose(a) => run_decompose(a, cli.seed, &config),
        Command::Approximate(a) => run_approximate(a, cli.seed, &config),
        Command::Converge(a) => run_converge(a, cli.seed, &config),
        Command::Connect(a) => run_connect(a, &config),
        Command::Oned { kind } => run_oned(kind, &config),
    }
    .map(|mut r| {
        r.json = with_config(&config, &r.json);
        r
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(r) => {
            let body = if cli.json { serde_json::to_string_pretty(&r.json).unwrap() } else { r.text };
            let _ = writeln!(std::io::stdout(), "{body}");
            ExitCode::from(r.code)
        }
        Err(f) => {
            if cli.json {
                let _ = writeln!(std::io::stdout(), "{}", json!({ "error": f.message, "exit_code": f.code }));
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
