use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use symten::boundary_coeffs::CoeffTable;
use symten::ckt::{ck_dimension_bound, constrained_ck_kernel, Constraint};
use symten::decomp::{decompose_field, manufactured};
use symten::geom::{ChartRef, ConformalChart, Domain, EuclideanChart, ScalarFn};
use symten::grid::GridField;
use symten::kinetic::{consistency_residual, random_stack, theta_samples};
use symten::verify::{run_suite, Check, Suite, VerifyConfig};
use symten::{Jet, SymError};

const EXIT_FAIL: u8 = 2;
const EXIT_USAGE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Compute(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Io(_) => EXIT_IO,
            Failure::Compute(_) => EXIT_FAIL,
        }
    }
}

impl From<SymError> for Failure {
    fn from(e: SymError) -> Self {
        match e {
            SymError::Parse(_)
            | SymError::Shape(_)
            | SymError::DimMismatch(_)
            | SymError::Unsupported(_)
            | SymError::Symmetry(_)
            | SymError::OutsideDomain(_)
            | SymError::NotTraceFree(_) => Failure::Usage(e.to_string()),
            _ => Failure::Compute(e.to_string()),
        }
    }
}

type Res<T> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "symten", version, about = "Symmetric tensor field toolkit")]
struct Cli {
    /// flat key=value file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// omit the timestamp from reports
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// write the report (or table) here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run identity suites
    Verify(VerifyArgs),
    /// Flat conformal Killing kernel dimension
    Ck(CkArgs),
    /// Decompose a rank-1 or rank-2 field on the unit square
    Decompose(DecomposeArgs),
    /// Compare transport relations with sampled H on a random stack
    Kinetic(KineticArgs),
    /// Boundary coefficient table as CSV
    Coeffs(CoeffsArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// suite name or `all`
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    cases: Option<usize>,
    /// replace every floating tolerance
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct CkArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    /// none | hyperplane | line | jet:<order>
    #[arg(long)]
    constraint: Option<String>,
    /// only `euclidean` is accepted
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    mesh: Option<usize>,
    /// `.tf` input; the manufactured field is used when absent
    #[arg(long)]
    input: Option<PathBuf>,
    /// write the potential v as `.tf`
    #[arg(long)]
    write_v: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct KineticArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    /// euclidean | conformal:x | conformal:r2 | conformal:file:<path>
    #[arg(long)]
    metric: Option<String>,
    /// sample nodes per axis
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct CoeffsArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// a or b
    #[arg(long)]
    table: Option<String>,
}

/// Values from the config file, consumed key by key.
struct FileConf(BTreeMap<String, String>);

impl FileConf {
    fn load(path: Option<&Path>) -> Res<Self> {
        let Some(p) = path else { return Ok(FileConf(BTreeMap::new())) };
        let text = std::fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("{}:{}: expected key=value", p.display(), no + 1)))?;
            map.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(FileConf(map))
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Res<T> {
        let from_file = self.0.remove(key);
        if let Some(v) = flag {
            return Ok(v);
        }
        match from_file {
            Some(s) => s.parse().map_err(|_| Failure::Usage(format!("config key {key}: cannot parse {s:?}"))),
            None => Ok(default),
        }
    }

    fn opt<T: std::str::FromStr>(&mut self, key: &str, flag: Option<T>) -> Res<Option<T>> {
        let from_file = self.0.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        from_file
            .map(|s| s.parse().map_err(|_| Failure::Usage(format!("config key {key}: cannot parse {s:?}"))))
            .transpose()
    }

    fn finish(self) -> Res<()> {
        match self.0.keys().next() {
            Some(k) => Err(Failure::Usage(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }
}

fn init_threads() -> Res<()> {
    let Ok(v) = std::env::var("SYMTEN_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("SYMTEN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn report(command: &str, config: Value, checks: &[Check], extra: Value, stamp: bool) -> (Value, bool) {
    let passed = checks.iter().filter(|c| c.pass).count();
    let all = passed == checks.len();
    let mut r = json!({
        "command": command,
        "config": config,
        "checks": checks,
        "summary": {"total": checks.len(), "passed": passed, "failed": checks.len() - passed, "pass": all},
    });
    if !extra.is_null() {
        r["result"] = extra;
    }
    if stamp {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        r["timestamp"] = json!(t);
    }
    (r, all)
}

fn emit(text: &str, out: Option<&Path>) -> Res<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_verify(a: VerifyArgs, mut fc: FileConf, stamp: bool) -> Res<(Value, bool)> {
    let suite = fc.get("suite", a.suite, "all".to_string())?;
    let seed = fc.get("seed", a.seed, 7)?;
    let m_max = fc.opt("m_max", a.m_max)?;
    let cases = fc.get("cases", a.cases, 200)?;
    let tol = fc.opt("tol", a.tol)?;
    fc.finish()?;
    if cases == 0 {
        return Err(Failure::Usage("cases must be positive".into()));
    }
    let suites: Vec<Suite> = if suite == "all" { Suite::ALL.to_vec() } else { vec![Suite::parse(&suite)?] };
    let cfg = VerifyConfig { seed, m_max, cases };
    let mut checks = Vec::new();
    for s in suites {
        for mut c in run_suite(s, &cfg)? {
            c.name = format!("{}: {}", s.name(), c.name);
            if let (Some(t), true) = (tol, c.tolerance > 0.0) {
                c = Check::new(c.name, c.paper_anchor, c.residual, t);
            }
            checks.push(c);
        }
    }
    let config = json!({"suite": suite, "seed": seed, "m_max": m_max, "cases": cases, "tol": tol});
    Ok(report("verify", config, &checks, Value::Null, stamp))
}

fn parse_constraint(s: &str) -> Res<Vec<Constraint>> {
    match s {
        "none" => Ok(vec![]),
        "hyperplane" => Ok(vec![Constraint::Hyperplane]),
        "line" => Ok(vec![Constraint::Line]),
        _ => match s.strip_prefix("jet:").and_then(|l| l.parse().ok()) {
            Some(l) => Ok(vec![Constraint::JetOrder(l)]),
            None => Err(Failure::Usage(format!("unknown constraint {s:?}"))),
        },
    }
}

fn cmd_ck(a: CkArgs, mut fc: FileConf, stamp: bool) -> Res<(Value, bool)> {
    let n = fc.get("n", a.n, 3)?;
    let m = fc.get("m", a.m, 1)?;
    let degree = fc.get("degree", a.degree, 2 * m + 1)?;
    let constraint = fc.get("constraint", a.constraint, "none".to_string())?;
    let metric = fc.get("metric", a.metric, "euclidean".to_string())?;
    fc.finish()?;
    if metric != "euclidean" {
        return Err(Failure::Usage("kernel computation is available on the flat metric only".into()));
    }
    let cons = parse_constraint(&constraint)?;
    let k = constrained_ck_kernel(n, m, degree, &cons)?;
    let bound = ck_dimension_bound(n, m)?;
    let mut checks = vec![Check::exact("exact and floating ranks agree", "rank over Q = numerical rank", k.dim() == k.dim_float())];
    if cons.is_empty() && degree >= 2 * m + 1 {
        checks.push(Check::exact("kernel dimension equals the bound", "dim Ker = ck_dimension_bound(n, m)", bound == k.dim().into()));
    }
    let blocks: Vec<Value> = k.blocks.iter().map(|&(d, e, f)| json!({"degree": d, "exact": e, "floating": f})).collect();
    let config = json!({"n": n, "m": m, "degree": degree, "constraint": constraint, "metric": metric});
    let extra = json!({"dimension": k.dim(), "bound": bound.to_string(), "blocks": blocks});
    Ok(report("ck", config, &checks, extra, stamp))
}

fn cmd_decompose(a: DecomposeArgs, mut fc: FileConf, stamp: bool) -> Res<(Value, bool)> {
    let input: Option<PathBuf> = fc.opt("input", a.input)?;
    let m_flag = fc.opt("m", a.m)?;
    let mesh_flag = fc.opt("mesh", a.mesh)?;
    let write_v: Option<PathBuf> = fc.opt("write_v", a.write_v)?;
    let tol = fc.get("tol", a.tol, 1e-10)?;
    fc.finish()?;
    let f = match &input {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
            let f = GridField::from_tf(&text)?;
            if m_flag.is_some_and(|m| m != f.rank()) || mesh_flag.is_some_and(|n| f.extents().iter().any(|&e| e != n)) {
                return Err(Failure::Usage("--m/--mesh disagree with the input file".into()));
            }
            f
        }
        None => {
            let m = m_flag.unwrap_or(2);
            let mesh = mesh_flag.unwrap_or(33);
            match m {
                1 => GridField::square(1, mesh, manufactured::f_rank1)?,
                2 => GridField::square(2, mesh, manufactured::f)?,
                _ => return Err(Failure::Usage(format!("rank {m} is not supported"))),
            }
        }
    };
    let r = decompose_field(&f, tol)?;
    if let Some(p) = &write_v {
        std::fs::write(p, r.v.to_tf()).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
    }
    let res = r.residuals;
    let checks = vec![
        Check::new("reconstruction", "f = dv + iλ + f̃", res.reconstruct, res.tol_reconstruct),
        Check::new("trace of f_tilde", "j f̃ = 0", res.trace, res.tol_constraint),
        Check::new("divergence of f_tilde", "δ f̃ = 0", res.divergence, res.tol_constraint),
        Check::new("boundary value of v", "v|_∂ = 0", res.boundary, 0.0),
    ];
    let config = json!({
        "input": input.as_ref().map(|p| p.display().to_string()),
        "m": r.m, "mesh": r.mesh, "tol": tol,
        "write_v": write_v.as_ref().map(|p| p.display().to_string()),
    });
    let extra = json!({
        "m": r.m, "mesh": r.mesh, "h": r.h,
        "residuals": r.residuals, "norms": r.norms, "solver": r.solver,
    });
    Ok(report("decompose", config, &checks, extra, stamp))
}

/// Polynomial conformal factor from lines `c a b`, meaning `c x^a y^b`.
fn mu_from_file(path: &Path) -> Res<ScalarFn> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let mut terms: Vec<(f64, u32, u32)> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let bad = || Failure::Usage(format!("{}: bad term {line:?}", path.display()));
        let w: Vec<&str> = line.split_whitespace().collect();
        if w.len() != 3 {
            return Err(bad());
        }
        terms.push((w[0].parse().map_err(|_| bad())?, w[1].parse().map_err(|_| bad())?, w[2].parse().map_err(|_| bad())?));
    }
    Ok(Arc::new(move |x: &[Jet]| {
        terms.iter().fold(Jet::constant(0.0), |acc, &(c, a, b)| acc + x[0].powi(a) * x[1].powi(b) * c)
    }))
}

fn chart_from(selector: &str) -> Res<ChartRef> {
    let dom = Domain::cube(2, -1.0, 1.0);
    let mu: ScalarFn = match selector {
        "euclidean" => return Ok(Arc::new(EuclideanChart::new(dom))),
        "conformal:x" => Arc::new(|x: &[Jet]| x[0].clone()),
        "conformal:r2" => Arc::new(|x: &[Jet]| (x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone()) * 0.5),
        s => match s.strip_prefix("conformal:file:") {
            Some(p) => mu_from_file(Path::new(p))?,
            None => return Err(Failure::Usage(format!("unknown metric {s:?}"))),
        },
    };
    Ok(Arc::new(ConformalChart::new(dom, mu, selector)))
}

fn cmd_kinetic(a: KineticArgs, mut fc: FileConf, stamp: bool) -> Res<(Value, bool)> {
    let seed = fc.get("seed", a.seed, 7)?;
    let max_order = fc.get("max_order", a.max_order, 3)?;
    let degree = fc.get("degree", a.degree, 3)?;
    let metric = fc.get("metric", a.metric, "euclidean".to_string())?;
    let nodes = fc.get("nodes", a.nodes, 4)?;
    let tol = fc.get("tol", a.tol, 1e-6)?;
    fc.finish()?;
    let chart = chart_from(&metric)?;
    let stack = random_stack(chart.clone(), max_order, degree, seed)?;
    let pts = chart.domain().interior_lattice(nodes);
    let r = consistency_residual(&stack, &pts)?;
    let checks = vec![Check::new(
        "transport relations match projected H samples",
        "f_m = p d u_{m-1} + (m+1)/(n+2m) δ u_{m+1}",
        r,
        tol,
    )];
    let config = json!({"seed": seed, "max_order": max_order, "degree": degree, "metric": metric, "nodes": nodes, "tol": tol});
    let extra = json!({"nodes": pts.len(), "theta_samples": theta_samples(max_order), "residual": r});
    Ok(report("kinetic", config, &checks, extra, stamp))
}

fn cmd_coeffs(a: CoeffsArgs, mut fc: FileConf) -> Res<String> {
    let n = fc.get("n", a.n, 3)?;
    let m = fc.get("m", a.m, 2)?;
    let table = fc.get("table", a.table, "a".to_string())?;
    fc.finish()?;
    let which = match table.as_str() {
        "a" => 'a',
        "b" => 'b',
        t => return Err(Failure::Usage(format!("table must be a or b, got {t:?}"))),
    };
    Ok(CoeffTable::closed_form(n, m)?.to_csv(which)?)
}

fn run(cli: Cli) -> Res<bool> {
    init_threads()?;
    let fc = FileConf::load(cli.config.as_deref())?;
    let stamp = !cli.no_timestamp;
    let out = cli.out.as_deref();
    let (r, ok) = match cli.cmd {
        Cmd::Coeffs(a) => {
            emit(&cmd_coeffs(a, fc)?, out)?;
            return Ok(true);
        }
        Cmd::Verify(a) => cmd_verify(a, fc, stamp)?,
        Cmd::Ck(a) => cmd_ck(a, fc, stamp)?,
        Cmd::Decompose(a) => cmd_decompose(a, fc, stamp)?,
        Cmd::Kinetic(a) => cmd_kinetic(a, fc, stamp)?,
    };
    emit(&to_json(&r), out)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Io(m) | Failure::Compute(m) => m,
            };
            eprintln!("symten: {msg}");
            ExitCode::from(f.code())
        }
    }
}
