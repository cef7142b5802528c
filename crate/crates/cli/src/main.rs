// `!(a > b)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use layerforge_core::corrections::build_all;
use layerforge_core::expansion::{sample_points, LayerModel, C_PRIME, P_MAX, P_PRIME_MAX};
use layerforge_core::kink::Side;
use layerforge_core::problem::{DEFAULT_CHECK_GRID, ProblemSpec};
use layerforge_core::solver::{build_mesh, compare, newton_solve};
use layerforge_core::verify::acceptance::{run_all, Context};
use layerforge_core::verify::{
    beta_pair, decay_report, fbeta_check, monotonicity_check, phi_slope_check, residual_sweep, PhiTable, LADDER,
    PHI_SWEEP_P,
};
use layerforge_core::{check_assumptions, resolve_problem};

use output::{emit, envelope, Cell, Csv};

const CSV_HELP: &str = "\
CSV columns (--format csv):
  check             name,passed,worst_x,worst_value
  locate            key,value
  dump-kink         xi,v0,chi
  dump-corrections  term,side,xi,value,derivative
  expand            x,u_as,beta,truncated
  residual          epsilon,max_residual
  phi               p,phi
  decay             term,rate
  monotone          x,beta_upper,beta_lower,gap
  fbeta             epsilon,p_prime,deficit,worst_x,scale,floor
  solve             x,u
  compare           x,u_num,u_as,difference
  all               id,name,passed,detail

Floats carry 17 significant digits. JSON reports are wrapped in
{schema_version, command, problem, result}.

Exit status: 0 success, 1 failed check or computation error, 2 usage error.
LAYERFORGE_THREADS sets the worker-thread count of parallel sweeps.";

#[derive(Parser)]
#[command(name = "layerforge", version, about = "Interior transition layers of -eps^2 u'' + b(x, u) = 0", after_help = CSV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(clap::Args)]
struct Opts {
    /// Built-in name (cubic, cubic-wavy) or path to a problem JSON file.
    #[arg(long, global = true, default_value = "cubic")]
    problem: String,
    /// Perturbation parameter (defaults to the problem's epsilon).
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Mesh cells (solve, compare, expand); a multiple of 4 for layer meshes.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Transition-width constant, must exceed 2.
    #[arg(long = "c-tau", global = true, default_value_t = 2.5)]
    c_tau: f64,
    /// Layer shift p (0 by default; 0.01 for monotone and fbeta).
    #[arg(long, global = true, allow_negative_numbers = true)]
    p: Option<f64>,
    /// Perturbation p' (defaults to C' eps p with C' = 1).
    #[arg(long = "p-prime", global = true, allow_negative_numbers = true)]
    p_prime: Option<f64>,
    /// Mesh-width parameter h_hat (defaults to h_hat^2 = eps).
    #[arg(long = "h-hat", global = true)]
    h_hat: Option<f64>,
    /// Directory for output files instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Subcommand)]
enum Command {
    /// Check the structural assumptions of the problem.
    Check,
    /// Locate the layer and compute the matching constants.
    Locate,
    /// Tabulate the kink profile and chi.
    DumpKink,
    /// Tabulate v1, v2, v* and z at (eps, p).
    DumpCorrections,
    /// Evaluate u_as, beta and the truncated form on a uniform grid of N cells.
    Expand,
    /// Residual order sweep over eps = 2^-4 .. 2^-10.
    Residual,
    /// Phi[u_as(.; p)] sweep at eps and its slope check.
    Phi,
    /// Tail decay rates of chi, v1, v2, v*, z.
    Decay,
    /// Monotonicity of beta in (p, p').
    Monotone,
    /// Fbeta lower bound on the ladder rungs with eps <= --eps.
    Fbeta,
    /// Solve the boundary value problem by damped Newton seeded by u_as.
    Solve,
    /// Solve and compare against u_as.
    Compare,
    /// Run the twelve acceptance criteria on the built-in problems.
    All,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Locate => "locate",
            Command::DumpKink => "dump-kink",
            Command::DumpCorrections => "dump-corrections",
            Command::Expand => "expand",
            Command::Residual => "residual",
            Command::Phi => "phi",
            Command::Decay => "decay",
            Command::Monotone => "monotone",
            Command::Fbeta => "fbeta",
            Command::Solve => "solve",
            Command::Compare => "compare",
            Command::All => "all",
        }
    }
}

/// A flag failed validation.
struct Usage {
    flag: &'static str,
    message: String,
}

fn usage(flag: &'static str, message: impl Into<String>) -> Usage {
    Usage { flag, message: message.into() }
}

/// Validated parameters of one run.
struct RunConfig {
    command: Command,
    spec: ProblemSpec,
    eps: f64,
    n: usize,
    c_tau: f64,
    p: f64,
    p_prime: f64,
    h_hat_sq: f64,
    out: Option<PathBuf>,
    format: Format,
}

impl RunConfig {
    fn from_cli(cli: Cli) -> Result<RunConfig, Usage> {
        let o = cli.opts;
        let command = cli.command;
        let base = resolve_problem(&o.problem).map_err(|e| usage("--problem", e.to_string()))?;
        let eps = o.eps.unwrap_or(base.epsilon);
        if !(eps > 0.0 && eps < 1.0) {
            return Err(usage("--eps", format!("{eps} must satisfy 0 < eps < 1")));
        }
        let spec = base.with_epsilon(eps).map_err(|e| usage("--eps", e.to_string()))?;
        let n = o.n.unwrap_or(512);
        let layer_mesh = matches!(command, Command::Solve | Command::Compare | Command::Expand);
        if layer_mesh && (n < 4 || !n.is_multiple_of(4)) {
            return Err(usage("--n", format!("{n} must be a positive multiple of 4")));
        }
        if !(o.c_tau > 2.0) {
            return Err(usage("--c-tau", format!("{} must exceed 2", o.c_tau)));
        }
        let default_p = if matches!(command, Command::Monotone | Command::Fbeta) { 0.01 } else { 0.0 };
        let p = o.p.unwrap_or(default_p);
        if !(p.abs() <= P_MAX) {
            return Err(usage("--p", format!("|{p}| must not exceed {P_MAX}")));
        }
        let p_prime = o.p_prime.unwrap_or(C_PRIME * eps * p);
        if !(p_prime.abs() <= P_PRIME_MAX) {
            return Err(usage("--p-prime", format!("|{p_prime}| must not exceed {P_PRIME_MAX}")));
        }
        let h_hat_sq = match o.h_hat {
            Some(h) if !(h >= 0.0 && h * h <= eps) => {
                return Err(usage("--h-hat", format!("{h} must satisfy 0 <= h_hat^2 <= eps")))
            }
            Some(h) => h * h,
            None => eps,
        };
        Ok(RunConfig { command, spec, eps, n, c_tau: o.c_tau, p, p_prime, h_hat_sq, out: o.out, format: o.format })
    }
}

/// Result of one subcommand.
struct Outcome {
    passed: bool,
    json: Value,
    csv: Csv,
}

type Run = Result<Outcome, String>;

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn model(cfg: &RunConfig) -> Result<LayerModel, String> {
    LayerModel::build(&cfg.spec).map_err(|e| e.to_string())
}

fn cmd_check(cfg: &RunConfig) -> Run {
    let mut report = check_assumptions(&cfg.spec, DEFAULT_CHECK_GRID);
    let layer = LayerModel::build(&cfg.spec).map(|m| (m.loc.t0, m.loc.gamma_bar * m.loc.gamma_bar)).map_err(|e| e.to_string());
    report.record_layer_point(layer);
    let mut csv = Csv::new(&["name", "passed", "worst_x", "worst_value"]);
    for c in &report.checks {
        csv.row(&[Cell::S(&c.name), Cell::S(if c.passed { "true" } else { "false" }), Cell::F(c.worst_x.unwrap_or(f64::NAN)), Cell::F(c.worst_value.unwrap_or(f64::NAN))]);
    }
    Ok(Outcome { passed: report.all_passed(), json: to_value(&report), csv })
}

fn cmd_locate(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let l = m.loc;
    let mut csv = Csv::new(&["key", "value"]);
    for (k, v) in [
        ("t0", l.t0),
        ("c_i", l.c_i),
        ("c_ii", l.c_ii),
        ("c_iii", l.c_iii),
        ("t1", l.t1),
        ("t2", l.t2),
        ("gamma_bar", l.gamma_bar),
        ("chi0", l.chi0),
        ("t1_bar", l.t1_bar(cfg.eps)),
    ] {
        csv.row(&[Cell::S(k), Cell::F(v)]);
    }
    let mut json = to_value(&l);
    json["t1_bar"] = json!(l.t1_bar(cfg.eps));
    json["epsilon"] = json!(cfg.eps);
    Ok(Outcome { passed: true, json, csv })
}

fn cmd_dump_kink(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let nodes = m.kink.nodes();
    let mut csv = Csv::new(&["xi", "v0", "chi"]);
    for n in &nodes {
        csv.row(&[Cell::F(n.xi), Cell::F(n.v0), Cell::F(n.chi)]);
    }
    let json = json!({
        "t0": m.kink.t0,
        "limits": m.kink.limits,
        "anchor": m.kink.anchor,
        "rates": m.kink.rates,
        "extent": m.kink.extent,
        "nodes": to_value(&nodes),
    });
    Ok(Outcome { passed: true, json, csv })
}

fn cmd_dump_corrections(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    m.expansion(cfg.eps, cfg.p).map_err(|e| e.to_string())?;
    let aux = m.auxiliary(cfg.eps, cfg.p);
    let set = build_all(&aux, &m.grid).map_err(|e| e.to_string())?;
    let mut csv = Csv::new(&["term", "side", "xi", "value", "derivative"]);
    let mut terms = Vec::new();
    for t in [&set.v1, &set.v2, &set.vstar, &set.z] {
        for (side, label) in [(Side::Lower, "lower"), (Side::Upper, "upper")] {
            for n in t.nodes(side) {
                csv.row(&[Cell::S(t.kind.label()), Cell::S(label), Cell::F(n.xi), Cell::F(n.value), Cell::F(n.derivative)]);
            }
        }
        terms.push(json!({
            "term": t.kind.label(),
            "jump": t.jump,
            "phi": t.phi,
            "phi_one_sided": t.phi_one_sided,
            "extent": t.extent(),
            "lower": to_value(&t.nodes(Side::Lower)),
            "upper": to_value(&t.nodes(Side::Upper)),
        }));
    }
    Ok(Outcome { passed: true, json: json!({ "epsilon": cfg.eps, "p": cfg.p, "terms": terms }), csv })
}

fn cmd_expand(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let pe = m.perturbed(cfg.eps, cfg.p, cfg.p_prime, cfg.h_hat_sq).map_err(|e| e.to_string())?;
    let e = &pe.base;
    let mut csv = Csv::new(&["x", "u_as", "beta", "truncated"]);
    let mut rows = Vec::new();
    for i in 0..=cfg.n {
        let x = i as f64 / cfg.n as f64;
        let u = e.eval(x);
        let b = pe.eval_beta(x);
        let t = e.eval_u_truncated(x, cfg.n, cfg.c_tau).map_err(|e| e.to_string())?;
        csv.row(&[Cell::F(x), Cell::F(u), Cell::F(b), Cell::F(t)]);
        rows.push(json!([x, u, b, t]));
    }
    let json = json!({
        "epsilon": cfg.eps, "p": cfg.p, "p_prime": cfg.p_prime, "h_hat_sq": cfg.h_hat_sq,
        "n": cfg.n, "c_tau": cfg.c_tau, "phi_u_as": e.phi_functional(), "phi_beta": pe.phi_functional(),
        "columns": ["x", "u_as", "beta", "truncated"], "rows": rows,
    });
    Ok(Outcome { passed: true, json, csv })
}

fn cmd_residual(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let r = residual_sweep(&m, &LADDER, 2000).map_err(|e| e.to_string())?;
    let mut csv = Csv::new(&["epsilon", "max_residual"]);
    for (e, v) in r.values.iter().zip(&r.measured) {
        csv.row(&[Cell::F(*e), Cell::F(*v)]);
    }
    Ok(Outcome { passed: r.passed, json: to_value(&r), csv })
}

fn cmd_phi(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let table = PhiTable::build(&m, &[cfg.eps], &PHI_SWEEP_P).map_err(|e| e.to_string())?;
    let r = phi_slope_check(&m, &table).map_err(|e| e.to_string())?;
    let mut csv = Csv::new(&["p", "phi"]);
    for (p, v) in r.values.iter().zip(&r.measured) {
        csv.row(&[Cell::F(*p), Cell::F(*v)]);
    }
    Ok(Outcome { passed: r.passed, json: to_value(&r), csv })
}

fn cmd_decay(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let r = decay_report(&m, cfg.eps).map_err(|e| e.to_string())?;
    let mut csv = Csv::new(&["term", "rate"]);
    for (t, v) in ["chi", "v1", "v2", "vstar", "z"].iter().zip(&r.measured) {
        csv.row(&[Cell::S(t), Cell::F(*v)]);
    }
    Ok(Outcome { passed: r.passed, json: to_value(&r), csv })
}

fn cmd_monotone(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let (upper, lower) = beta_pair(&m, cfg.eps, cfg.p, cfg.p_prime, cfg.h_hat_sq).map_err(|e| e.to_string())?;
    let r = monotonicity_check(&upper, &lower, 1000);
    let mut csv = Csv::new(&["x", "beta_upper", "beta_lower", "gap"]);
    let mut xs = sample_points(m.loc.t0, cfg.eps, 997);
    xs.extend([0.0, m.loc.t0, 1.0]);
    xs.sort_by(f64::total_cmp);
    for x in xs {
        let (u, l) = (upper.eval_beta(x), lower.eval_beta(x));
        csv.row(&[Cell::F(x), Cell::F(u), Cell::F(l), Cell::F(u - l)]);
    }
    let mut json = to_value(&r);
    json["c0"] = json!(upper.c0);
    Ok(Outcome { passed: r.passed, json, csv })
}

fn cmd_fbeta(cfg: &RunConfig) -> Run {
    let m = model(cfg)?;
    let rungs: Vec<f64> = LADDER.iter().copied().filter(|&e| e <= cfg.eps * (1.0 + 1e-12)).collect();
    if rungs.is_empty() {
        return Err(format!("no ladder rung at or below eps = {}", cfg.eps));
    }
    let gamma_sq = check_assumptions(&m.spec, DEFAULT_CHECK_GRID).gamma_sq_est;
    let (r, samples) = fbeta_check(&m, &rungs, cfg.p, 0.01, gamma_sq, 2000).map_err(|e| e.to_string())?;
    let mut csv = Csv::new(&["epsilon", "p_prime", "deficit", "worst_x", "scale", "floor"]);
    for s in &samples {
        csv.row(&[Cell::F(s.epsilon), Cell::F(s.p_prime), Cell::F(s.deficit), Cell::F(s.worst_x), Cell::F(s.scale), Cell::F(s.floor)]);
    }
    Ok(Outcome { passed: r.passed, json: json!({ "report": to_value(&r), "samples": to_value(&samples) }), csv })
}

fn solve(cfg: &RunConfig) -> Result<(LayerModel, layerforge_core::expansion::Expansion, layerforge_core::solver::MeshSolution), String> {
    let m = model(cfg)?;
    let e = m.expansion(cfg.eps, cfg.p).map_err(|e| e.to_string())?;
    let mesh = build_mesh(&m.loc, cfg.eps, cfg.n, cfg.c_tau).map_err(|e| e.to_string())?;
    let sol = newton_solve(&cfg.spec, &mesh, |x| e.eval(x)).map_err(|e| e.to_string())?;
    Ok((m, e, sol))
}

fn cmd_solve(cfg: &RunConfig) -> Run {
    let (_, _, sol) = solve(cfg)?;
    let mut csv = Csv::new(&["x", "u"]);
    for (x, u) in sol.mesh.nodes.iter().zip(&sol.u) {
        csv.row(&[Cell::F(*x), Cell::F(*u)]);
    }
    Ok(Outcome { passed: true, json: to_value(&sol), csv })
}

fn cmd_compare(cfg: &RunConfig) -> Run {
    let (_, e, sol) = solve(cfg)?;
    let d = compare(&sol, &e);
    let mut csv = Csv::new(&["x", "u_num", "u_as", "difference"]);
    for (x, u) in sol.mesh.nodes.iter().zip(&sol.u) {
        let a = e.eval(*x);
        csv.row(&[Cell::F(*x), Cell::F(*u), Cell::F(a), Cell::F(u - a)]);
    }
    let json = json!({
        "epsilon": cfg.eps, "n": cfg.n, "tau": sol.mesh.tau, "iterations": sol.iterations,
        "residual": sol.residual, "distances": to_value(&d),
    });
    Ok(Outcome { passed: true, json, csv })
}

fn cmd_all() -> Run {
    let ctx = Context::new().map_err(|e| e.to_string())?;
    let results = run_all(&ctx);
    let mut csv = Csv::new(&["id", "name", "passed", "detail"]);
    for c in &results {
        eprintln!("{}", c.line());
        if let (false, Some(reason)) = (c.passed, c.known_red()) {
            eprintln!("     known red: {reason}");
        }
        let detail = format!("\"{}\"", c.detail.replace('"', "\"\""));
        csv.row(&[Cell::I(c.id as usize), Cell::S(c.name), Cell::S(if c.passed { "true" } else { "false" }), Cell::S(&detail)]);
    }
    let passed = results.iter().all(|c| c.passed);
    Ok(Outcome { passed, json: json!({ "criteria": to_value(&results) }), csv })
}

fn dispatch(cfg: &RunConfig) -> Run {
    match cfg.command {
        Command::Check => cmd_check(cfg),
        Command::Locate => cmd_locate(cfg),
        Command::DumpKink => cmd_dump_kink(cfg),
        Command::DumpCorrections => cmd_dump_corrections(cfg),
        Command::Expand => cmd_expand(cfg),
        Command::Residual => cmd_residual(cfg),
        Command::Phi => cmd_phi(cfg),
        Command::Decay => cmd_decay(cfg),
        Command::Monotone => cmd_monotone(cfg),
        Command::Fbeta => cmd_fbeta(cfg),
        Command::Solve => cmd_solve(cfg),
        Command::Compare => cmd_compare(cfg),
        Command::All => cmd_all(),
    }
}

fn configure_threads() -> Result<(), Usage> {
    let Ok(raw) = std::env::var("LAYERFORGE_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage("LAYERFORGE_THREADS", format!("'{raw}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage("LAYERFORGE_THREADS", e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match configure_threads().and_then(|_| RunConfig::from_cli(cli)) {
        Ok(cfg) => cfg,
        Err(u) => {
            eprintln!("error: invalid value for {}: {}", u.flag, u.message);
            return ExitCode::from(2);
        }
    };
    let outcome = match dispatch(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let name = cfg.command.name();
    let (file, text) = match cfg.format {
        Format::Json => (format!("{name}.json"), envelope(name, &cfg.spec.name, outcome.json)),
        Format::Csv => (format!("{name}.csv"), outcome.csv.into_string()),
    };
    if let Err(e) = emit(cfg.out.as_ref(), &file, &text) {
        eprintln!("error: writing {file}: {e}");
        return ExitCode::from(1);
    }
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
