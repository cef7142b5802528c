//! The twelve acceptance criteria, each reduced to one pass/fail line.

use std::f64::consts::SQRT_2;
use std::sync::OnceLock;

use serde::Serialize;

use super::*;
use crate::corrections::build_all;
use crate::expansion::C_PRIME;
use crate::kink::Side;
use crate::locator::{locate_t0, LocateError};
use crate::problem::{builtin, check_assumptions, DEFAULT_CHECK_GRID};
use crate::solver::{build_mesh, compare, newton_solve};

pub const NAMES: [&str; 12] = [
    "kink oracle",
    "layer location",
    "matching constants",
    "jump-formula correctness",
    "exact identities",
    "residual order",
    "phi linearity",
    "sign inequalities",
    "monotonicity",
    "truncation",
    "end-to-end oracle",
    "decay rates",
];

/// Criteria known to fail, with the reason. Criterion 5 compares `Φ[v*]`
/// with `−([v₀(0⁻)]² + [v₀(0⁺)]²)/χ(0)`, but `∫v₀χ = ½[v₀²]` makes the
/// exact value half of that (`−√2`, not `−2√2`, on the cubic).
pub const KNOWN_RED: [(u8, &str); 1] = [(5, "Phi[v*] equals half the stated closed form")];

/// `ε` ladder and mesh size of the end-to-end oracle.
pub const ORACLE_LADDER: [f64; 5] = [0.03125, 0.015625, 0.0078125, 0.00390625, 0.001953125];
pub const ORACLE_N: usize = 16384;
pub const ORACLE_ORDER_MIN: f64 = 1.7;
pub const C_TAU: f64 = 2.5;
/// Intervals per half-line of the finite-difference jump oracle on `|ξ| ≤ 60`.
pub const FD_INTERVALS: usize = 60_000;
pub const SIMPSON_INTERVALS: usize = 100_000;
/// `p` values of the ladder `Φ` tables.
pub const LADDER_P: [f64; 4] = [-1e-2, -1e-3, 1e-3, 1e-2];

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Criterion {
    fn new(id: u8, checks: Vec<(bool, String)>) -> Criterion {
        Criterion {
            id,
            name: NAMES[id as usize - 1],
            passed: checks.iter().all(|c| c.0),
            detail: checks.into_iter().map(|c| c.1).collect::<Vec<_>>().join("; "),
        }
    }

    fn failed(id: u8, err: impl std::fmt::Display) -> Criterion {
        Criterion { id, name: NAMES[id as usize - 1], passed: false, detail: format!("error: {err}") }
    }

    pub fn known_red(&self) -> Option<&'static str> {
        KNOWN_RED.iter().find(|k| k.0 == self.id).map(|k| k.1)
    }

    /// `PASS [ 1] kink oracle: ...`.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        format!("{tag} [{:>2}] {}: {}", self.id, self.name, self.detail)
    }
}

fn check(ok: bool, detail: String) -> (bool, String) {
    let mark = if ok { "ok" } else { "FAILED" };
    (ok, format!("{detail} [{mark}]"))
}

/// Built-in layer models and shared `Φ` tables.
pub struct Context {
    pub cubic: LayerModel,
    pub wavy: LayerModel,
    tables: [OnceLock<Result<PhiTable, VerifyError>>; 2],
}

impl Context {
    pub fn new() -> Result<Context, VerifyError> {
        let build = |name: &str| LayerModel::build(&ProblemSpec::builtin(name).expect("built-in"));
        let (cubic, wavy) = par::join(|| build("cubic"), || build("cubic-wavy"));
        Ok(Context { cubic: cubic?, wavy: wavy?, tables: [OnceLock::new(), OnceLock::new()] })
    }

    pub fn models(&self) -> [(&'static str, &LayerModel); 2] {
        [("cubic", &self.cubic), ("cubic-wavy", &self.wavy)]
    }

    /// `Φ[u_as(·; p)]` over [`LADDER`] × [`LADDER_P`] for model `i`.
    pub fn ladder_table(&self, i: usize) -> Result<&PhiTable, VerifyError> {
        let model = self.models()[i].1;
        self.tables[i].get_or_init(|| PhiTable::build(model, &LADDER, &LADDER_P)).as_ref().map_err(Clone::clone)
    }
}

pub fn run(ctx: &Context, id: u8) -> Criterion {
    let out = match id {
        1 => kink_oracle(ctx),
        2 => layer_location(),
        3 => matching_constants(ctx),
        4 => jump_formula(ctx),
        5 => exact_identities(ctx),
        6 => residual_order(ctx),
        7 => phi_linearity(ctx),
        8 => sign_inequalities(ctx),
        9 => monotonicity(ctx),
        10 => truncation(ctx),
        11 => end_to_end(ctx),
        12 => decay_rates(ctx),
        _ => panic!("no criterion {id}"),
    };
    out.unwrap_or_else(|e| Criterion::failed(id, e))
}

pub fn run_all(ctx: &Context) -> Vec<Criterion> {
    (1..=12).map(|id| run(ctx, id)).collect()
}

fn kink_oracle(ctx: &Context) -> Result<Criterion, VerifyError> {
    let k = &ctx.cubic.kink;
    let err = (0..=20_000)
        .map(|i| {
            let xi = -10.0 + i as f64 * 1e-3;
            (k.value(xi) - 1.0 / (1.0 + (-xi / SQRT_2).exp())).abs()
        })
        .fold(0.0, f64::max);
    let chi0 = k.chi(0.0);
    let target = 1.0 / (4.0 * SQRT_2);
    Ok(Criterion::new(1, vec![
        check(err <= 1e-8, format!("max |V0 - logistic| on |xi| <= 10 = {err:.2e} (<= 1e-8)")),
        check((chi0 - target).abs() <= 1e-9, format!("chi(0) - 1/(4 sqrt 2) = {:.2e} (<= 1e-9)", chi0 - target)),
    ]))
}

fn layer_location() -> Result<Criterion, VerifyError> {
    let spec = ProblemSpec::builtin("cubic").expect("built-in");
    let loc = locate_t0(&spec).map_err(BuildError::from)?;
    let mut f = builtin("cubic").expect("built-in");
    f.b = "u*(u-(0.25+0.5*x))*(u-1)".into();
    f.phi0 = "0.25+0.5*x".into();
    let flipped = ProblemSpec::from_file(f).expect("valid variant");
    let flipped_result = locate_t0(&flipped);
    Ok(Criterion::new(2, vec![
        check((loc.t0 - 0.5).abs() <= 1e-10, format!("t0 - 0.5 = {:.2e} (<= 1e-10)", loc.t0 - 0.5)),
        check((loc.c_i - 1.0 / 12.0).abs() <= 1e-9, format!("C_I - 1/12 = {:.2e} (<= 1e-9)", loc.c_i - 1.0 / 12.0)),
        check(
            matches!(flipped_result, Err(LocateError::WrongOrientation { .. })),
            format!("flipped phi0 gives {:?}", flipped_result.map(|l| l.c_i)),
        ),
    ]))
}

fn matching_constants(ctx: &Context) -> Result<Criterion, VerifyError> {
    let w = &ctx.wavy;
    let (coarse, fine) = c_ii_simpson(&w.spec, &w.kink, SIMPSON_INTERVALS);
    let diff = w.loc.c_ii - fine;
    Ok(Criterion::new(3, vec![
        check(ctx.cubic.loc.t1.abs() <= 1e-8, format!("cubic |t1| = {:.2e} (<= 1e-8)", ctx.cubic.loc.t1.abs())),
        check(
            diff.abs() <= 1e-8,
            format!("cubic-wavy C_II = {:.6e}, Simpson oracle {fine:.6e} (n/2n gap {:.1e}), diff {diff:.2e} (<= 1e-8)", w.loc.c_ii, (coarse - fine).abs()),
        ),
    ]))
}

fn jump_formula(ctx: &Context) -> Result<Criterion, VerifyError> {
    let mut checks = Vec::new();
    for (name, m) in ctx.models() {
        let aux = m.auxiliary(1e-2, 0.0);
        let set = build_all(&aux, &m.grid).map_err(BuildError::from)?;
        let terms = [&set.v1, &set.v2, &set.vstar, &set.z];
        let errs = par::map(&terms, |t| fd_jump_error(t, 60.0, FD_INTERVALS));
        let fd = errs.iter().copied().fold(0.0, f64::max);
        let phi = terms.iter().map(|t| (t.phi - t.phi_one_sided).abs()).fold(0.0, f64::max);
        checks.push(check(fd <= 1e-6, format!("{name}: max FD distance over v1, v2, v*, z = {fd:.2e} (<= 1e-6)")));
        checks.push(check(phi <= 1e-6, format!("{name}: max |Phi quadrature - one-sided| = {phi:.2e} (<= 1e-6)")));
    }
    Ok(Criterion::new(4, checks))
}

fn exact_identities(ctx: &Context) -> Result<Criterion, VerifyError> {
    let m = &ctx.cubic;
    let aux = m.auxiliary(1e-2, 0.0);
    let set = build_all(&aux, &m.grid).map_err(BuildError::from)?;
    let (l, r) = (aux.v0(Side::Lower, 0.0), aux.v0(Side::Upper, 0.0));
    let stated = -(l * l + r * r) / aux.chi(0.0);
    let vstar = set.vstar.phi;
    Ok(Criterion::new(5, vec![
        check(set.z.phi.abs() <= 1e-8, format!("|Phi[z]| = {:.2e} (<= 1e-8)", set.z.phi.abs())),
        check(
            (vstar - stated).abs() <= 1e-6,
            format!("Phi[v*] = {vstar:.10} vs -(v0(0-)^2 + v0(0+)^2)/chi(0) = {stated:.10} (ratio {:.10})", vstar / stated),
        ),
        check((vstar + 2.0 * SQRT_2).abs() <= 1e-6, format!("Phi[v*] + 2 sqrt 2 = {:.2e} (<= 1e-6)", vstar + 2.0 * SQRT_2)),
    ]))
}

fn residual_order(ctx: &Context) -> Result<Criterion, VerifyError> {
    let mut checks = Vec::new();
    for (name, m) in ctx.models() {
        let r = residual_sweep(m, &LADDER, 2000)?;
        checks.push(check(r.passed, format!("{name}: {}", r.detail)));
    }
    Ok(Criterion::new(6, checks))
}

fn phi_linearity(ctx: &Context) -> Result<Criterion, VerifyError> {
    let mut checks = Vec::new();
    for (i, (name, m)) in ctx.models().into_iter().enumerate() {
        let slope = phi_slope_check(m, &PhiTable::build(m, &[1e-2], &PHI_SWEEP_P)?)?;
        checks.push(check(slope.passed, format!("{name}: {}", slope.detail)));
        let intercept = phi_intercept_check(ctx.ladder_table(i)?)?;
        checks.push(check(intercept.passed, format!("{name}: intercept {}", intercept.detail)));
    }
    Ok(Criterion::new(7, checks))
}

fn sign_inequalities(ctx: &Context) -> Result<Criterion, VerifyError> {
    let mut checks = Vec::new();
    for (i, (name, m)) in ctx.models().into_iter().enumerate() {
        let sign = phi_sign_check(ctx.ladder_table(i)?)?;
        checks.push(check(sign.passed, format!("{name}: Phi[u_as] {}", sign.detail)));
        let beta = phi_beta_check(m, &LADDER, &[-1e-2, 1e-2], sign.constants["C1"], sign.constants["C2"])?;
        checks.push(check(beta.passed, format!("{name}: Phi[beta] {}", beta.detail)));
        let gamma_sq = check_assumptions(&m.spec, DEFAULT_CHECK_GRID).gamma_sq_est;
        let small: Vec<f64> = LADDER.iter().copied().filter(|&e| e <= 1e-2).collect();
        let (fb, _) = fbeta_check(m, &small, 0.01, 0.01, gamma_sq, 2000)?;
        checks.push(check(fb.passed, format!("{name}: Fbeta {}", fb.detail)));
    }
    Ok(Criterion::new(8, checks))
}

fn monotonicity(ctx: &Context) -> Result<Criterion, VerifyError> {
    let mut checks = Vec::new();
    for (name, m) in ctx.models() {
        for eps in [1e-2, 1e-3] {
            let p = 0.01;
            let (upper, lower) = beta_pair(m, eps, p, coupled_p_prime(eps, p), eps)?;
            let r = monotonicity_check(&upper, &lower, 1000);
            checks.push(check(r.passed, format!("{name} eps={eps:e}: min gap {:.3e} at x={:.6}", r.min_gap, r.worst_x)));
        }
    }
    Ok(Criterion::new(9, checks))
}

fn truncation(ctx: &Context) -> Result<Criterion, VerifyError> {
    let cases = [(1e-2, 64), (1e-2, 256), (1e-3, 64), (1e-3, 256)];
    let mut checks = Vec::new();
    for (name, m) in ctx.models() {
        let r = truncation_check(m, &cases, C_TAU, 10_000)?;
        checks.push(check(r.passed, format!("{name}: {}", r.detail)));
    }
    Ok(Criterion::new(10, checks))
}

fn end_to_end(ctx: &Context) -> Result<Criterion, VerifyError> {
    let m = &ctx.cubic;
    let solve = |eps: f64, n: usize| -> Result<(usize, f64), String> {
        let spec = m.spec.with_epsilon(eps).map_err(|e| e.to_string())?;
        let e = m.expansion(eps, 0.0).map_err(|e| e.to_string())?;
        let mesh = build_mesh(&m.loc, eps, n, C_TAU).map_err(|e| e.to_string())?;
        let sol = newton_solve(&spec, &mesh, |x| e.eval(x)).map_err(|e| e.to_string())?;
        Ok((sol.iterations, compare(&sol, &e).max))
    };
    let mut checks = Vec::new();
    match solve(1e-2, 512) {
        Ok((it, _)) => checks.push(check(it <= 8, format!("eps=1e-2, N=512: {it} Newton iterations (<= 8)"))),
        Err(e) => checks.push(check(false, format!("eps=1e-2, N=512: {e}"))),
    }
    let runs = par::map(&ORACLE_LADDER, |&eps| solve(eps, ORACLE_N));
    match runs.into_iter().collect::<Result<Vec<_>, _>>() {
        Ok(runs) => {
            let d: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let fit = Fit::new(FitKind::LogLog, &ORACLE_LADDER, &d)?;
            let decreasing = d.windows(2).all(|w| w[1] < w[0]);
            checks.push(check(
                fit.slope >= ORACLE_ORDER_MIN && decreasing,
                format!(
                    "N={ORACLE_N}, eps 2^-5..2^-9: distances [{}], order {:.3} (>= {ORACLE_ORDER_MIN})",
                    d.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(", "),
                    fit.slope
                ),
            ));
        }
        Err(e) => checks.push(check(false, format!("ladder solve failed: {e}"))),
    }
    Ok(Criterion::new(11, checks))
}

fn decay_rates(ctx: &Context) -> Result<Criterion, VerifyError> {
    let mut checks = Vec::new();
    for (name, m) in ctx.models() {
        let r = decay_report(m, 1e-2)?;
        checks.push(check(r.passed, format!("{name}: {}", r.detail)));
    }
    Ok(Criterion::new(12, checks))
}

/// `p′ = C′εp` as used by the monotonicity criterion.
pub fn coupled_p_prime(epsilon: f64, p: f64) -> f64 {
    C_PRIME * epsilon * p
}
