//! Problem instances `-ε² u'' + b(x, u) = 0`, `u(0) = g0`, `u(1) = g1`, with
//! user-supplied reduced roots, and the numerical assumption checker.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Expr, ParseError, Var};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read problem file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid problem JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field \"{field}\": {source}")]
    Expr {
        field: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("root \"{field}\" may only depend on x")]
    RootDependsOnU { field: &'static str },
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("unknown built-in problem \"{0}\"")]
    UnknownBuiltin(String),
}

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub name: String,
    pub b: String,
    pub phi0: String,
    pub phi1: String,
    pub phi2: String,
    pub g0: f64,
    pub g1: f64,
    pub epsilon: f64,
}

const PI_TEXT: &str = "3.14159265358979";

/// Names of the shipped problems.
pub const BUILTINS: [&str; 2] = ["cubic", "cubic-wavy"];

pub fn builtin(name: &str) -> Option<ProblemFile> {
    match name {
        "cubic" => Some(ProblemFile {
            name: "cubic".into(),
            b: "u*(u-(0.75-0.5*x))*(u-1)".into(),
            phi0: "0.75-0.5*x".into(),
            phi1: "0".into(),
            phi2: "1".into(),
            g0: 0.0,
            g1: 1.0,
            epsilon: 0.01,
        }),
        "cubic-wavy" => {
            let w = format!("0.1*sin({PI_TEXT}*x)");
            let phi0 = format!("0.75-0.5*x+{w}");
            let phi2 = format!("1+{w}");
            Some(ProblemFile {
                name: "cubic-wavy".into(),
                b: format!("(u-{w})*(u-({phi0}))*(u-({phi2}))"),
                phi0,
                phi1: w,
                phi2,
                g0: 0.0,
                g1: 1.0,
                epsilon: 0.01,
            })
        }
        _ => None,
    }
}

/// Reaction term with all partial derivatives up to total order three that
/// the construction uses.
#[derive(Debug, Clone)]
pub struct Reaction {
    pub b: Expr,
    pub bx: Expr,
    pub bu: Expr,
    pub bxx: Expr,
    pub bxu: Expr,
    pub buu: Expr,
    pub bxxu: Expr,
    pub bxuu: Expr,
    pub buuu: Expr,
}

impl Reaction {
    fn new(b: Expr) -> Reaction {
        let bx = b.differentiate(Var::X);
        let bu = b.differentiate(Var::U);
        let bxx = bx.differentiate(Var::X);
        let bxu = bx.differentiate(Var::U);
        let buu = bu.differentiate(Var::U);
        let bxxu = bxx.differentiate(Var::U);
        let bxuu = bxu.differentiate(Var::U);
        let buuu = buu.differentiate(Var::U);
        Reaction { b, bx, bu, bxx, bxu, buu, bxxu, bxuu, buuu }
    }
}

/// A reduced root `φ(x)` with derivatives, and the smooth second-order
/// correction `u₂ = φ''/b_u(x, φ)` with its first two derivatives.
#[derive(Debug, Clone)]
pub struct Root {
    pub phi: Expr,
    pub d1: Expr,
    pub d2: Expr,
    pub u2: Expr,
    pub u2_d1: Expr,
    pub u2_d2: Expr,
}

impl Root {
    fn new(phi: Expr, reaction: &Reaction) -> Root {
        let d1 = phi.differentiate(Var::X);
        let d2 = d1.differentiate(Var::X);
        let u2 = Expr::div(d2.clone(), reaction.bu.substitute_u(&phi));
        let u2_d1 = u2.differentiate(Var::X);
        let u2_d2 = u2_d1.differentiate(Var::X);
        Root { phi, d1, d2, u2, u2_d1, u2_d2 }
    }
}

/// Evaluate, mapping domain errors to NaN so that hot loops stay branch-free;
/// NaN propagates into every downstream check.
#[inline]
pub fn ev(e: &Expr, x: f64, u: f64) -> f64 {
    e.eval(x, u).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub file: ProblemFile,
    pub reaction: Reaction,
    /// `φ₀` (unstable), `φ₁`, `φ₂` (stable) in that order.
    pub roots: [Root; 3],
    pub g0: f64,
    pub g1: f64,
    pub epsilon: f64,
}

impl ProblemSpec {
    pub fn from_file(file: ProblemFile) -> Result<ProblemSpec, ProblemError> {
        if !(file.epsilon > 0.0 && file.epsilon < 1.0) {
            return Err(ProblemError::InvalidEpsilon(file.epsilon));
        }
        let parse = |field: &'static str, text: &str| {
            expr::parse(text).map_err(|source| ProblemError::Expr { field, source })
        };
        let b = parse("b", &file.b)?;
        let reaction = Reaction::new(b);
        let mut roots = Vec::with_capacity(3);
        for (field, text) in [("phi0", &file.phi0), ("phi1", &file.phi1), ("phi2", &file.phi2)] {
            let phi = parse(field, text)?;
            if phi.depends_on(Var::U) {
                return Err(ProblemError::RootDependsOnU { field });
            }
            roots.push(Root::new(phi, &reaction));
        }
        let roots: [Root; 3] = roots.try_into().expect("three roots");
        Ok(ProblemSpec {
            name: file.name.clone(),
            g0: file.g0,
            g1: file.g1,
            epsilon: file.epsilon,
            file,
            reaction,
            roots,
        })
    }

    pub fn builtin(name: &str) -> Result<ProblemSpec, ProblemError> {
        let file = builtin(name).ok_or_else(|| ProblemError::UnknownBuiltin(name.to_string()))?;
        ProblemSpec::from_file(file)
    }

    /// Same problem with a different ε.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<ProblemSpec, ProblemError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ProblemError::InvalidEpsilon(epsilon));
        }
        let mut spec = self.clone();
        spec.epsilon = epsilon;
        spec.file.epsilon = epsilon;
        Ok(spec)
    }

    pub fn b(&self, x: f64, u: f64) -> f64 {
        ev(&self.reaction.b, x, u)
    }

    pub fn bu(&self, x: f64, u: f64) -> f64 {
        ev(&self.reaction.bu, x, u)
    }

    pub fn bx(&self, x: f64, u: f64) -> f64 {
        ev(&self.reaction.bx, x, u)
    }

    pub fn buu(&self, x: f64, u: f64) -> f64 {
        ev(&self.reaction.buu, x, u)
    }

    /// `φ_k(x)` for k = 0, 1, 2.
    pub fn phi(&self, k: usize, x: f64) -> f64 {
        ev(&self.roots[k].phi, x, 0.0)
    }

    pub fn phi_d1(&self, k: usize, x: f64) -> f64 {
        ev(&self.roots[k].d1, x, 0.0)
    }

    pub fn phi_d2(&self, k: usize, x: f64) -> f64 {
        ev(&self.roots[k].d2, x, 0.0)
    }

    /// `1 + max|b|` over the check grid, sampling `u` between `φ₁` and `φ₂`.
    pub fn tolerance_scale(&self, n_grid: usize) -> f64 {
        let mut max_b: f64 = 0.0;
        for i in 0..=n_grid {
            let x = i as f64 / n_grid as f64;
            let (lo, hi) = (self.phi(1, x), self.phi(2, x));
            for j in 0..=32 {
                let u = lo + (hi - lo) * j as f64 / 32.0;
                max_b = max_b.max(self.b(x, u).abs());
            }
        }
        1.0 + max_b
    }
}

/// Load a problem from a JSON file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<ProblemSpec, ProblemError> {
    let text = std::fs::read_to_string(path)?;
    let file: ProblemFile = serde_json::from_str(&text)?;
    ProblemSpec::from_file(file)
}

/// Built-in name or path to a JSON file.
pub fn resolve_problem(name_or_path: &str) -> Result<ProblemSpec, ProblemError> {
    if BUILTINS.contains(&name_or_path) {
        ProblemSpec::builtin(name_or_path)
    } else {
        load_problem(name_or_path)
    }
}

pub const DEFAULT_CHECK_GRID: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub worst_x: Option<f64>,
    pub worst_value: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub n_grid: usize,
    pub tolerance_scale: f64,
    pub checks: Vec<AssumptionCheck>,
    /// Minimum of `b_u(x, φ_k(x))`, k = 1, 2, less a 1% margin.
    pub gamma_sq_est: f64,
    /// `min_k b_u(t₀, φ_k(t₀))`, filled in once the layer point is known.
    pub gamma_bar_sq_est: Option<f64>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Record the outcome of the layer-point search, which decides (A5).
    pub fn record_layer_point(&mut self, outcome: Result<(f64, f64), String>) {
        let check = match outcome {
            Ok((t0, gamma_bar_sq)) => {
                self.gamma_bar_sq_est = Some(gamma_bar_sq);
                AssumptionCheck {
                    name: "A5".into(),
                    passed: true,
                    worst_x: Some(t0),
                    worst_value: None,
                    detail: format!("simple layer point t0 = {t0}"),
                }
            }
            Err(reason) => AssumptionCheck {
                name: "A5".into(),
                passed: false,
                worst_x: None,
                worst_value: None,
                detail: reason,
            },
        };
        self.checks.retain(|c| c.name != "A5");
        self.checks.push(check);
    }
}

/// Tracks the worst point of a pointwise check.
struct Worst {
    x: f64,
    value: f64,
    badness: f64,
}

impl Worst {
    fn new() -> Worst {
        Worst { x: f64::NAN, value: f64::NAN, badness: f64::NEG_INFINITY }
    }

    fn offer(&mut self, x: f64, value: f64, badness: f64) {
        let badness = if badness.is_nan() { f64::INFINITY } else { badness };
        if badness > self.badness {
            *self = Worst { x, value, badness };
        }
    }
}

fn outcome(name: &str, passed: bool, worst: &Worst, detail: String) -> AssumptionCheck {
    AssumptionCheck {
        name: name.into(),
        passed,
        worst_x: (!passed).then_some(worst.x),
        worst_value: (!passed).then_some(worst.value),
        detail,
    }
}

/// Check (A1)–(A4) and (A6) on a uniform grid of `n_grid + 1` points.
pub fn check_assumptions(spec: &ProblemSpec, n_grid: usize) -> AssumptionReport {
    assert!(n_grid >= 16, "check grid needs at least 16 intervals");
    let scale = spec.tolerance_scale(n_grid);
    let tol = 1e-10 * scale;
    let xs: Vec<f64> = (0..=n_grid).map(|i| i as f64 / n_grid as f64).collect();
    let mut checks = Vec::new();

    // (A1) the roots solve the reduced problem.
    let mut w = Worst::new();
    for &x in &xs {
        for k in 0..3 {
            let r = spec.b(x, spec.phi(k, x));
            w.offer(x, r, r.abs());
        }
    }
    let pass = w.badness <= tol;
    checks.push(outcome("A1", pass, &w, format!("max |b(x, phi_k)| = {:e}", w.badness)));

    // (A2) ordering, and no further root of b(x, .) strictly between phi1 and phi2.
    let margin = 1e-8 * scale;
    let mut w = Worst::new();
    let mut extra_root = None;
    for &x in &xs {
        let (p0, p1, p2) = (spec.phi(0, x), spec.phi(1, x), spec.phi(2, x));
        let gap = (p0 - p1).min(p2 - p0);
        w.offer(x, gap, -gap);
        let samples = 64;
        for j in 1..samples {
            let u = p1 + (p2 - p1) * j as f64 / samples as f64;
            if (u - p0).abs() < 1e-6 * (p2 - p1) {
                continue;
            }
            // Sign must be positive on (phi1, phi0) and negative on (phi0, phi2).
            let expected = if u < p0 { 1.0 } else { -1.0 };
            if spec.b(x, u) * expected <= 0.0 && extra_root.is_none() {
                extra_root = Some((x, u));
            }
        }
    }
    let ordered = -w.badness > margin;
    let detail = match extra_root {
        Some((x, u)) => format!("b(x,u) changes sign away from phi0 at x={x}, u={u}"),
        None => format!("min gap between roots = {:e}", -w.badness),
    };
    let pass = ordered && extra_root.is_none();
    checks.push(outcome("A2", pass, &w, detail));

    // (A3) stability of phi1, phi2.
    let mut w = Worst::new();
    let mut min_bu = f64::INFINITY;
    for &x in &xs {
        for k in [1, 2] {
            let v = spec.bu(x, spec.phi(k, x));
            min_bu = min_bu.min(v);
            w.offer(x, v, -v);
        }
    }
    let pass = min_bu > 0.0;
    checks.push(outcome("A3", pass, &w, format!("min b_u(x, phi_1,2) = {min_bu}")));

    // (A4) instability of phi0.
    let mut w = Worst::new();
    for &x in &xs {
        let v = spec.bu(x, spec.phi(0, x));
        w.offer(x, v, v);
    }
    let pass = w.badness < 0.0;
    checks.push(outcome("A4", pass, &w, format!("max b_u(x, phi_0) = {}", w.badness)));

    // (A6) boundary compatibility.
    let items = [
        (0.0, spec.phi(1, 0.0) - spec.g0),
        (1.0, spec.phi(2, 1.0) - spec.g1),
        (0.0, spec.phi_d2(1, 0.0)),
        (1.0, spec.phi_d2(2, 1.0)),
    ];
    let mut w = Worst::new();
    for (x, v) in items {
        w.offer(x, v, v.abs());
    }
    let pass = w.badness <= tol;
    checks.push(outcome(
        "A6",
        pass,
        &w,
        format!("max boundary mismatch = {:e}", w.badness),
    ));

    AssumptionReport {
        n_grid,
        tolerance_scale: scale,
        checks,
        gamma_sq_est: 0.99 * min_bu,
        gamma_bar_sq_est: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic_with(f: impl FnOnce(&mut ProblemFile)) -> ProblemSpec {
        let mut file = builtin("cubic").unwrap();
        f(&mut file);
        ProblemSpec::from_file(file).unwrap()
    }

    #[test]
    fn builtins_pass() {
        for name in BUILTINS {
            let spec = ProblemSpec::builtin(name).unwrap();
            let report = check_assumptions(&spec, DEFAULT_CHECK_GRID);
            assert!(report.all_passed(), "{name}: {:?}", report.checks);
        }
    }

    #[test]
    fn cubic_gamma_estimate() {
        let spec = ProblemSpec::builtin("cubic").unwrap();
        let report = check_assumptions(&spec, DEFAULT_CHECK_GRID);
        assert!((report.gamma_sq_est - 0.99 * 0.25).abs() < 1e-14);
    }

    #[test]
    fn flipped_unstable_root_passes_local_checks() {
        let spec = cubic_with(|f| {
            f.phi0 = "0.25+0.5*x".into();
            f.b = "u*(u-(0.25+0.5*x))*(u-1)".into();
        });
        let report = check_assumptions(&spec, DEFAULT_CHECK_GRID);
        assert!(report.all_passed(), "{:?}", report.checks);
    }

    #[test]
    fn wrong_boundary_value_fails_a6() {
        let spec = cubic_with(|f| f.g1 = 0.0);
        let report = check_assumptions(&spec, DEFAULT_CHECK_GRID);
        let a6 = report.check("A6").unwrap();
        assert!(!a6.passed);
        assert_eq!(a6.worst_x, Some(1.0));
        assert!(report.check("A1").unwrap().passed);
    }

    #[test]
    fn wrong_root_fails_a1() {
        let spec = cubic_with(|f| f.phi0 = "0.7-0.5*x".into());
        let report = check_assumptions(&spec, 64);
        assert!(!report.check("A1").unwrap().passed);
    }

    #[test]
    fn load_errors() {
        let mut file = builtin("cubic").unwrap();
        file.phi0 = "u".into();
        assert!(matches!(ProblemSpec::from_file(file), Err(ProblemError::RootDependsOnU { field: "phi0" })));

        let dir = std::env::temp_dir().join(format!("layerforge-problem-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cubic.json");
        std::fs::write(&path, serde_json::to_string(&builtin("cubic").unwrap()).unwrap()).unwrap();
        let spec = load_problem(&path).unwrap();
        assert_eq!(spec.name, "cubic");
        std::fs::write(&path, "{\"name\": \"cubic\", \"b\": ").unwrap();
        assert!(matches!(load_problem(&path), Err(ProblemError::Json(_))));
        std::fs::write(&path, "{\"name\": \"cubic\"}").unwrap();
        assert!(matches!(load_problem(&path), Err(ProblemError::Json(_))));
        std::fs::remove_dir_all(&dir).ok();

        let mut file = builtin("cubic").unwrap();
        file.epsilon = 0.0;
        assert!(matches!(ProblemSpec::from_file(file), Err(ProblemError::InvalidEpsilon(_))));
    }

    #[test]
    fn u2_vanishes_for_constant_roots() {
        let spec = ProblemSpec::builtin("cubic").unwrap();
        for k in 1..3 {
            assert_eq!(ev(&spec.roots[k].u2, 0.3, 0.0), 0.0);
        }
        let wavy = ProblemSpec::builtin("cubic-wavy").unwrap();
        let x: f64 = 0.37;
        let pi: f64 = PI_TEXT.parse().unwrap();
        let phi2 = -0.1 * pi * pi * (pi * x).sin();
        let bu = 0.25 + 0.5 * x;
        assert!((ev(&wavy.roots[1].u2, x, 0.0) - phi2 / (0.75 - 0.5 * x)).abs() < 1e-12);
        assert!((ev(&wavy.roots[2].u2, x, 0.0) - phi2 / bu).abs() < 1e-12);
    }

    /// `|∂^m B(x,s)/∂x^m| ≤ C|s|` for m = 0, 1, 2 with `B(x,s) = b(x, u₀(x)+s)`;
    /// C is fitted on half of the samples and validated on the rest.
    #[test]
    fn layer_reaction_vanishes_linearly_in_s() {
        for name in BUILTINS {
            let spec = ProblemSpec::builtin(name).unwrap();
            let r = &spec.reaction;
            let t0 = 0.5;
            let mut state = 0x2545_f491_4f6c_dd1du64;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let mut ratios = Vec::new();
            for _ in 0..100 {
                let mut x = next();
                if (x - t0).abs() < 1e-3 {
                    x += 0.01;
                }
                let s = 2.0 * next() - 1.0;
                let k = if x < t0 { 1 } else { 2 };
                let u = spec.phi(k, x) + s;
                let d1 = spec.phi_d1(k, x);
                let d2 = spec.phi_d2(k, x);
                let b0 = ev(&r.b, x, u);
                let b1 = ev(&r.bx, x, u) + d1 * ev(&r.bu, x, u);
                let b2 = ev(&r.bxx, x, u)
                    + 2.0 * d1 * ev(&r.bxu, x, u)
                    + d1 * d1 * ev(&r.buu, x, u)
                    + d2 * ev(&r.bu, x, u);
                let m = b0.abs().max(b1.abs()).max(b2.abs());
                ratios.push(m / s.abs());
            }
            let fit = ratios[..50].iter().cloned().fold(0.0, f64::max);
            let validate = ratios[50..].iter().cloned().fold(0.0, f64::max);
            assert!(validate <= 2.0 * fit, "{name}: {validate} vs {fit}");
        }
    }
}
