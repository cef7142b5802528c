//! The composite expansion `u_as(x; p)`, its perturbation `β(x; p, p′, ĥ)` and
//! the truncated representation `𝒰(x, ε)`, with analytic derivatives.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::corrections::{
    build_v1, build_v2, build_vstar, build_z, compute_matching, default_grid, CorrectionError,
    CorrectionTerm, LayerAuxiliary,
};
use crate::grid::GradedGrid;
use crate::kink::{build_kink, default_extent, KinkError, KinkProfile, Side};
use crate::locator::{locate_t0, LayerLocation, LocateError};
use crate::par;
use crate::problem::{ev, ProblemSpec};
use crate::quad::gl10_unit_mean;

/// Largest admissible `|p|`.
pub const P_MAX: f64 = 0.1;
/// Largest admissible `|p′|`.
pub const P_PRIME_MAX: f64 = 0.05;
/// Coupling `p′ = C′ ε p` used when `p′` is not given.
pub const C_PRIME: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpansionError {
    #[error("{name} = {value} is outside the admissible range ({limit})")]
    ParameterOutOfRange { name: &'static str, value: f64, limit: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error(transparent)]
    Locate(#[from] LocateError),
    #[error(transparent)]
    Kink(#[from] KinkError),
    #[error(transparent)]
    Correction(#[from] CorrectionError),
    #[error(transparent)]
    Parameter(#[from] ExpansionError),
}

fn check_range(name: &'static str, value: f64, ok: bool, limit: impl Into<String>) -> Result<(), ExpansionError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ExpansionError::ParameterOutOfRange { name, value, limit: limit.into() })
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), ExpansionError> {
    check_range("epsilon", epsilon, epsilon > 0.0 && epsilon < 1.0, "0 < epsilon < 1")
}

/// Value and first two `x`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    fn axpy(self, a: f64, other: Jet) -> Jet {
        Jet {
            value: self.value + a * other.value,
            d1: self.d1 + a * other.d1,
            d2: self.d2 + a * other.d2,
        }
    }
}

/// Everything about the layer that does not depend on `ε` or `p`: location,
/// kink and matching constants.
#[derive(Debug, Clone)]
pub struct LayerModel {
    pub spec: Arc<ProblemSpec>,
    pub loc: LayerLocation,
    pub kink: Arc<KinkProfile>,
    pub grid: GradedGrid,
}

impl LayerModel {
    pub fn build(spec: &ProblemSpec) -> Result<LayerModel, BuildError> {
        let loc = locate_t0(spec)?;
        let kink = Arc::new(build_kink(spec, &loc, default_extent(&loc))?);
        let loc = compute_matching(spec, &kink, &loc)?;
        let grid = default_grid(loc.gamma_bar);
        Ok(LayerModel { spec: Arc::new(spec.clone()), loc, kink, grid })
    }

    pub fn auxiliary(&self, epsilon: f64, p: f64) -> Arc<LayerAuxiliary> {
        Arc::new(LayerAuxiliary::new(&self.spec, self.kink.clone(), &self.loc, p, self.loc.t1_bar(epsilon)))
    }

    /// `u_as(·; p)` at the given `ε`.
    pub fn expansion(&self, epsilon: f64, p: f64) -> Result<Expansion, BuildError> {
        check_epsilon(epsilon)?;
        check_range("p", p, p.abs() <= P_MAX, format!("|p| <= {P_MAX}"))?;
        let aux = self.auxiliary(epsilon, p);
        let v1 = Arc::new(build_v1(&aux, &self.grid)?);
        let v2 = Arc::new(build_v2(&aux, &v1, &self.grid)?);
        Ok(Expansion {
            spec: self.spec.clone(),
            loc: self.loc,
            kink: self.kink.clone(),
            aux,
            v1,
            v2,
            epsilon,
            p,
        })
    }

    /// `β(·; p, p′, ĥ)`; `ĥ²` is passed directly.
    pub fn perturbed(&self, epsilon: f64, p: f64, p_prime: f64, h_hat_sq: f64) -> Result<PerturbedExpansion, BuildError> {
        let base = self.expansion(epsilon, p)?;
        PerturbedExpansion::new(base, p_prime, h_hat_sq)
    }
}

/// `u_as(x; p) = u₀ + ε²u₂ + v₀ + εv₁ + ε²v₂`.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub spec: Arc<ProblemSpec>,
    pub loc: LayerLocation,
    pub kink: Arc<KinkProfile>,
    pub aux: Arc<LayerAuxiliary>,
    pub v1: Arc<CorrectionTerm>,
    pub v2: Arc<CorrectionTerm>,
    pub epsilon: f64,
    pub p: f64,
}

/// `(ν, dν/dξ, d²ν/dξ²)` converted to `x`-derivatives.
pub fn layer_jet(term: &CorrectionTerm, side: Side, xi: f64, epsilon: f64) -> Jet {
    let (v, dv) = term.eval(side, xi);
    let d2 = term.second_derivative(side, xi, v);
    Jet { value: v, d1: dv / epsilon, d2: d2 / (epsilon * epsilon) }
}

impl Expansion {
    /// Branch used at `x`; `x = t₀` belongs to the left branch.
    pub fn side_at(&self, x: f64) -> Side {
        if x <= self.loc.t0 {
            Side::Lower
        } else {
            Side::Upper
        }
    }

    pub fn xi(&self, x: f64) -> f64 {
        (x - self.loc.t0) / self.epsilon
    }

    fn root_index(side: Side) -> usize {
        side as usize + 1
    }

    /// `u₀ + ε²u₂` on the given branch.
    pub fn smooth_jet(&self, side: Side, x: f64) -> Jet {
        let r = &self.spec.roots[Self::root_index(side)];
        let e2 = self.epsilon * self.epsilon;
        Jet {
            value: ev(&r.phi, x, 0.0) + e2 * ev(&r.u2, x, 0.0),
            d1: ev(&r.d1, x, 0.0) + e2 * ev(&r.u2_d1, x, 0.0),
            d2: ev(&r.d2, x, 0.0) + e2 * ev(&r.u2_d2, x, 0.0),
        }
    }

    /// `v₀(ξ; p)` as a function of `x`.
    pub fn v0_jet(&self, side: Side, xi: f64) -> Jet {
        let e = self.epsilon;
        Jet {
            value: self.aux.v0(side, xi),
            d1: self.aux.chi(xi) / e,
            d2: self.aux.chi_derivatives(xi)[0] / (e * e),
        }
    }

    /// `u_as` with derivatives on a chosen branch (used for one-sided values at `t₀`).
    pub fn eval_jet_side(&self, x: f64, side: Side) -> Jet {
        let xi = self.xi(x);
        let e = self.epsilon;
        self.smooth_jet(side, x)
            .axpy(1.0, self.v0_jet(side, xi))
            .axpy(e, layer_jet(&self.v1, side, xi, e))
            .axpy(e * e, layer_jet(&self.v2, side, xi, e))
    }

    pub fn eval_jet(&self, x: f64) -> Jet {
        self.eval_jet_side(x, self.side_at(x))
    }

    /// `u_as(x; p)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_jet(x).value
    }

    /// `Φ[u_as] = ε(u_as'(t₀⁻) − u_as'(t₀⁺))`, assembled termwise.
    pub fn phi_functional(&self) -> f64 {
        let t0 = self.loc.t0;
        let e = self.epsilon;
        let s = &self.spec;
        let smooth = e * (s.phi_d1(1, t0) - s.phi_d1(2, t0))
            + e.powi(3) * (ev(&s.roots[1].u2_d1, t0, 0.0) - ev(&s.roots[2].u2_d1, t0, 0.0));
        smooth + e * self.v1.phi + e * e * self.v2.phi
    }

    /// `Φ` from one-sided five-point differences of the assembled evaluator.
    pub fn phi_numerical(&self) -> f64 {
        phi_by_differences(self.loc.t0, self.epsilon, |x, side| self.eval_jet_side(x, side).value)
    }

    /// `𝒰(x, ε)`: `V₀((x − t₀)/ε; 0)` within `τ = (C_τ/γ̄) ε ln N` of `t₀`,
    /// `u₀(x)` outside.
    pub fn eval_u_truncated(&self, x: f64, n: usize, c_tau: f64) -> Result<f64, ExpansionError> {
        check_range("C_tau", c_tau, c_tau > 2.0, "C_tau > 2")?;
        check_range("N", n as f64, n >= 2, "N >= 2")?;
        let tau = transition_width(self.loc.gamma_bar, self.epsilon, n, c_tau);
        let t0 = self.loc.t0;
        Ok(if (x - t0).abs() <= tau {
            self.kink.value(self.xi(x) - self.loc.t1_bar(self.epsilon))
        } else {
            let k = Self::root_index(self.side_at(x));
            self.spec.phi(k, x)
        })
    }
}

/// `τ = (C_τ/γ̄) ε ln N`.
pub fn transition_width(gamma_bar: f64, epsilon: f64, n: usize, c_tau: f64) -> f64 {
    c_tau / gamma_bar * epsilon * (n as f64).ln()
}

/// `ε(u'(t₀⁻) − u'(t₀⁺))` with one-sided five-point differences of step `ε·10⁻³`.
pub fn phi_by_differences(t0: f64, epsilon: f64, f: impl Fn(f64, Side) -> f64) -> f64 {
    let h = 1e-3 * epsilon;
    // Coefficients of f'(0) from f(0), f(h), ..., f(4h).
    let c = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
    let right: f64 = (0..5).map(|k| c[k] * f(t0 + k as f64 * h, Side::Upper)).sum::<f64>() / h;
    let left: f64 = -(0..5).map(|k| c[k] * f(t0 - k as f64 * h, Side::Lower)).sum::<f64>() / h;
    epsilon * (left - right)
}

/// `β = u_as + p′(v* + C₀) + ĥ² z`.
#[derive(Debug, Clone)]
pub struct PerturbedExpansion {
    pub base: Expansion,
    pub p_prime: f64,
    pub h_hat_sq: f64,
    pub vstar: Arc<CorrectionTerm>,
    pub z: Arc<CorrectionTerm>,
    pub c5: f64,
    pub c0: f64,
}

impl PerturbedExpansion {
    pub fn new(base: Expansion, p_prime: f64, h_hat_sq: f64) -> Result<PerturbedExpansion, BuildError> {
        check_range("p'", p_prime, p_prime.abs() <= P_PRIME_MAX, format!("|p'| <= {P_PRIME_MAX}"))?;
        let e = base.epsilon;
        check_range("h_hat^2", h_hat_sq, (0.0..=e).contains(&h_hat_sq), "0 <= h_hat^2 <= epsilon")?;
        let grid = default_grid(base.loc.gamma_bar);
        let (vstar, z) = par::join(|| build_vstar(&base.aux, &grid), || build_z(&base.aux, &grid));
        let (c5, c0) = estimate_c0(&base, DEFAULT_SAMPLES);
        Ok(PerturbedExpansion {
            vstar: Arc::new(vstar?),
            z: Arc::new(z?),
            base,
            p_prime,
            h_hat_sq,
            c5,
            c0,
        })
    }

    pub fn eval_jet_side(&self, x: f64, side: Side) -> Jet {
        let b = &self.base;
        let xi = b.xi(x);
        let e = b.epsilon;
        let mut vs = layer_jet(&self.vstar, side, xi, e);
        vs.value += self.c0;
        b.eval_jet_side(x, side)
            .axpy(self.p_prime, vs)
            .axpy(self.h_hat_sq, layer_jet(&self.z, side, xi, e))
    }

    pub fn eval_jet(&self, x: f64) -> Jet {
        self.eval_jet_side(x, self.base.side_at(x))
    }

    /// `β(x; p, p′, ĥ)`.
    pub fn eval_beta(&self, x: f64) -> f64 {
        self.eval_jet(x).value
    }

    /// `Φ[β] = Φ[u_as] + p′Φ[v*] + ĥ²Φ[z]`.
    pub fn phi_functional(&self) -> f64 {
        self.base.phi_functional() + self.p_prime * self.vstar.phi + self.h_hat_sq * self.z.phi
    }

    pub fn phi_numerical(&self) -> f64 {
        phi_by_differences(self.base.loc.t0, self.base.epsilon, |x, side| self.eval_jet_side(x, side).value)
    }
}

pub const DEFAULT_SAMPLES: usize = 2000;

/// Sample points in `(0, 1) \ {t₀}`: half uniform, half clustered around
/// `t₀` on a geometric `ξ` scale from `10⁻³` to `60`.
pub fn sample_points(t0: f64, epsilon: f64, n: usize) -> Vec<f64> {
    let n_uniform = n / 2;
    let n_side = (n - n_uniform) / 2;
    let mut xs: Vec<f64> = (0..n_uniform).map(|i| (i as f64 + 0.5) / n_uniform as f64).collect();
    let (lo, hi) = (1e-3f64.ln(), 60f64.ln());
    for i in 0..n_side {
        let xi = (lo + (hi - lo) * i as f64 / (n_side.max(2) - 1) as f64).exp();
        for sign in [-1.0, 1.0] {
            let x = t0 + sign * epsilon * xi;
            if x > 0.0 && x < 1.0 {
                xs.push(x);
            }
        }
    }
    xs.retain(|&x| x != t0);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// `sup |B_s(x, 0) − B_s(x, v)| / |v|` over `(x, k, v)` samples, with
/// `B_s(x, s) = b_u(x, φ_k(x) + s)`. The quotient is evaluated as the mean of
/// `b_uu` along the segment, which tends to `b_uu(x, φ_k(x))` as `v → 0`.
pub fn lambda_sup(spec: &ProblemSpec, samples: impl IntoIterator<Item = (f64, usize, f64)>) -> f64 {
    let buu = &spec.reaction.buu;
    samples
        .into_iter()
        .map(|(x, k, v)| {
            let u0 = spec.phi(k, x);
            let v = if v.abs() < 1e-8 { 0.0 } else { v };
            gl10_unit_mean(|t| ev(buu, x, u0 + t * v)).abs()
        })
        .fold(0.0, f64::max)
}

/// `(C₅, C₀)`: `C₅` is the inflated bound of `λ(x)` (5%, floor `10⁻⁸`) and
/// `C₀ = 1/C₅` (capped at `10⁸`).
pub fn estimate_c0(e: &Expansion, n_samples: usize) -> (f64, f64) {
    let samples = sample_points(e.loc.t0, e.epsilon, n_samples).into_iter().map(|x| {
        let side = e.side_at(x);
        (x, side as usize + 1, e.aux.v0(side, e.xi(x)))
    });
    c0_from_sup(lambda_sup(&e.spec, samples))
}

fn c0_from_sup(sup: f64) -> (f64, f64) {
    let c5 = (1.05 * sup).max(1e-8);
    (c5, (1.0 / c5).min(1e8))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin, BUILTINS};

    fn model(name: &str) -> LayerModel {
        LayerModel::build(&ProblemSpec::builtin(name).unwrap()).unwrap()
    }

    #[test]
    fn continuity_and_center_value() {
        for name in BUILTINS {
            let m = model(name);
            let e = m.expansion(0.01, 0.0).unwrap();
            let t0 = m.loc.t0;
            let l = e.eval_jet_side(t0, Side::Lower).value;
            let r = e.eval_jet_side(t0, Side::Upper).value;
            assert!((l - r).abs() <= 1e-10, "{name}: {l} vs {r}");
            let center = m.kink.value(-m.loc.t1_bar(0.01));
            assert!((l - center).abs() <= 1e-10);
        }
    }

    #[test]
    fn boundary_values_and_p_shift() {
        let m = model("cubic");
        let e0 = m.expansion(0.01, 0.0).unwrap();
        assert!((e0.eval(0.0) - 0.0).abs() <= 1e-6);
        assert!((e0.eval(1.0) - 1.0).abs() <= 1e-6);
        let p = 1e-4;
        let ep = m.expansion(0.01, p).unwrap();
        let diff = ep.eval(0.5) - e0.eval(0.5);
        let expected = m.loc.chi0 * p;
        assert!(((diff - expected) / expected).abs() <= 1e-2);
        assert!(m.expansion(0.01, 0.2).is_err());
        assert!(m.expansion(0.0, 0.0).is_err());
    }

    #[test]
    fn phi_assembly_matches_differences() {
        for name in BUILTINS {
            let m = model(name);
            for &(eps, p) in &[(0.01, 0.0), (0.01, 0.01), (0.05, -0.02)] {
                let e = m.expansion(eps, p).unwrap();
                let a = e.phi_functional();
                let n = e.phi_numerical();
                assert!((a - n).abs() <= 1e-8, "{name} eps={eps} p={p}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn beta_identities() {
        let m = model("cubic");
        let eps = 0.01;
        let pe = m.perturbed(eps, 0.01, 0.0, 0.0).unwrap();
        for &x in &[0.1, 0.49, 0.5, 0.52, 0.9] {
            assert_eq!(pe.eval_beta(x), pe.base.eval(x));
        }
        let pe = m.perturbed(eps, 0.01, 0.02, eps).unwrap();
        for &x in &[0.1, 0.47, 0.5, 0.53, 0.9] {
            let side = pe.base.side_at(x);
            let xi = pe.base.xi(x);
            let expected = pe.base.eval(x)
                + pe.p_prime * (pe.vstar.eval(side, xi).0 + pe.c0)
                + pe.h_hat_sq * pe.z.eval(side, xi).0;
            assert!((pe.eval_beta(x) - expected).abs() < 1e-15);
        }
        let far = pe.eval_beta(0.05) - pe.base.eval(0.05);
        assert!((far - pe.p_prime * pe.c0).abs() < 1e-12);
        let d = pe.phi_functional() - pe.base.phi_functional();
        assert!((d - pe.p_prime * pe.vstar.phi).abs() < 1e-10);
        assert!((pe.phi_functional() - pe.phi_numerical()).abs() < 1e-8);
        assert!(m.perturbed(eps, 0.01, 0.06, 0.0).is_err());
        assert!(m.perturbed(eps, 0.01, 0.0, 2.0 * eps).is_err());
    }

    #[test]
    fn c0_bounds_and_stability() {
        let m = model("cubic");
        let e2 = m.expansion(1e-2, 0.0).unwrap();
        let e3 = m.expansion(1e-3, 0.0).unwrap();
        let (c5a, c0a) = estimate_c0(&e2, DEFAULT_SAMPLES);
        let (c5b, _) = estimate_c0(&e3, DEFAULT_SAMPLES);
        // |b_uu| = |6u − 2(1 + m)| is at most 3.5 on the sampled strip.
        assert!(c5a <= 1.05 * 3.5 + 1e-12, "C5 = {c5a}");
        assert!(c0a >= 1.0 / (1.05 * 3.5) - 1e-12);
        assert!(((c5a - c5b) / c5a).abs() <= 1e-2);
    }

    #[test]
    fn c0_guard_for_linear_reaction() {
        let mut f = builtin("cubic").unwrap();
        f.b = "u-0.5*x".into();
        f.phi0 = "0.5*x".into();
        f.phi1 = "0.5*x".into();
        f.phi2 = "0.5*x".into();
        let spec = ProblemSpec::from_file(f).unwrap();
        let sup = lambda_sup(&spec, (0..10).map(|i| (i as f64 / 10.0, 1, 0.3)));
        assert_eq!(sup, 0.0);
        assert_eq!(c0_from_sup(sup), (1e-8, 1e8));
    }

    #[test]
    fn truncated_representation() {
        let m = model("cubic");
        let e = m.expansion(1e-3, 0.0).unwrap();
        assert_eq!(e.eval_u_truncated(m.loc.t0, 64, 2.5).unwrap(), m.kink.value(-m.loc.t1_bar(1e-3)));
        assert_eq!(e.eval_u_truncated(0.0, 64, 2.5).unwrap(), 0.0);
        assert!(e.eval_u_truncated(0.3, 64, 2.0).is_err());
        assert!((transition_width(0.5f64.sqrt(), 1e-2, 64, 2.5) - 0.1470).abs() < 1e-4);
    }

    #[test]
    fn sample_points_exclude_t0() {
        let xs = sample_points(0.5, 1e-3, 2000);
        assert!(xs.len() >= 1990);
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0 && x != 0.5));
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
    }
}
