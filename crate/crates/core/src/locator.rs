//! Layer point `t₀` and the matching constants.

use serde::Serialize;
use thiserror::Error;

use crate::problem::ProblemSpec;
use crate::quad::integrate;

/// Endpoint exclusion for the sign-change search.
pub const ENDPOINT_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LocateError {
    #[error("the balance integral does not change sign on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("layer at t0 = {t0} has the wrong orientation (C_I = {c_i} < 0)")]
    WrongOrientation { t0: f64, c_i: f64 },
    #[error("layer point t0 = {t0} is not a simple root (|C_I| = {c_i:e})")]
    DegenerateRoot { t0: f64, c_i: f64 },
}

/// Layer point and every matching constant. `c_ii`, `c_iii`, `t1`, `t2`
/// are zero until the corrections fill them in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LayerLocation {
    pub t0: f64,
    pub c_i: f64,
    pub c_ii: f64,
    pub c_iii: f64,
    pub t1: f64,
    pub t2: f64,
    pub gamma_bar: f64,
    /// `χ̂(0) = sqrt(2 W(φ₀(t₀)))`.
    pub chi0: f64,
}

impl LayerLocation {
    /// `t̄₁ = t₁ + ε t₂`.
    pub fn t1_bar(&self, epsilon: f64) -> f64 {
        self.t1 + epsilon * self.t2
    }
}

/// `∫_{φ₁(x)}^{φ₂(x)} b(x, v) dv`.
pub fn integral_i(spec: &ProblemSpec, x: f64) -> f64 {
    let (lo, hi) = (spec.phi(1, x), spec.phi(2, x));
    integrate(|v| spec.b(x, v), lo, hi, 1e-13, 1e-14)
}

/// `∫_{φ₁(x)}^{φ₂(x)} b_x(x, v) dv`, the derivative of [`integral_i`] (the
/// endpoint terms vanish because the roots are roots).
pub fn integral_i_derivative(spec: &ProblemSpec, x: f64) -> f64 {
    let (lo, hi) = (spec.phi(1, x), spec.phi(2, x));
    integrate(|v| spec.bx(x, v), lo, hi, 1e-13, 1e-14)
}

/// First sign-change bracket of `integral_i` on `[δ, 1−δ]`.
fn bracket(spec: &ProblemSpec) -> Result<(f64, f64, f64, f64), LocateError> {
    let (lo, hi) = (ENDPOINT_GAP, 1.0 - ENDPOINT_GAP);
    let samples = 256;
    let mut xa = lo;
    let mut fa = integral_i(spec, xa);
    for i in 1..=samples {
        let xb = lo + (hi - lo) * i as f64 / samples as f64;
        let fb = integral_i(spec, xb);
        if fa == 0.0 {
            return Ok((xa, xa, 0.0, 0.0));
        }
        if fa.signum() != fb.signum() {
            return Ok((xa, xb, fa, fb));
        }
        xa = xb;
        fa = fb;
    }
    Err(LocateError::NoSignChange { lo, hi })
}

/// Plain bisection for the layer point, to interval width `1e-15`.
pub fn bisect_t0(spec: &ProblemSpec) -> Result<f64, LocateError> {
    let (mut a, mut b, mut fa, _) = bracket(spec)?;
    while b - a > 1e-15 {
        let m = 0.5 * (a + b);
        let fm = integral_i(spec, m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Locate `t₀` by bracketing bisection refined with safeguarded Newton, then
/// compute `C_I`, `γ̄` and `χ̂(0)`.
pub fn locate_t0(spec: &ProblemSpec) -> Result<LayerLocation, LocateError> {
    let (mut a, mut b, mut fa, _) = bracket(spec)?;
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = integral_i(spec, x);
        if fx.abs() <= 1e-14 || b - a <= 1e-15 {
            break;
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let d = integral_i_derivative(spec, x);
        let newton = x - fx / d;
        x = if d != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    let t0 = x;
    let c_i = -integral_i_derivative(spec, t0);
    if c_i.abs() < 1e-10 {
        return Err(LocateError::DegenerateRoot { t0, c_i: c_i.abs() });
    }
    if c_i < 0.0 {
        return Err(LocateError::WrongOrientation { t0, c_i });
    }
    let gamma_bar_sq = spec.bu(t0, spec.phi(1, t0)).min(spec.bu(t0, spec.phi(2, t0)));
    let w_mid = integrate(|v| spec.b(t0, v), spec.phi(1, t0), spec.phi(0, t0), 1e-15, 1e-14);
    Ok(LayerLocation {
        t0,
        c_i,
        c_ii: 0.0,
        c_iii: 0.0,
        t1: 0.0,
        t2: 0.0,
        gamma_bar: gamma_bar_sq.sqrt(),
        chi0: (2.0 * w_mid).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin, ProblemSpec, BUILTINS};

    fn cubic_phi0(phi0: &str) -> ProblemSpec {
        let mut f = builtin("cubic").unwrap();
        f.b = format!("u*(u-({phi0}))*(u-1)");
        f.phi0 = phi0.into();
        ProblemSpec::from_file(f).unwrap()
    }

    #[test]
    fn balance_integral_examples() {
        let spec = ProblemSpec::builtin("cubic").unwrap();
        assert!((integral_i(&spec, 0.0) - 0.5 / 12.0).abs() < 1e-14);
        assert!(integral_i(&spec, 0.5).abs() < 1e-12);
        let mut f = builtin("cubic").unwrap();
        f.phi2 = "0".into();
        let flat = ProblemSpec::from_file(f).unwrap();
        assert_eq!(integral_i(&flat, 0.3), 0.0);
    }

    #[test]
    fn cubic_location() {
        let spec = ProblemSpec::builtin("cubic").unwrap();
        let loc = locate_t0(&spec).unwrap();
        assert!((loc.t0 - 0.5).abs() < 1e-12);
        assert!((loc.c_i - 1.0 / 12.0).abs() < 1e-12);
        assert!((loc.gamma_bar - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((loc.chi0 - 1.0 / (4.0 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn flipped_root_is_wrong_orientation() {
        let spec = cubic_phi0("0.25+0.5*x");
        match locate_t0(&spec) {
            Err(LocateError::WrongOrientation { t0, c_i }) => {
                assert!((t0 - 0.5).abs() < 1e-10);
                assert!((c_i + 1.0 / 12.0).abs() < 1e-10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shifted_root_moves_layer() {
        let spec = cubic_phi0("0.9-0.5*x");
        let loc = locate_t0(&spec).unwrap();
        assert!((loc.t0 - 0.8).abs() < 1e-10);
        assert!((loc.c_i - 1.0 / 12.0).abs() < 1e-10);
    }

    #[test]
    fn no_sign_change() {
        let spec = cubic_phi0("0.2");
        assert!(matches!(locate_t0(&spec), Err(LocateError::NoSignChange { .. })));
    }

    #[test]
    fn newton_agrees_with_bisection_and_fd() {
        for name in BUILTINS {
            let spec = ProblemSpec::builtin(name).unwrap();
            let loc = locate_t0(&spec).unwrap();
            let t_bis = bisect_t0(&spec).unwrap();
            assert!((loc.t0 - t_bis).abs() < 1e-10, "{name}");
            assert!(integral_i(&spec, loc.t0).abs() <= 1e-12);
            let h = 1e-5;
            let fd = -(integral_i(&spec, loc.t0 + h) - integral_i(&spec, loc.t0 - h)) / (2.0 * h);
            assert!((fd - loc.c_i).abs() < 1e-6, "{name}: {fd} vs {}", loc.c_i);
        }
    }
}
