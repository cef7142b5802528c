//! Zero-order layer profile `V̂₀` and its derivative `χ̂`, built from the first
//! integral `(V')² = 2 W(V)` of `-V'' + b(t₀, V) = 0`.
//!
//! Each half-line is tabulated in `s = |ξ|` as the deviation of `V̂₀` from the
//! limit it approaches, so values stay relatively accurate deep in the tails.

use serde::Serialize;
use thiserror::Error;

use crate::expr::Expr;
use crate::grid::{quintic_hermite, GradedGrid};
use crate::locator::LayerLocation;
use crate::problem::{ev, ProblemSpec};
use crate::quad::{gl10_unit_mean, integrate};

/// Default half-width of the table in units of `1/γ̄`.
pub const EXTENT_FACTOR: f64 = 20.0;
/// Intervals per half-line.
pub const TABLE_INTERVALS: usize = 2000;
/// Spacing of the first interval next to `ξ = 0`.
pub const FIRST_SPACING: f64 = 1e-3;
/// Distance to the limit below which the linearised tail takes over.
pub const TAIL_SWITCH: f64 = 1e-8;
const RK_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinkError {
    #[error("potential W is not positive at v = {v} (W = {w:e})")]
    PotentialNegative { v: f64, w: f64 },
    #[error("anchor {anchor} lies outside ({lo}, {hi})")]
    AnchorOutOfRange { anchor: f64, lo: f64, hi: f64 },
    #[error("table extent {extent} is shorter than the minimum {minimum}")]
    ExtentTooShort { extent: f64, minimum: f64 },
}

/// Lower half-line (`ξ < 0`, limit `φ₁(t₀)`) or upper half-line (`ξ ≥ 0`, limit `φ₂(t₀)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Lower = 0,
    Upper = 1,
}

impl Side {
    pub fn of(xi: f64) -> Side {
        if xi < 0.0 {
            Side::Lower
        } else {
            Side::Upper
        }
    }

    /// `dξ/ds`.
    pub fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct SideTable {
    dev: Vec<f64>,
    chi: Vec<f64>,
    chi1: Vec<f64>,
    chi2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KinkProfile {
    pub t0: f64,
    /// `φ₁(t₀)`, `φ₂(t₀)`.
    pub limits: [f64; 2],
    /// `V̂₀(0) = φ₀(t₀)`.
    pub anchor: f64,
    /// Tail rates `μ₋ = sqrt(b_u(t₀, φ₁(t₀)))`, `μ₊ = sqrt(b_u(t₀, φ₂(t₀)))`.
    pub rates: [f64; 2],
    /// Tail amplitudes: `V̂₀ ≈ φ₁ + A₋ e^{μ₋ ξ}` and `V̂₀ ≈ φ₂ − A₊ e^{−μ₊ ξ}`.
    pub amplitudes: [f64; 2],
    /// `s` at which each side switched to the linearised tail.
    pub switch_points: [f64; 2],
    pub extent: f64,
    pub grid: GradedGrid,
    tables: [SideTable; 2],
    bu: Expr,
    buu: Expr,
}

/// Row of the tabulated profile.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KinkNode {
    pub xi: f64,
    pub v0: f64,
    pub chi: f64,
}

impl KinkProfile {
    fn bu_at(&self, v: f64) -> f64 {
        ev(&self.bu, self.t0, v)
    }

    /// `b(t₀, φ + d)` computed as `d · mean b_u` so that it stays relatively
    /// accurate for tiny `d`.
    fn b_rel(&self, side: Side, dev: f64) -> f64 {
        let lim = self.limits[side as usize];
        dev * gl10_unit_mean(|t| self.bu_at(lim + t * dev))
    }

    /// Potential `W` at `φ_side + dev`, measured from the side's limit.
    fn potential_dev(&self, side: Side, dev: f64) -> f64 {
        potential_rel(&self.bu, self.t0, self.limits[side as usize], dev)
    }

    /// `W(v)`, measured from `φ₁(t₀)` below the anchor and from `φ₂(t₀)` above it.
    pub fn potential(&self, v: f64) -> f64 {
        let side = if v < self.anchor { Side::Lower } else { Side::Upper };
        self.potential_dev(side, v - self.limits[side as usize])
    }

    /// Deviation of `V̂₀(η)` from the limit of the half-line containing `η`.
    pub fn deviation(&self, eta: f64) -> (Side, f64) {
        let side = Side::of(eta);
        let k = side as usize;
        let s = eta.abs();
        if s >= self.extent {
            let a = self.amplitudes[k] * (-self.rates[k] * s).exp();
            return (side, -side.sign() * a);
        }
        let t = &self.tables[k];
        let j = self.grid.locate(s);
        let sg = side.sign();
        let (d, _) = quintic_hermite(
            self.grid.nodes[j],
            self.grid.nodes[j + 1],
            [t.dev[j], sg * t.chi[j], t.chi1[j]],
            [t.dev[j + 1], sg * t.chi[j + 1], t.chi1[j + 1]],
            s,
        );
        (side, d)
    }

    /// `V̂₀(η)`.
    pub fn value(&self, eta: f64) -> f64 {
        let (side, d) = self.deviation(eta);
        self.limits[side as usize] + d
    }

    /// `V̂₀(η) − φ_k(t₀)` for `k` = [`Side::Lower`] (φ₁) or [`Side::Upper`] (φ₂).
    pub fn deviation_from(&self, eta: f64, k: Side) -> f64 {
        let (side, d) = self.deviation(eta);
        if side == k {
            d
        } else {
            self.limits[side as usize] - self.limits[k as usize] + d
        }
    }

    /// `χ̂(η) = V̂₀'(η)`.
    pub fn chi(&self, eta: f64) -> f64 {
        let side = Side::of(eta);
        let k = side as usize;
        let s = eta.abs();
        if s >= self.extent {
            return self.rates[k] * self.amplitudes[k] * (-self.rates[k] * s).exp();
        }
        let t = &self.tables[k];
        let j = self.grid.locate(s);
        let sg = side.sign();
        let (c, _) = quintic_hermite(
            self.grid.nodes[j],
            self.grid.nodes[j + 1],
            [t.chi[j], sg * t.chi1[j], t.chi2[j]],
            [t.chi[j + 1], sg * t.chi1[j + 1], t.chi2[j + 1]],
            s,
        );
        c
    }

    /// `[χ', χ'', χ''']` at `η`, from `χ' = b`, `χ'' = b_u χ`,
    /// `χ''' = b_uu χ² + b_u b`, all at `(t₀, V̂₀(η))`.
    pub fn chi_derivatives(&self, eta: f64) -> [f64; 3] {
        let (side, d) = self.deviation(eta);
        let v = self.limits[side as usize] + d;
        let chi = self.chi(eta);
        let b = self.b_rel(side, d);
        let bu = self.bu_at(v);
        let buu = ev(&self.buu, self.t0, v);
        [b, bu * chi, buu * chi * chi + bu * b]
    }

    /// `b_u(t₀, V̂₀(η))`.
    pub fn bu_along(&self, eta: f64) -> f64 {
        self.bu_at(self.value(eta))
    }

    /// Tabulated nodes in increasing `ξ`.
    pub fn nodes(&self) -> Vec<KinkNode> {
        let n = self.grid.nodes.len();
        let mut out = Vec::with_capacity(2 * n - 1);
        let lo = &self.tables[0];
        for j in (1..n).rev() {
            out.push(KinkNode {
                xi: -self.grid.nodes[j],
                v0: self.limits[0] + lo.dev[j],
                chi: lo.chi[j],
            });
        }
        let hi = &self.tables[1];
        for j in 0..n {
            out.push(KinkNode {
                xi: self.grid.nodes[j],
                v0: self.limits[1] + hi.dev[j],
                chi: hi.chi[j],
            });
        }
        out
    }
}

/// `W(φ + d) = d² ∫₀¹ (1−t) b_u(t₀, φ + t d) dt`, valid because `b(t₀, φ) = 0`.
fn potential_rel(bu: &Expr, t0: f64, lim: f64, dev: f64) -> f64 {
    if dev == 0.0 {
        return 0.0;
    }
    let w = integrate(|t| (1.0 - t) * ev(bu, t0, lim + t * dev), 0.0, 1.0, 1e-16, 1e-14);
    dev * dev * w
}

/// `V₀(ξ; p) = V̂₀(ξ − t̄₁ + p)`.
pub fn eval_v0(kink: &KinkProfile, loc: &LayerLocation, epsilon: f64, xi: f64, p: f64) -> f64 {
    kink.value(xi - loc.t1_bar(epsilon) + p)
}

/// `χ(ξ; p)`, see [`eval_v0`].
pub fn eval_chi(kink: &KinkProfile, loc: &LayerLocation, epsilon: f64, xi: f64, p: f64) -> f64 {
    kink.chi(xi - loc.t1_bar(epsilon) + p)
}

/// `d^order χ/dξ^order` at `(ξ; p)` for order 1..=3.
pub fn chi_derivative(
    kink: &KinkProfile,
    loc: &LayerLocation,
    epsilon: f64,
    xi: f64,
    p: f64,
    order: usize,
) -> f64 {
    assert!((1..=3).contains(&order), "order must be 1, 2 or 3");
    kink.chi_derivatives(xi - loc.t1_bar(epsilon) + p)[order - 1]
}

pub fn default_extent(loc: &LayerLocation) -> f64 {
    EXTENT_FACTOR / loc.gamma_bar
}

const DP_A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// One Dormand–Prince 5(4) step of the autonomous scalar ODE `y' = f(y)`.
fn dopri_step(f: &impl Fn(f64) -> f64, y: f64, h: f64) -> (f64, f64) {
    let mut k = [0.0; 7];
    k[0] = f(y);
    for i in 0..6 {
        let incr: f64 = (0..=i).map(|j| DP_A[i][j] * k[j]).sum();
        k[i + 1] = f(y + h * incr);
    }
    // Row 6 of the tableau is the fifth-order solution; k[6] is FSAL.
    let y5 = y + h * (0..6).map(|j| DP_A[5][j] * k[j]).sum::<f64>();
    let err = h * (0..7).map(|j| DP_E[j] * k[j]).sum::<f64>();
    (y5, err.abs())
}

/// Integrate `y' = f(y)` over a length `len`, controlling the local error
/// relative to `min(1, |y|)`.
fn integrate_interval(f: &impl Fn(f64) -> f64, mut y: f64, len: f64, h_guess: &mut f64) -> f64 {
    let mut done = 0.0;
    let mut h = h_guess.min(len);
    while done < len {
        if done + h > len {
            h = len - done;
        }
        let (y_new, err) = dopri_step(f, y, h);
        let tol = (RK_TOL * y.abs().min(1.0)).max(1e-300);
        if err <= tol || h < 1e-12 * len {
            y = y_new;
            done += h;
            let grow = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            *h_guess = h * grow;
            h *= grow;
        } else {
            h *= (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9);
        }
    }
    y
}

/// Build the profile on a table covering `[−extent, extent]`.
pub fn build_kink(spec: &ProblemSpec, loc: &LayerLocation, extent: f64) -> Result<KinkProfile, KinkError> {
    let minimum = default_extent(loc);
    if extent < minimum * (1.0 - 1e-12) {
        return Err(KinkError::ExtentTooShort { extent, minimum });
    }
    let t0 = loc.t0;
    let limits = [spec.phi(1, t0), spec.phi(2, t0)];
    let anchor = spec.phi(0, t0);
    if !(anchor > limits[0] && anchor < limits[1]) {
        return Err(KinkError::AnchorOutOfRange { anchor, lo: limits[0], hi: limits[1] });
    }
    let bu = spec.reaction.bu.clone();
    let rates = [
        ev(&bu, t0, limits[0]).sqrt(),
        ev(&bu, t0, limits[1]).sqrt(),
    ];

    // Positivity of W on the open interval, integrating directly from φ₁(t₀).
    for i in 1..200 {
        let v = limits[0] + (limits[1] - limits[0]) * i as f64 / 200.0;
        let w = integrate(|u| spec.b(t0, u), limits[0], v, 1e-15, 1e-13);
        if !(w > 0.0) {
            return Err(KinkError::PotentialNegative { v, w });
        }
    }

    let grid = GradedGrid::new(extent, TABLE_INTERVALS, FIRST_SPACING);
    let mut profile = KinkProfile {
        t0,
        limits,
        anchor,
        rates,
        amplitudes: [0.0; 2],
        switch_points: [extent; 2],
        extent,
        grid,
        tables: [
            SideTable { dev: vec![], chi: vec![], chi1: vec![], chi2: vec![] },
            SideTable { dev: vec![], chi: vec![], chi1: vec![], chi2: vec![] },
        ],
        bu,
        buu: spec.reaction.buu.clone(),
    };

    for side in [Side::Lower, Side::Upper] {
        let k = side as usize;
        let lim = limits[k];
        let sg = side.sign();
        // dev = V − lim, moving away from the anchor: d(dev)/ds = sg·sqrt(2W).
        let rhs = |d: f64| {
            if d * sg >= 0.0 {
                0.0
            } else {
                let w = potential_rel(&profile.bu, t0, lim, d);
                sg * (2.0 * w.max(0.0)).sqrt()
            }
        };
        let nodes = &profile.grid.nodes;
        let mut devs = Vec::with_capacity(nodes.len());
        let mut d = anchor - lim;
        devs.push(d);
        let mut h = FIRST_SPACING;
        let mut switched: Option<(f64, f64)> = None;
        for j in 0..nodes.len() - 1 {
            let s_next = nodes[j + 1];
            if let Some((a, mu)) = switched {
                devs.push(-sg * a * (-mu * s_next).exp());
                continue;
            }
            d = integrate_interval(&rhs, d, s_next - nodes[j], &mut h);
            devs.push(d);
            if d.abs() < TAIL_SWITCH {
                let mu = rates[k];
                switched = Some((d.abs() * (mu * s_next).exp(), mu));
                profile.switch_points[k] = s_next;
            }
        }
        let amplitude = match switched {
            Some((a, _)) => a,
            None => d.abs() * (rates[k] * extent).exp(),
        };
        profile.amplitudes[k] = amplitude;
        let chi: Vec<f64> = devs.iter().map(|&d| (2.0 * profile.potential_dev(side, d)).sqrt()).collect();
        let chi1: Vec<f64> = devs.iter().map(|&d| profile.b_rel(side, d)).collect();
        let chi2: Vec<f64> = devs
            .iter()
            .zip(&chi)
            .map(|(&d, &c)| profile.bu_at(lim + d) * c)
            .collect();
        profile.tables[k] = SideTable { dev: devs, chi, chi1, chi2 };
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locator::{integral_i, locate_t0};
    use crate::problem::BUILTINS;

    fn cubic() -> (ProblemSpec, LayerLocation, KinkProfile) {
        let spec = ProblemSpec::builtin("cubic").unwrap();
        let loc = locate_t0(&spec).unwrap();
        let kink = build_kink(&spec, &loc, default_extent(&loc)).unwrap();
        (spec, loc, kink)
    }

    fn logistic(xi: f64) -> f64 {
        1.0 / (1.0 + (-xi / 2f64.sqrt()).exp())
    }

    #[test]
    fn cubic_matches_logistic() {
        let (_, loc, kink) = cubic();
        let mut worst: f64 = 0.0;
        for i in 0..=4000 {
            let xi = -10.0 + 20.0 * i as f64 / 4000.0;
            worst = worst.max((kink.value(xi) - logistic(xi)).abs());
        }
        assert!(worst <= 1e-8, "max error {worst:e}");
        assert!((kink.chi(0.0) - 1.0 / (4.0 * 2f64.sqrt())).abs() < 1e-9);
        assert!((kink.chi(0.0) - loc.chi0).abs() < 1e-12);
        let xi = 2f64.sqrt() * 3f64.ln();
        assert!((eval_v0(&kink, &loc, 0.01, xi, 0.0) - 0.75).abs() < 1e-9);
        assert_eq!(eval_v0(&kink, &loc, 0.01, 0.0, 0.0), 0.5);
    }

    #[test]
    fn tails_keep_relative_accuracy() {
        let (_, _, kink) = cubic();
        for &xi in &[15.0f64, 25.0, 40.0, 60.0] {
            let exact = 1.0 / (1.0 + (xi / 2f64.sqrt()).exp());
            let rel = (kink.deviation_from(-xi, Side::Lower) - exact).abs() / exact;
            assert!(rel < 1e-6, "xi = -{xi}: {rel:e}");
            let rel = (-kink.deviation_from(xi, Side::Upper) - exact).abs() / exact;
            assert!(rel < 1e-6, "xi = {xi}: {rel:e}");
        }
    }

    #[test]
    fn chi_derivative_examples() {
        let (_, loc, kink) = cubic();
        let d = kink.chi_derivatives(0.0);
        assert!(d[0].abs() < 1e-15);
        assert!((d[1] + 0.25 / (4.0 * 2f64.sqrt())).abs() < 1e-10);
        assert!((chi_derivative(&kink, &loc, 0.01, 0.0, 0.0, 2) - d[1]).abs() < 1e-15);
        let far = kink.chi_derivatives(30.0);
        assert!((far[1] / kink.chi(30.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn shift_identity() {
        let (_, loc, kink) = cubic();
        for &(xi, p, delta) in &[(0.3, 0.01, 0.05), (-2.0, -0.05, 0.7)] {
            let a = eval_v0(&kink, &loc, 0.01, xi, p);
            let b = eval_v0(&kink, &loc, 0.01, xi + delta, p - delta);
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn table_invariants_on_builtins() {
        for name in BUILTINS {
            let spec = ProblemSpec::builtin(name).unwrap();
            let loc = locate_t0(&spec).unwrap();
            let kink = build_kink(&spec, &loc, default_extent(&loc)).unwrap();
            assert!(integral_i(&spec, loc.t0).abs() <= 1e-12);
            let nodes = kink.nodes();
            assert!(nodes.windows(2).all(|w| w[1].v0 > w[0].v0), "{name}");
            assert!(nodes.first().unwrap().v0 >= kink.limits[0]);
            assert!(nodes.last().unwrap().v0 <= kink.limits[1]);
            for n in &nodes {
                let w = kink.potential(n.v0);
                // Node χ is sqrt(2W) of the stored deviation; compare through V.
                assert!((n.chi - (2.0 * w).sqrt()).abs() <= 1e-10, "{name} at {}", n.xi);
            }
            // Profile ODE residual, second derivative by nonuniform differences.
            let mut worst: f64 = 0.0;
            for w in nodes.windows(3) {
                if w[1].xi.abs() > 10.0 {
                    continue;
                }
                let (h0, h1) = (w[1].xi - w[0].xi, w[2].xi - w[1].xi);
                let d2 = 2.0 * (h0 * w[2].v0 - (h0 + h1) * w[1].v0 + h1 * w[0].v0) / (h0 * h1 * (h0 + h1));
                let r = -d2 + spec.b(loc.t0, w[1].v0);
                worst = worst.max(r.abs());
            }
            assert!(worst <= 1e-6, "{name}: FD profile residual {worst:e}");
            for &xi in &[-5.0, -0.5, 0.0, 0.7, 4.0] {
                let v = kink.value(xi);
                let r = kink.chi_derivatives(xi)[0] - spec.b(loc.t0, v);
                assert!(r.abs() < 1e-13);
            }
            // Two-sided bounds of the deviation against χ.
            let ratios: Vec<f64> = nodes
                .iter()
                .filter(|n| n.xi < 0.0)
                .map(|n| (n.v0 - kink.limits[0]) / n.chi)
                .collect();
            let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().cloned().fold(0.0, f64::max);
            assert!(lo > 0.0 && hi.is_finite() && hi / lo < 100.0, "{name}: {lo} {hi}");
        }
    }

    #[test]
    fn anchor_and_potential_errors() {
        let spec = ProblemSpec::builtin("cubic").unwrap();
        let mut loc = locate_t0(&spec).unwrap();
        assert!(matches!(
            build_kink(&spec, &loc, 1.0),
            Err(KinkError::ExtentTooShort { .. })
        ));
        // Evaluating at a point where phi0 coincides with phi2.
        loc.t0 = -0.5;
        assert!(matches!(
            build_kink(&spec, &loc, default_extent(&loc)),
            Err(KinkError::AnchorOutOfRange { .. })
        ));

        // A middle root off the balance point makes W change sign.
        let mut f = crate::problem::builtin("cubic").unwrap();
        f.b = "u*(u-0.3)*(u-1)".into();
        f.phi0 = "0.3".into();
        let skew = ProblemSpec::from_file(f).unwrap();
        let loc = LayerLocation { t0: 0.5, c_i: 1.0, c_ii: 0.0, c_iii: 0.0, t1: 0.0, t2: 0.0, gamma_bar: 0.5f64.sqrt(), chi0: 0.1 };
        assert!(matches!(
            build_kink(&skew, &loc, default_extent(&loc)),
            Err(KinkError::PotentialNegative { .. })
        ));
    }
}
