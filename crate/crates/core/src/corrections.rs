//! Layer corrections `v₁`, `v₂`, `v*`, `z`: solutions of
//! `[−d²/dξ² + B_s(t̂₀, v₀)] ν = ψ` on each half-line with prescribed values
//! `ν(0±)` and decay at infinity, plus the matching constants.
//!
//! On each half-line, with `s = |ξ|`, the solution is
//! `ν = χ(ξ) [∫₀^s χ⁻² G + ν(0±)/χ(0)]` where `G(s) = ∫_s^∞ χψ`.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{quintic_hermite, GradedGrid};
use crate::kink::{KinkProfile, Side};
use crate::locator::LayerLocation;
use crate::par;
use crate::problem::{ev, ProblemSpec, Reaction};
use crate::quad::{gl10_unit_mean, gl4_partial_matrix, GL4_NODES, GL4_WEIGHTS};

/// Half-width of the correction tables in units of `1/γ̄`.
pub const EXTENT_FACTOR: f64 = 60.0;
pub const TABLE_INTERVALS: usize = 3000;
pub const FIRST_SPACING: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrectionError {
    #[error("source grows faster than |xi|^6 chi on the {side:?} half-line (far/near ratio {ratio:e})")]
    NonDecayingSource { side: Side, ratio: f64 },
    #[error("C_I = {c_i:e} is too small to fix the layer position")]
    DegenerateRoot { c_i: f64 },
}

/// Data of one jump problem. `ξ` is the layer variable; the half-line is given
/// explicitly because sources may differ on the two sides of `ξ = 0`.
pub trait JumpProblem: Send + Sync {
    /// `χ(ξ)`, the positive homogeneous solution.
    fn chi(&self, xi: f64) -> f64;
    fn chi_prime(&self, xi: f64) -> f64;
    /// `B_s(t̂₀, v₀(ξ))`.
    fn potential(&self, side: Side, xi: f64) -> f64;
    /// `ψ(ξ)`.
    fn source(&self, side: Side, xi: f64) -> f64;
    /// Exponential decay rate of `χ` on the half-line.
    fn tail_rate(&self, side: Side) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    V1,
    V2,
    Vstar,
    Z,
    Other,
}

impl TermKind {
    pub fn label(self) -> &'static str {
        match self {
            TermKind::V1 => "v1",
            TermKind::V2 => "v2",
            TermKind::Vstar => "vstar",
            TermKind::Z => "z",
            TermKind::Other => "other",
        }
    }
}

#[derive(Debug, Clone)]
struct Branch {
    value: Vec<f64>,
    /// `dν/dξ` at the nodes.
    d1: Vec<f64>,
    /// `ν''` from the governing equation.
    d2: Vec<f64>,
    /// `∫` of `χψ` over the half-line.
    source_integral: f64,
    tail_rate: f64,
}

/// A two-branch layer function with its jump data and `Φ` contribution.
#[derive(Clone)]
pub struct CorrectionTerm {
    pub kind: TermKind,
    pub grid: GradedGrid,
    /// `ν(0⁻)`, `ν(0⁺)`.
    pub jump: [f64; 2],
    /// `χ(0)` of the problem the term was built from.
    pub chi0: f64,
    /// `χ'(0)`.
    pub chi0_prime: f64,
    /// `−∫ψχ + [ν(0⁻) − ν(0⁺)] χ'(0)`.
    pub phi_numerator: f64,
    /// `Φ[ν] = ν'(0⁻) − ν'(0⁺)` by the quadrature formula.
    pub phi: f64,
    /// `Φ[ν]` from one-sided five-point differences of the tables.
    pub phi_one_sided: f64,
    pub p: f64,
    pub t1_bar: f64,
    branches: [Branch; 2],
    problem: Arc<dyn JumpProblem>,
}

impl std::fmt::Debug for CorrectionTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorrectionTerm")
            .field("kind", &self.kind)
            .field("jump", &self.jump)
            .field("phi", &self.phi)
            .field("phi_numerator", &self.phi_numerator)
            .field("p", &self.p)
            .field("t1_bar", &self.t1_bar)
            .finish_non_exhaustive()
    }
}

/// One row of a tabulated branch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TermNode {
    pub xi: f64,
    pub value: f64,
    pub derivative: f64,
}

impl CorrectionTerm {
    pub fn extent(&self) -> f64 {
        self.grid.extent()
    }

    /// `(ν, dν/dξ)` at `ξ` on the given half-line.
    pub fn eval(&self, side: Side, xi: f64) -> (f64, f64) {
        let b = &self.branches[side as usize];
        let sg = side.sign();
        let s = xi.abs();
        let ext = self.grid.extent();
        if s >= ext {
            let n = b.value.len() - 1;
            let v = b.value[n] * (-b.tail_rate * (s - ext)).exp();
            return (v, -sg * b.tail_rate * v);
        }
        let j = self.grid.locate(s);
        let (v, dv) = quintic_hermite(
            self.grid.nodes[j],
            self.grid.nodes[j + 1],
            [b.value[j], sg * b.d1[j], b.d2[j]],
            [b.value[j + 1], sg * b.d1[j + 1], b.d2[j + 1]],
            s,
        );
        (v, sg * dv)
    }

    /// `ν(ξ)` with the half-line taken from the sign of `ξ` (`ξ = 0` is the
    /// upper branch).
    pub fn value(&self, xi: f64) -> f64 {
        self.eval(Side::of(xi), xi).0
    }

    /// `ν''(ξ) = B_s ν − ψ`.
    pub fn second_derivative(&self, side: Side, xi: f64, value: f64) -> f64 {
        self.problem.potential(side, xi) * value - self.problem.source(side, xi)
    }

    pub fn source(&self, side: Side, xi: f64) -> f64 {
        self.problem.source(side, xi)
    }

    pub fn problem(&self) -> &Arc<dyn JumpProblem> {
        &self.problem
    }

    /// Table nodes of one half-line, ordered by increasing `|ξ|`.
    pub fn nodes(&self, side: Side) -> Vec<TermNode> {
        let b = &self.branches[side as usize];
        self.grid
            .nodes
            .iter()
            .enumerate()
            .map(|(j, &s)| TermNode { xi: side.sign() * s, value: b.value[j], derivative: b.d1[j] })
            .collect()
    }

    /// `∫ χψ` over both half-lines.
    pub fn source_integral(&self) -> f64 {
        self.branches[0].source_integral + self.branches[1].source_integral
    }
}

/// Weights of the derivative at `x[0]` of the Lagrange interpolant through `x`.
fn one_sided_weights(x: &[f64; 5]) -> [f64; 5] {
    let mut w = [0.0; 5];
    for (j, wj) in w.iter_mut().enumerate() {
        // d/dt of L_j at t = x[0].
        let denom: f64 = (0..5).filter(|&m| m != j).map(|m| x[j] - x[m]).product();
        let mut num = 0.0;
        for k in (0..5).filter(|&k| k != j) {
            num += (0..5)
                .filter(|&m| m != j && m != k)
                .map(|m| x[0] - x[m])
                .product::<f64>();
        }
        *wj = num / denom;
    }
    w
}

fn solve_branch(
    problem: &dyn JumpProblem,
    side: Side,
    grid: &GradedGrid,
    nu0: f64,
    chi0: f64,
) -> Result<Branch, CorrectionError> {
    let sg = side.sign();
    let s = &grid.nodes;
    let n = s.len() - 1;
    let m = gl4_partial_matrix();

    // Node samples: χ, χ', B_s, ψ.
    let node_samples: Vec<[f64; 4]> = par::map_range(n + 1, |j| {
        let xi = sg * s[j];
        [
            problem.chi(xi),
            problem.chi_prime(xi),
            problem.potential(side, xi),
            problem.source(side, xi),
        ]
    });
    // Interval samples at the Gauss points: χ and χψ.
    let gauss: Vec<([f64; 4], [f64; 4])> = par::map_range(n, |j| {
        let (a, b) = (s[j], s[j + 1]);
        let mut chi = [0.0; 4];
        let mut f = [0.0; 4];
        for q in 0..4 {
            let xi = sg * (0.5 * (a + b) + 0.5 * (b - a) * GL4_NODES[q]);
            chi[q] = problem.chi(xi);
            f[q] = chi[q] * problem.source(side, xi);
        }
        (chi, f)
    });

    // |ψ|/χ must not outgrow a sixth-degree polynomial.
    let ratio = |j: usize| {
        let [chi, _, _, psi] = node_samples[j];
        if psi == 0.0 {
            0.0
        } else {
            psi.abs() / (chi * (1.0 + s[j].powi(6)))
        }
    };
    let half = n / 2;
    let inner = (0..=half).map(ratio).fold(0.0, f64::max);
    let far = (half..=n).map(ratio).fold(0.0, f64::max);
    if far > 0.0 && (inner == 0.0 || far > 1e3 * inner || !far.is_finite()) {
        return Err(CorrectionError::NonDecayingSource {
            side,
            ratio: if inner == 0.0 { f64::INFINITY } else { far / inner },
        });
    }

    // G(s) = ∫_s^∞ χψ, accumulated backward from the tail estimate.
    let rate = problem.tail_rate(side);
    let f_end = node_samples[n][0] * node_samples[n][3];
    let mut g = vec![0.0; n + 1];
    g[n] = f_end / (2.0 * rate);
    for j in (0..n).rev() {
        let h = s[j + 1] - s[j];
        let int: f64 = (0..4).map(|q| GL4_WEIGHTS[q] * gauss[j].1[q]).sum::<f64>() * 0.5 * h;
        g[j] = g[j + 1] + int;
    }

    // H(s) = ∫₀^s χ⁻² G, accumulated forward.
    let mut hh = vec![0.0; n + 1];
    for j in 0..n {
        let h = s[j + 1] - s[j];
        let (chi, f) = &gauss[j];
        let mut acc = 0.0;
        for q in 0..4 {
            let partial: f64 = (0..4).map(|r| m[q][r] * f[r]).sum::<f64>() * 0.5 * h;
            let gq = g[j] - partial;
            acc += GL4_WEIGHTS[q] * gq / (chi[q] * chi[q]);
        }
        hh[j + 1] = hh[j] + 0.5 * h * acc;
    }

    let c = nu0 / chi0;
    let mut value = Vec::with_capacity(n + 1);
    let mut d1 = Vec::with_capacity(n + 1);
    let mut d2 = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let [chi, chip, bs, psi] = node_samples[j];
        let v = if j == 0 { nu0 } else { chi * (hh[j] + c) };
        value.push(v);
        d1.push(chip * (hh[j] + c) + sg * g[j] / chi);
        d2.push(bs * v - psi);
    }
    let tail_rate = {
        let v = value[n];
        let r = if v != 0.0 { -sg * d1[n] / v } else { rate };
        if r.is_finite() && r > 0.0 {
            r
        } else {
            rate
        }
    };
    Ok(Branch { value, d1, d2, source_integral: g[0], tail_rate })
}

/// Solve the jump problem on `grid` (nodes in `|ξ|`, shared by both half-lines).
pub fn solve_jump(
    kind: TermKind,
    problem: Arc<dyn JumpProblem>,
    nu_minus: f64,
    nu_plus: f64,
    grid: &GradedGrid,
) -> Result<CorrectionTerm, CorrectionError> {
    let chi0 = problem.chi(0.0);
    let chi0_prime = problem.chi_prime(0.0);
    let (lower, upper) = par::join(
        || solve_branch(problem.as_ref(), Side::Lower, grid, nu_minus, chi0),
        || solve_branch(problem.as_ref(), Side::Upper, grid, nu_plus, chi0),
    );
    let (lower, upper) = (lower?, upper?);
    let numerator =
        -(lower.source_integral + upper.source_integral) + (nu_minus - nu_plus) * chi0_prime;
    let s5: [f64; 5] = grid.nodes[..5].try_into().expect("grid has at least five nodes");
    let w = one_sided_weights(&s5);
    let ds = |b: &Branch| -> f64 { (0..5).map(|j| w[j] * b.value[j]).sum() };
    // dν/dξ(0⁻) = −dν/ds on the lower branch.
    let phi_one_sided = -ds(&lower) - ds(&upper);
    Ok(CorrectionTerm {
        kind,
        grid: grid.clone(),
        jump: [nu_minus, nu_plus],
        chi0,
        chi0_prime,
        phi_numerator: numerator,
        phi: numerator / chi0,
        phi_one_sided,
        p: f64::NAN,
        t1_bar: f64::NAN,
        branches: [lower, upper],
        problem,
    })
}

/// `Φ[ν]` by the quadrature formula: `(−∫ψχ + [ν(0⁻) − ν(0⁺)] χ'(0)) / χ(0)`.
pub fn phi_of(term: &CorrectionTerm) -> f64 {
    term.phi
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BranchConstants {
    /// `u₀(t̂₀) = φ_k(t₀)` and its first two derivatives.
    pub u0: f64,
    pub u0_d1: f64,
    pub u0_d2: f64,
    /// `u₂(t̂₀)`.
    pub u2: f64,
}

/// `v₀(ξ; p)` and the layer reaction `B(x, s) = b(x, u₀(x) + s)` with its
/// partials at `x = t̂₀`, evaluated along the shifted kink.
#[derive(Debug)]
pub struct LayerAuxiliary {
    pub kink: Arc<KinkProfile>,
    pub t0: f64,
    pub p: f64,
    pub t1_bar: f64,
    /// `p − t̄₁`: `V₀(ξ; p) = V̂₀(ξ + shift)`.
    pub shift: f64,
    pub branches: [BranchConstants; 2],
    reaction: Reaction,
}

impl LayerAuxiliary {
    pub fn new(spec: &ProblemSpec, kink: Arc<KinkProfile>, loc: &LayerLocation, p: f64, t1_bar: f64) -> LayerAuxiliary {
        let t0 = loc.t0;
        let branch = |k: usize| BranchConstants {
            u0: spec.phi(k, t0),
            u0_d1: spec.phi_d1(k, t0),
            u0_d2: spec.phi_d2(k, t0),
            u2: ev(&spec.roots[k].u2, t0, 0.0),
        };
        LayerAuxiliary {
            kink,
            t0,
            p,
            t1_bar,
            shift: p - t1_bar,
            branches: [branch(1), branch(2)],
            reaction: spec.reaction.clone(),
        }
    }

    fn at(&self, e: &crate::expr::Expr, u: f64) -> f64 {
        ev(e, self.t0, u)
    }

    /// `v₀(ξ; p) = V₀(ξ; p) − u₀(t̂₀)`.
    pub fn v0(&self, side: Side, xi: f64) -> f64 {
        self.kink.deviation_from(xi + self.shift, side)
    }

    /// `V₀(ξ; p)`.
    pub fn big_v0(&self, xi: f64) -> f64 {
        self.kink.value(xi + self.shift)
    }

    pub fn chi(&self, xi: f64) -> f64 {
        self.kink.chi(xi + self.shift)
    }

    /// `[χ', χ'', χ''']` at `(ξ; p)`.
    pub fn chi_derivatives(&self, xi: f64) -> [f64; 3] {
        self.kink.chi_derivatives(xi + self.shift)
    }

    /// `B_s(t̂₀, v₀) = b_u(t₀, V₀)`.
    pub fn bs(&self, xi: f64) -> f64 {
        self.at(&self.reaction.bu, self.big_v0(xi))
    }

    /// `B_ss(t̂₀, v₀) = b_uu(t₀, V₀)`.
    pub fn bss(&self, xi: f64) -> f64 {
        self.at(&self.reaction.buu, self.big_v0(xi))
    }

    fn bxs_at(&self, c: &BranchConstants, s: f64) -> f64 {
        let u = c.u0 + s;
        self.at(&self.reaction.bxu, u) + c.u0_d1 * self.at(&self.reaction.buu, u)
    }

    fn bxxs_at(&self, c: &BranchConstants, s: f64) -> f64 {
        let u = c.u0 + s;
        let r = &self.reaction;
        self.at(&r.bxxu, u)
            + 2.0 * c.u0_d1 * self.at(&r.bxuu, u)
            + c.u0_d1 * c.u0_d1 * self.at(&r.buuu, u)
            + c.u0_d2 * self.at(&r.buu, u)
    }

    /// `B_xs(t̂₀, v₀)`.
    pub fn bxs(&self, side: Side, xi: f64) -> f64 {
        let c = &self.branches[side as usize];
        self.bxs_at(c, self.v0(side, xi))
    }

    /// `B_x(t̂₀, v₀) = v₀ · mean B_xs(θ v₀)`, using `B_x(x, 0) = 0`.
    pub fn bx(&self, side: Side, xi: f64) -> f64 {
        let c = &self.branches[side as usize];
        let v = self.v0(side, xi);
        v * gl10_unit_mean(|t| self.bxs_at(c, t * v))
    }

    /// `B_xx(t̂₀, v₀) = v₀ · mean B_xxs(θ v₀)`, using `B_xx(x, 0) = 0`.
    pub fn bxx(&self, side: Side, xi: f64) -> f64 {
        let c = &self.branches[side as usize];
        let v = self.v0(side, xi);
        v * gl10_unit_mean(|t| self.bxxs_at(c, t * v))
    }

    /// `B_s(t̂₀, v₀) − B_s(t̂₀, 0) = v₀ · mean B_ss(θ v₀)`.
    pub fn bs_increment(&self, side: Side, xi: f64) -> f64 {
        let c = &self.branches[side as usize];
        let v = self.v0(side, xi);
        v * gl10_unit_mean(|t| self.at(&self.reaction.buu, c.u0 + t * v))
    }
}

/// Source terms of the four corrections.
#[derive(Clone)]
enum SourceKind {
    V1,
    V2 { v1: Arc<CorrectionTerm> },
    Vstar,
    Z,
}

struct LayerSource {
    aux: Arc<LayerAuxiliary>,
    kind: SourceKind,
}

impl JumpProblem for LayerSource {
    fn chi(&self, xi: f64) -> f64 {
        self.aux.chi(xi)
    }

    fn chi_prime(&self, xi: f64) -> f64 {
        self.aux.chi_derivatives(xi)[0]
    }

    fn potential(&self, _side: Side, xi: f64) -> f64 {
        self.aux.bs(xi)
    }

    fn source(&self, side: Side, xi: f64) -> f64 {
        let a = &self.aux;
        match &self.kind {
            SourceKind::V1 => -xi * a.bx(side, xi),
            SourceKind::V2 { v1 } => {
                let w = v1.eval(side, xi).0;
                let u2 = a.branches[side as usize].u2;
                let mut psi = -0.5 * xi * xi * a.bxx(side, xi) - xi * w * a.bxs(side, xi) - 0.5 * w * w * a.bss(xi);
                if u2 != 0.0 {
                    psi -= u2 * a.bs_increment(side, xi);
                }
                psi
            }
            SourceKind::Vstar => a.v0(side, xi).abs(),
            SourceKind::Z => a.chi_derivatives(xi)[2] / 12.0,
        }
    }

    fn tail_rate(&self, side: Side) -> f64 {
        self.aux.kink.rates[side as usize]
    }
}

/// Default correction grid for a layer with decay rate `γ̄`.
pub fn default_grid(gamma_bar: f64) -> GradedGrid {
    GradedGrid::new(EXTENT_FACTOR / gamma_bar, TABLE_INTERVALS, FIRST_SPACING)
}

fn build(
    aux: &Arc<LayerAuxiliary>,
    kind: TermKind,
    source: SourceKind,
    jumps: [f64; 2],
    grid: &GradedGrid,
) -> Result<CorrectionTerm, CorrectionError> {
    let problem: Arc<dyn JumpProblem> = Arc::new(LayerSource { aux: aux.clone(), kind: source });
    let mut term = solve_jump(kind, problem, jumps[0], jumps[1], grid)?;
    term.p = aux.p;
    term.t1_bar = aux.t1_bar;
    Ok(term)
}

/// `v₁`: source `−ξ B_x(t̂₀, v₀)`, zero jump data.
pub fn build_v1(aux: &Arc<LayerAuxiliary>, grid: &GradedGrid) -> Result<CorrectionTerm, CorrectionError> {
    build(aux, TermKind::V1, SourceKind::V1, [0.0, 0.0], grid)
}

/// `v₂`: second-order source, `v₂(0±) = −u₂(t₀±)`.
pub fn build_v2(
    aux: &Arc<LayerAuxiliary>,
    v1: &Arc<CorrectionTerm>,
    grid: &GradedGrid,
) -> Result<CorrectionTerm, CorrectionError> {
    let jumps = [-aux.branches[0].u2, -aux.branches[1].u2];
    build(aux, TermKind::V2, SourceKind::V2 { v1: v1.clone() }, jumps, grid)
}

/// `v*`: source `|v₀|`, zero jump data.
pub fn build_vstar(aux: &Arc<LayerAuxiliary>, grid: &GradedGrid) -> Result<CorrectionTerm, CorrectionError> {
    build(aux, TermKind::Vstar, SourceKind::Vstar, [0.0, 0.0], grid)
}

/// `z`: source `χ'''/12 = V₀''''/12`, zero jump data.
pub fn build_z(aux: &Arc<LayerAuxiliary>, grid: &GradedGrid) -> Result<CorrectionTerm, CorrectionError> {
    build(aux, TermKind::Z, SourceKind::Z, [0.0, 0.0], grid)
}

/// `C_II = ∫ η b_x(t₀, V̂₀(η)) χ̂(η) dη` by four-point Gauss rules on the kink
/// table plus the analytic exponential tails.
pub fn c_ii_quadrature(spec: &ProblemSpec, kink: &KinkProfile) -> f64 {
    let t0 = kink.t0;
    let s = &kink.grid.nodes;
    let per_interval = par::map_range(s.len() - 1, |j| {
        let (a, b) = (s[j], s[j + 1]);
        let mut acc = 0.0;
        for q in 0..4 {
            let sq = 0.5 * (a + b) + 0.5 * (b - a) * GL4_NODES[q];
            for eta in [-sq, sq] {
                acc += GL4_WEIGHTS[q] * eta * spec.bx(t0, kink.value(eta)) * kink.chi(eta);
            }
        }
        0.5 * (b - a) * acc
    });
    let mut total: f64 = per_interval.iter().sum();
    let ext = kink.extent;
    for (k, sign) in [(0usize, -1.0), (1usize, 1.0)] {
        let mu = kink.rates[k];
        let a = kink.amplitudes[k];
        let bx_lim = spec.bx(t0, kink.limits[k]);
        total += sign * bx_lim * a * (-mu * ext).exp() * (ext + 1.0 / mu);
    }
    total
}

/// Fill `C_II`, `t₁`, `C_III`, `t₂` into the location. `C_III` is the
/// `Φ`-numerator of the `v₂` problem at `p = 0`, `t̄₁ = t₁`.
pub fn compute_matching(
    spec: &ProblemSpec,
    kink: &Arc<KinkProfile>,
    loc: &LayerLocation,
) -> Result<LayerLocation, CorrectionError> {
    if loc.c_i <= 1e-10 {
        return Err(CorrectionError::DegenerateRoot { c_i: loc.c_i });
    }
    let mut out = *loc;
    out.c_ii = c_ii_quadrature(spec, kink);
    out.t1 = out.c_ii / out.c_i;
    let aux = Arc::new(LayerAuxiliary::new(spec, kink.clone(), &out, 0.0, out.t1));
    let grid = default_grid(loc.gamma_bar);
    let v1 = Arc::new(build_v1(&aux, &grid)?);
    let v2 = build_v2(&aux, &v1, &grid)?;
    out.c_iii = v2.phi_numerator;
    out.t2 = out.c_iii / out.c_i;
    Ok(out)
}

/// The four corrections built for one `(p, t̄₁)`.
#[derive(Debug, Clone)]
pub struct CorrectionSet {
    pub v1: Arc<CorrectionTerm>,
    pub v2: Arc<CorrectionTerm>,
    pub vstar: Arc<CorrectionTerm>,
    pub z: Arc<CorrectionTerm>,
}

/// Build `v₁` first, then `v₂`, `v*` and `z` concurrently.
pub fn build_all(aux: &Arc<LayerAuxiliary>, grid: &GradedGrid) -> Result<CorrectionSet, CorrectionError> {
    let v1 = Arc::new(build_v1(aux, grid)?);
    let (v2, (vstar, z)) = par::join(
        || build_v2(aux, &v1, grid),
        || par::join(|| build_vstar(aux, grid), || build_z(aux, grid)),
    );
    Ok(CorrectionSet {
        v1,
        v2: Arc::new(v2?),
        vstar: Arc::new(vstar?),
        z: Arc::new(z?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kink::{build_kink, default_extent};
    use crate::locator::locate_t0;
    use crate::problem::BUILTINS;

    struct Setup {
        spec: ProblemSpec,
        loc: LayerLocation,
        kink: Arc<KinkProfile>,
    }

    fn setup(name: &str) -> Setup {
        let spec = ProblemSpec::builtin(name).unwrap();
        let loc = locate_t0(&spec).unwrap();
        let kink = Arc::new(build_kink(&spec, &loc, default_extent(&loc)).unwrap());
        let loc = compute_matching(&spec, &kink, &loc).unwrap();
        Setup { spec, loc, kink }
    }

    /// Homogeneous problem on the cubic kink.
    struct Homogeneous(Arc<KinkProfile>);

    impl JumpProblem for Homogeneous {
        fn chi(&self, xi: f64) -> f64 {
            self.0.chi(xi)
        }
        fn chi_prime(&self, xi: f64) -> f64 {
            self.0.chi_derivatives(xi)[0]
        }
        fn potential(&self, _: Side, xi: f64) -> f64 {
            self.0.bu_along(xi)
        }
        fn source(&self, _: Side, _: f64) -> f64 {
            0.0
        }
        fn tail_rate(&self, side: Side) -> f64 {
            self.0.rates[side as usize]
        }
    }

    /// A source that grows like e^{s}/χ.
    struct Exploding(Arc<KinkProfile>);

    impl JumpProblem for Exploding {
        fn chi(&self, xi: f64) -> f64 {
            self.0.chi(xi)
        }
        fn chi_prime(&self, xi: f64) -> f64 {
            self.0.chi_derivatives(xi)[0]
        }
        fn potential(&self, _: Side, xi: f64) -> f64 {
            self.0.bu_along(xi)
        }
        fn source(&self, _: Side, xi: f64) -> f64 {
            xi.abs().exp()
        }
        fn tail_rate(&self, side: Side) -> f64 {
            self.0.rates[side as usize]
        }
    }

    #[test]
    fn homogeneous_examples() {
        let s = setup("cubic");
        let grid = default_grid(s.loc.gamma_bar);
        let p: Arc<dyn JumpProblem> = Arc::new(Homogeneous(s.kink.clone()));
        let zero = solve_jump(TermKind::Other, p.clone(), 0.0, 0.0, &grid).unwrap();
        assert_eq!(zero.phi, 0.0);
        assert!(zero.nodes(Side::Lower).iter().all(|n| n.value == 0.0));

        let one = solve_jump(TermKind::Other, p.clone(), 1.0, 0.0, &grid).unwrap();
        let chi0 = s.kink.chi(0.0);
        for &xi in &[-0.3, -2.0, -11.0] {
            let v = one.eval(Side::Lower, xi).0;
            assert!((v - s.kink.chi(xi) / chi0).abs() < 1e-12);
        }
        assert_eq!(one.eval(Side::Upper, 1.0).0, 0.0);
        assert!((one.phi - s.kink.chi_derivatives(0.0)[0] / chi0).abs() < 1e-14);

        let c = solve_jump(TermKind::Other, p, 0.3, 0.3, &grid).unwrap();
        assert!(c.phi.abs() < 1e-15);
    }

    #[test]
    fn exploding_source_is_rejected() {
        let s = setup("cubic");
        let grid = default_grid(s.loc.gamma_bar);
        let p: Arc<dyn JumpProblem> = Arc::new(Exploding(s.kink.clone()));
        assert!(matches!(
            solve_jump(TermKind::Other, p, 0.0, 0.0, &grid),
            Err(CorrectionError::NonDecayingSource { .. })
        ));
    }

    #[test]
    fn cubic_matching_is_symmetric() {
        let s = setup("cubic");
        assert!(s.loc.t1.abs() <= 1e-8, "t1 = {}", s.loc.t1);
        assert!(s.loc.c_ii.abs() <= 1e-9);
    }

    #[test]
    fn terms_satisfy_their_equation_and_jumps() {
        for name in BUILTINS {
            let s = setup(name);
            let aux = Arc::new(LayerAuxiliary::new(&s.spec, s.kink.clone(), &s.loc, 0.0, s.loc.t1_bar(0.01)));
            let grid = default_grid(s.loc.gamma_bar);
            let set = build_all(&aux, &grid).unwrap();
            for term in [&set.v1, &set.v2, &set.vstar, &set.z] {
                for side in [Side::Lower, Side::Upper] {
                    let nodes = term.nodes(side);
                    assert_eq!(nodes[0].value, term.jump[side as usize]);
                    for w in nodes.windows(3).take(2500) {
                        let (h0, h1) = ((w[1].xi - w[0].xi).abs(), (w[2].xi - w[1].xi).abs());
                        let d2 = 2.0 * (h0 * w[2].value - (h0 + h1) * w[1].value + h1 * w[0].value)
                            / (h0 * h1 * (h0 + h1));
                        let psi = term.source(side, w[1].xi);
                        let eq = term.second_derivative(side, w[1].xi, w[1].value);
                        // Second differences carry O(h) error on graded nodes.
                        let h = h0.max(h1);
                        let tol = 1e-6 * (1.0 + psi.abs()) + 10.0 * h * h * (1.0 + eq.abs());
                        assert!((d2 - eq).abs() <= tol, "{name} {:?} at {}: {} vs {}", term.kind, w[1].xi, d2, eq);
                    }
                }
                assert!(
                    (term.phi - term.phi_one_sided).abs() <= 1e-6,
                    "{name} {:?}: {} vs {}",
                    term.kind,
                    term.phi,
                    term.phi_one_sided
                );
            }
            // v* is non-negative.
            for side in [Side::Lower, Side::Upper] {
                assert!(set.vstar.nodes(side).iter().all(|n| n.value >= 0.0));
            }
            assert!(set.z.phi.abs() <= 1e-8, "{name}: Phi[z] = {}", set.z.phi);
            // Continuity of u2 + v2 at t0.
            for side in [Side::Lower, Side::Upper] {
                let jump = set.v2.eval(side, 0.0).0 + aux.branches[side as usize].u2;
                assert!(jump.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn vstar_phi_is_half_sum_of_squares() {
        let s = setup("cubic");
        let aux = Arc::new(LayerAuxiliary::new(&s.spec, s.kink.clone(), &s.loc, 0.0, 0.0));
        let grid = default_grid(s.loc.gamma_bar);
        let vstar = build_vstar(&aux, &grid).unwrap();
        let (a, b) = (aux.v0(Side::Lower, 0.0), aux.v0(Side::Upper, 0.0));
        let expected = -0.5 * (a * a + b * b) / vstar.chi0;
        assert!((vstar.phi - expected).abs() < 1e-9, "{} vs {expected}", vstar.phi);
        assert!((vstar.phi + 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn v1_phi_matches_direct_quadrature() {
        for name in BUILTINS {
            let s = setup(name);
            let eps = 0.01;
            let p = 0.02;
            let aux = Arc::new(LayerAuxiliary::new(&s.spec, s.kink.clone(), &s.loc, p, s.loc.t1_bar(eps)));
            let grid = default_grid(s.loc.gamma_bar);
            let v1 = build_v1(&aux, &grid).unwrap();
            // Composite Simpson over ξ ∈ [−80, 80].
            let n = 64000;
            let h = 160.0 / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let xi = -80.0 + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * xi * s.spec.bx(s.loc.t0, aux.big_v0(xi)) * aux.chi(xi);
            }
            let integral = acc * h / 3.0;
            let d1 = s.spec.phi_d1(1, s.loc.t0) - s.spec.phi_d1(2, s.loc.t0);
            let expected = integral / v1.chi0 - d1;
            assert!((v1.phi - expected).abs() < 1e-6, "{name}: {} vs {expected}", v1.phi);
        }
    }

    #[test]
    fn p_derivative_of_v0_is_chi() {
        let s = setup("cubic-wavy");
        let h = 1e-5;
        let mk = |p: f64| LayerAuxiliary::new(&s.spec, s.kink.clone(), &s.loc, p, 0.0);
        let (plus, minus, mid) = (mk(h), mk(-h), mk(0.0));
        for &xi in &[-3.0, -0.4, 0.2, 2.5] {
            let side = Side::of(xi);
            let fd = (plus.v0(side, xi) - minus.v0(side, xi)) / (2.0 * h);
            assert!((fd - mid.chi(xi)).abs() < 1e-6);
        }
    }

    #[test]
    fn sign_preservation() {
        let s = setup("cubic-wavy");
        let aux = Arc::new(LayerAuxiliary::new(&s.spec, s.kink.clone(), &s.loc, 0.03, 0.0));
        let grid = default_grid(s.loc.gamma_bar);
        let problem: Arc<dyn JumpProblem> = Arc::new(LayerSource { aux, kind: SourceKind::Vstar });
        let term = solve_jump(TermKind::Other, problem, 0.2, 0.1, &grid).unwrap();
        for side in [Side::Lower, Side::Upper] {
            assert!(term.nodes(side).iter().all(|n| n.value >= 0.0));
        }
    }
}
