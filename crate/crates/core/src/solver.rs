//! Independent finite-difference solver for `-ε² u'' + b(x, u) = 0` on a
//! layer-adapted mesh: central three-point differences, damped Newton and
//! tridiagonal solves.

use serde::Serialize;
use thiserror::Error;

use crate::expansion::{transition_width, Expansion};
use crate::grid::solve_tridiagonal;
use crate::locator::LayerLocation;
use crate::problem::ProblemSpec;

pub const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("Newton did not converge in {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian at row {row}")]
    SingularJacobian { row: usize },
    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshKind {
    Uniform,
    LayerAdapted,
}

#[derive(Debug, Clone, Serialize)]
pub struct Mesh {
    pub nodes: Vec<f64>,
    pub kind: MeshKind,
    /// Transition half-width; zero for uniform meshes.
    pub tau: f64,
    pub t0: f64,
    /// Number of cells.
    pub n: usize,
}

impl Mesh {
    pub fn uniform(n: usize) -> Result<Mesh, SolverError> {
        if n < 2 {
            return Err(SolverError::InvalidMesh(format!("N = {n} must be at least 2")));
        }
        Ok(Mesh {
            nodes: (0..=n).map(|i| i as f64 / n as f64).collect(),
            kind: MeshKind::Uniform,
            tau: 0.0,
            t0: f64::NAN,
            n,
        })
    }
}

/// `N/2` uniform cells on `[t₀ − τ, t₀ + τ]` and `N/4` on each outer piece,
/// with `τ = min((C_τ/γ̄) ε ln N, min(t₀, 1 − t₀)/2)`.
pub fn build_mesh(loc: &LayerLocation, epsilon: f64, n: usize, c_tau: f64) -> Result<Mesh, SolverError> {
    if n < 4 || !n.is_multiple_of(4) {
        return Err(SolverError::InvalidMesh(format!("N = {n} must be a positive multiple of 4")));
    }
    if !(c_tau > 2.0) {
        return Err(SolverError::InvalidMesh(format!("C_tau = {c_tau} must exceed 2")));
    }
    let t0 = loc.t0;
    let tau = transition_width(loc.gamma_bar, epsilon, n, c_tau).min(0.5 * t0.min(1.0 - t0));
    let (a, b) = (t0 - tau, t0 + tau);
    let q = n / 4;
    let mut nodes = Vec::with_capacity(n + 1);
    for i in 0..q {
        nodes.push(a * i as f64 / q as f64);
    }
    for i in 0..2 * q {
        nodes.push(a + (b - a) * i as f64 / (2 * q) as f64);
    }
    for i in 0..q {
        nodes.push(b + (1.0 - b) * i as f64 / q as f64);
    }
    nodes.push(1.0);
    nodes[2 * q] = t0;
    Ok(Mesh { nodes, kind: MeshKind::LayerAdapted, tau, t0, n })
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshSolution {
    pub mesh: Mesh,
    pub u: Vec<f64>,
    pub iterations: usize,
    /// Final max-norm of the discrete residual.
    pub residual: f64,
    /// Accepted damping factor of every Newton step.
    pub damping: Vec<f64>,
}

/// Discrete residual at interior nodes.
fn residual(spec: &ProblemSpec, x: &[f64], u: &[f64], e2: f64, out: &mut [f64]) {
    let n = x.len() - 1;
    for i in 1..n {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        let d2 = 2.0 / (h0 + h1) * ((u[i + 1] - u[i]) / h1 - (u[i] - u[i - 1]) / h0);
        out[i] = -e2 * d2 + spec.b(x[i], u[i]);
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, r| if r.is_nan() { f64::INFINITY } else { m.max(r.abs()) })
}

/// Damped Newton from `initial` (boundary values are imposed). Converged when
/// the discrete residual is at most `1e-10 (1 + max|b|)`.
pub fn newton_solve(spec: &ProblemSpec, mesh: &Mesh, initial: impl Fn(f64) -> f64) -> Result<MeshSolution, SolverError> {
    let x = &mesh.nodes;
    let n = x.len() - 1;
    let e2 = spec.epsilon * spec.epsilon;
    let tol = 1e-10 * spec.tolerance_scale(256);
    let mut u: Vec<f64> = x.iter().map(|&xi| initial(xi)).collect();
    u[0] = spec.g0;
    u[n] = spec.g1;
    let mut r = vec![0.0; n + 1];
    residual(spec, x, &u, e2, &mut r);
    let mut norm = max_abs(&r[1..n]);
    let mut damping = Vec::new();
    let m = n - 1;
    let (mut a, mut d, mut c, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut trial = u.clone();
    let mut r_trial = vec![0.0; n + 1];
    let mut iterations = 0;
    while norm > tol {
        if iterations == MAX_ITERATIONS {
            return Err(SolverError::NoConvergence { iterations, residual: norm });
        }
        for i in 1..n {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let k = 2.0 * e2 / (h0 + h1);
            a[i - 1] = -k / h0;
            c[i - 1] = -k / h1;
            d[i - 1] = k / h0 + k / h1 + spec.bu(x[i], u[i]);
            rhs[i - 1] = -r[i];
        }
        solve_tridiagonal(&a, &mut d, &c, &mut rhs).map_err(|row| SolverError::SingularJacobian { row })?;
        let mut lambda = 1.0;
        loop {
            for i in 1..n {
                trial[i] = u[i] + lambda * rhs[i - 1];
            }
            residual(spec, x, &trial, e2, &mut r_trial);
            let trial_norm = max_abs(&r_trial[1..n]);
            if trial_norm < norm || lambda < 1e-6 {
                break;
            }
            lambda *= 0.5;
        }
        iterations += 1;
        let trial_norm = max_abs(&r_trial[1..n]);
        if !(trial_norm < norm) {
            return Err(SolverError::NoConvergence { iterations, residual: norm });
        }
        damping.push(lambda);
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut r, &mut r_trial);
        trial[0] = u[0];
        trial[n] = u[n];
        norm = trial_norm;
    }
    Ok(MeshSolution { mesh: mesh.clone(), u, iterations, residual: norm, damping })
}

/// Max-norm distances between a mesh solution and the expansion at the mesh
/// nodes: overall, on `|x − t₀| ≤ τ`, and outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distances {
    pub max: f64,
    pub layer: f64,
    pub outer: f64,
}

pub fn compare(sol: &MeshSolution, e: &Expansion) -> Distances {
    compare_with(sol, e.loc.t0, |x| e.eval(x))
}

/// Same as [`compare`] for any reference function.
pub fn compare_with(sol: &MeshSolution, t0: f64, f: impl Fn(f64) -> f64) -> Distances {
    let tau = sol.mesh.tau;
    let mut out = Distances { max: 0.0, layer: 0.0, outer: 0.0 };
    for (&x, &u) in sol.mesh.nodes.iter().zip(&sol.u) {
        let d = (u - f(x)).abs();
        out.max = out.max.max(d);
        if (x - t0).abs() <= tau {
            out.layer = out.layer.max(d);
        } else {
            out.outer = out.outer.max(d);
        }
    }
    out
}

/// Max-norm distance between two solutions on the same mesh.
pub fn solution_distance(a: &MeshSolution, b: &MeshSolution) -> f64 {
    assert_eq!(a.u.len(), b.u.len(), "solutions live on different meshes");
    a.u.iter().zip(&b.u).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::LayerModel;

    fn model() -> LayerModel {
        LayerModel::build(&ProblemSpec::builtin("cubic").unwrap()).unwrap()
    }

    #[test]
    fn mesh_examples() {
        let m = model();
        let mesh = build_mesh(&m.loc, 1e-2, 64, 2.5).unwrap();
        assert!((mesh.tau - 2.5 * 2f64.sqrt() * 0.01 * 64f64.ln()).abs() < 1e-12);
        assert!((mesh.tau - 0.1470).abs() < 1e-4);
        assert_eq!(mesh.nodes.len(), 65);
        assert_eq!(mesh.nodes[32], m.loc.t0);
        assert!(mesh.nodes.windows(2).all(|w| w[1] > w[0]));
        let clamped = build_mesh(&m.loc, 0.1, 64, 2.5).unwrap();
        assert!((clamped.tau - 0.25).abs() < 1e-12);
        let u = Mesh::uniform(10).unwrap();
        assert_eq!(u.tau, 0.0);
        assert!((u.nodes[3] - 0.3).abs() < 1e-15);
        assert!(build_mesh(&m.loc, 1e-2, 66, 2.5).is_err());
        assert!(build_mesh(&m.loc, 1e-2, 64, 2.0).is_err());
    }

    #[test]
    fn seeded_solves() {
        let m = model();
        let eps = 1e-2;
        let spec = m.spec.with_epsilon(eps).unwrap();
        let e = m.expansion(eps, 0.0).unwrap();
        let mesh = build_mesh(&m.loc, eps, 512, 2.5).unwrap();
        let sol = newton_solve(&spec, &mesh, |x| e.eval(x)).unwrap();
        assert!(sol.iterations <= 8, "{} iterations", sol.iterations);
        assert!(sol.residual <= 1e-10 * spec.tolerance_scale(256));
        let d = compare(&sol, &e);
        assert!(d.max < 1e-2, "{d:?}");
        assert_eq!(solution_distance(&sol, &sol), 0.0);

        let trunc = newton_solve(&spec, &mesh, |x| e.eval_u_truncated(x, 512, 2.5).unwrap()).unwrap();
        assert!(solution_distance(&sol, &trunc) <= 1e-8);

        for p in [-1e-2, 1e-2] {
            let ep = m.expansion(eps, p).unwrap();
            let other = newton_solve(&spec, &mesh, |x| ep.eval(x)).unwrap();
            assert!(solution_distance(&sol, &other) <= 1e-8);
        }

        let phi0 = spec.phi(0, 0.5);
        match newton_solve(&spec, &mesh, |_| phi0) {
            Err(SolverError::NoConvergence { .. }) => {}
            Ok(s) => assert!(solution_distance(&sol, &s) > 0.1 || compare(&s, &e).max > 0.1),
            Err(other) => panic!("unexpected {other:?}"),
        }
    }
}
