//! One-sided graded grids and quintic Hermite interpolation on them.

use serde::Serialize;

/// Nodes `0 = s_0 < s_1 < ... < s_n = extent` with geometric grading:
/// `s_j = extent * (e^{q j/n} - 1) / (e^q - 1)`, `q` chosen so that the first
/// spacing does not exceed `first_spacing`.
#[derive(Debug, Clone, Serialize)]
pub struct GradedGrid {
    pub nodes: Vec<f64>,
    pub grading: f64,
}

impl GradedGrid {
    pub fn new(extent: f64, intervals: usize, first_spacing: f64) -> GradedGrid {
        assert!(extent > 0.0 && intervals > 0 && first_spacing > 0.0);
        let n = intervals as f64;
        let spacing = |q: f64| {
            if q == 0.0 {
                extent / n
            } else {
                extent * (q / n).exp_m1() / q.exp_m1()
            }
        };
        let q = if spacing(0.0) <= first_spacing {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            while spacing(hi) > first_spacing {
                hi *= 2.0;
                if hi > 700.0 {
                    break;
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if spacing(mid) > first_spacing {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        };
        let nodes = (0..=intervals)
            .map(|j| {
                if j == intervals {
                    extent
                } else if q == 0.0 {
                    extent * j as f64 / n
                } else {
                    extent * (q * j as f64 / n).exp_m1() / q.exp_m1()
                }
            })
            .collect();
        GradedGrid { nodes, grading: q }
    }

    pub fn extent(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Index `i` of the interval `[s_i, s_{i+1}]` containing `s` (clamped).
    pub fn locate(&self, s: f64) -> usize {
        let idx = self.nodes.partition_point(|&v| v <= s);
        idx.saturating_sub(1).min(self.nodes.len() - 2)
    }
}

/// Value and first derivative of the quintic Hermite interpolant on `[a, b]`
/// matching value, first and second derivative at both ends.
#[allow(clippy::too_many_arguments)]
pub fn quintic_hermite(
    a: f64,
    b: f64,
    left: [f64; 3],
    right: [f64; 3],
    s: f64,
) -> (f64, f64) {
    let h = b - a;
    let t = (s - a) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h0 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h1 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h2 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h3 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h4 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h5 = 0.5 * (t3 - 2.0 * t4 + t5);
    let d0 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let d1 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let d2 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
    let d3 = -d0;
    let d4 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let d5 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
    let value = h0 * left[0]
        + h * h1 * left[1]
        + h * h * h2 * left[2]
        + h3 * right[0]
        + h * h4 * right[1]
        + h * h * h5 * right[2];
    let deriv = (d0 * left[0] + d3 * right[0]) / h
        + d1 * left[1]
        + d4 * right[1]
        + h * (d2 * left[2] + d5 * right[2]);
    (value, deriv)
}

/// Least-squares line `y = slope * x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Solve `a_i y_{i-1} + d_i y_i + c_i y_{i+1} = r_i` in place (Thomas
/// algorithm). On a vanishing pivot the offending row is returned.
pub fn solve_tridiagonal(a: &[f64], d: &mut [f64], c: &[f64], r: &mut [f64]) -> Result<(), usize> {
    let n = d.len();
    for i in 1..n {
        if !(d[i - 1].abs() > 1e-300) {
            return Err(i - 1);
        }
        let m = a[i] / d[i - 1];
        d[i] -= m * c[i - 1];
        r[i] -= m * r[i - 1];
    }
    if !(d[n - 1].abs() > 1e-300) {
        return Err(n - 1);
    }
    r[n - 1] /= d[n - 1];
    for i in (0..n - 1).rev() {
        r[i] = (r[i] - c[i] * r[i + 1]) / d[i];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_grid_respects_first_spacing() {
        let g = GradedGrid::new(28.0, 2000, 1e-3);
        assert!(g.nodes[1] - g.nodes[0] <= 1e-3 * (1.0 + 1e-9));
        assert!(g.nodes[1] - g.nodes[0] > 0.9e-3);
        assert_eq!(g.extent(), 28.0);
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        let u = GradedGrid::new(1.0, 10, 0.5);
        assert_eq!(u.grading, 0.0);
        assert!((u.nodes[3] - 0.3).abs() < 1e-15);
        assert_eq!(g.locate(0.0), 0);
        assert_eq!(g.locate(28.0), 1999);
        assert_eq!(g.locate(100.0), 1999);
    }

    #[test]
    fn hermite_reproduces_quintics() {
        let f = |s: f64| 1.0 - s + 2.0 * s.powi(3) - 0.5 * s.powi(5);
        let df = |s: f64| -1.0 + 6.0 * s * s - 2.5 * s.powi(4);
        let ddf = |s: f64| 12.0 * s - 10.0 * s.powi(3);
        let (a, b) = (0.2, 0.9);
        for &s in &[0.2, 0.35, 0.6, 0.9] {
            let (v, d) = quintic_hermite(a, b, [f(a), df(a), ddf(a)], [f(b), df(b), ddf(b)], s);
            assert!((v - f(s)).abs() < 1e-14);
            assert!((d - df(s)).abs() < 1e-13);
        }
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 2.0).collect();
        let (m, c) = linear_fit(&xs, &ys);
        assert!((m - 3.0).abs() < 1e-14 && (c + 2.0).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_solves_small_system() {
        let a = [0.0, -1.0, -1.0];
        let mut d = [2.0, 2.0, 2.0];
        let c = [-1.0, -1.0, 0.0];
        let mut r = [1.0, 0.0, 1.0];
        solve_tridiagonal(&a, &mut d, &c, &mut r).unwrap();
        for v in r {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let mut d0 = [0.0, 1.0];
        let mut r0 = [1.0, 1.0];
        assert_eq!(solve_tridiagonal(&[0.0, 0.0], &mut d0, &[0.0, 0.0], &mut r0), Err(0));
    }
}
