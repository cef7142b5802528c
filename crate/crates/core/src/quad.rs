//! Gauss–Legendre rules and an adaptive Gauss–Kronrod (7/15) integrator.

/// Four-point Gauss–Legendre nodes on [-1, 1].
pub const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
pub const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// Ten-point Gauss–Legendre nodes on [-1, 1].
pub const GL10_NODES: [f64; 10] = [
    -0.973_906_528_517_171_7,
    -0.865_063_366_688_984_5,
    -0.679_409_568_299_024_4,
    -0.433_395_394_129_247_2,
    -0.148_874_338_981_631_2,
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
pub const GL10_WEIGHTS: [f64; 10] = [
    0.066_671_344_308_688_1,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982,
    0.269_266_719_309_996_4,
    0.295_524_224_714_752_9,
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_2,
    0.063_092_092_629_979_0,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Mean of `f` over [0, 1] by ten-point Gauss–Legendre.
pub fn gl10_unit_mean(mut f: impl FnMut(f64) -> f64) -> f64 {
    GL10_NODES
        .iter()
        .zip(GL10_WEIGHTS.iter())
        .map(|(t, w)| 0.5 * w * f(0.5 * (t + 1.0)))
        .sum()
}

fn kronrod15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        res_k += WGK[j] * s;
        if j % 2 == 1 {
            res_g += WG[j / 2] * s;
        }
    }
    (res_k * half, ((res_k - res_g) * half).abs())
}

/// Adaptive Gauss–Kronrod integration of `f` over [a, b].
///
/// Bisects the panel with the largest error estimate until the total estimate
/// falls below `max(abs_tol, rel_tol * |result|)` or the panel budget runs out.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (v, e) = kronrod15(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    let mut total = v;
    let mut err = e;
    for _ in 0..200 {
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (pa, pb, pv, pe) = panels.swap_remove(idx);
        let mid = 0.5 * (pa + pb);
        let (lv, le) = kronrod15(&mut f, pa, mid);
        let (rv, re) = kronrod15(&mut f, mid, pb);
        total += lv + rv - pv;
        err += le + re - pe;
        panels.push((pa, mid, lv, le));
        panels.push((mid, pb, rv, re));
    }
    // Re-sum to avoid drift from the running updates.
    panels.iter().map(|p| p.2).sum()
}

/// Integration matrix for the four-point Gauss–Legendre collocation:
/// `m[k][j] = ∫_{-1}^{τ_k} L_j(τ) dτ` with `L_j` the Lagrange basis on the nodes.
pub fn gl4_partial_matrix() -> [[f64; 4]; 4] {
    let lagrange = |j: usize, t: f64| -> f64 {
        (0..4)
            .filter(|&m| m != j)
            .map(|m| (t - GL4_NODES[m]) / (GL4_NODES[j] - GL4_NODES[m]))
            .product()
    };
    let mut m = [[0.0; 4]; 4];
    for (k, row) in m.iter_mut().enumerate() {
        let hi = GL4_NODES[k];
        let half = 0.5 * (hi + 1.0);
        for (j, entry) in row.iter_mut().enumerate() {
            *entry = GL4_NODES
                .iter()
                .zip(GL4_WEIGHTS.iter())
                .map(|(t, w)| w * half * lagrange(j, -1.0 + half * (t + 1.0)))
                .sum();
        }
    }
    m
}
