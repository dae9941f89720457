use proptest::prelude::*;
use rational_nets::distance::{
    integrate_abs_diff, nd, nd_sym, rnd, uniform_density, AffineReparam, DistanceConfig,
};
use rational_nets::fitting::ReferenceActivation as Ref;
use rational_nets::{init_identity, Density, RationalFunction};

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn id(x: f64) -> f64 {
    x
}

fn reference(k: usize) -> impl Fn(f64) -> f64 {
    let act = [Ref::Tanh, Ref::Sigmoid, Ref::Silu, Ref::Dsilu, Ref::lrelu()][k];
    move |x| act.eval(x)
}

/// Plain trapezoid sum of `|f1 − g|` on `n` nodes, written out independently.
fn l1_on(f1: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            w * h * (f1(x) - g(x)).abs()
        })
        .sum()
}

/// Every `a·(c·x + d) + b` is a line, so the ReLU-vs-identity distance is the
/// best L1 line fit of ReLU. Dense grid over slope and intercept, zoomed in
/// three times around the incumbent.
fn relu_line_fit_oracle() -> f64 {
    let (mut s0, mut i0, mut span) = (0.5, 0.5, 2.0);
    let mut best = f64::INFINITY;
    for _ in 0..4 {
        let (mut bs, mut bi) = (s0, i0);
        for p in 0..=80 {
            for q in 0..=80 {
                let s = s0 - span + 2.0 * span * p as f64 / 80.0;
                let t = i0 - span + 2.0 * span * q as f64 / 80.0;
                let v = l1_on(&relu, &|x| s * x + t, -3.0, 3.0, 601);
                if v < best {
                    best = v;
                    bs = s;
                    bi = t;
                }
            }
        }
        s0 = bs;
        i0 = bi;
        span /= 10.0;
    }
    best
}

#[test]
fn relu_vs_identity_matches_dense_search() {
    let cfg = DistanceConfig::default();
    let got = nd(&relu, &id, &cfg).unwrap().value;
    let oracle = relu_line_fit_oracle();
    assert!(got > 0.0);
    assert!((got - oracle).abs() <= 0.05 * oracle, "nd {got} oracle {oracle}");
}

#[test]
fn self_distance_is_zero_at_identity_reparam() {
    let cfg = DistanceConfig::default();
    for k in 0..5 {
        let f = reference(k);
        let d = nd(&f, &f, &cfg).unwrap();
        assert!(d.value <= 1e-6, "k={k}: {}", d.value);
        // Odd or point-symmetric references also admit (−1, b, −1, 0); any
        // optimum must reproduce f itself.
        for i in 0..=60 {
            let x = -3.0 + 0.1 * i as f64;
            assert!((d.reparam.apply(&f, x) - f(x)).abs() < 1e-3, "k={k}: {:?}", d.reparam);
        }
        assert!(nd_sym(&f, &f, &cfg).unwrap() <= 1e-6);
    }
}

#[test]
fn tanh_pair_recovers_the_mapping() {
    let cfg = DistanceConfig::default();
    let g = |x: f64| 2.0 * (3.0 * x - 1.0).tanh() + 5.0;
    let d = nd(&|x: f64| x.tanh(), &g, &cfg).unwrap();
    assert!(d.value <= 1e-3, "{}", d.value);
    // tanh(x) = ½·g(x/3 + 1/3) − 5/2
    let rp = d.reparam;
    for (got, want) in [(rp.a, 0.5), (rp.b, -2.5), (rp.c, 1.0 / 3.0), (rp.d, 1.0 / 3.0)] {
        assert!((got - want).abs() < 1e-2, "{rp:?}");
    }
}

#[test]
fn sigmoid_and_tanh_are_equivalent() {
    let cfg = DistanceConfig::default();
    let s = |x: f64| Ref::Sigmoid.eval(x);
    let t = |x: f64| x.tanh();
    let v = nd_sym(&s, &t, &cfg).unwrap();
    assert!(v <= 1e-2, "{v}");
    assert_eq!(v, nd_sym(&t, &s, &cfg).unwrap());
}

#[test]
fn uniform_density_scales_by_domain_length() {
    let cfg = DistanceConfig::default();
    let rho = uniform_density(&cfg).unwrap();
    let len = cfg.domain.1 - cfg.domain.0;
    let pairs: [(&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64); 3] = [
        (&relu, &id),
        (&|x: f64| x.tanh(), &|x: f64| Ref::Silu.eval(x)),
        (&|x: f64| x * x, &|x: f64| x.sin()),
    ];
    for (f1, f2) in pairs {
        let plain = nd(f1, f2, &cfg).unwrap().value;
        let weighted = rnd(f1, f2, &rho, &cfg).unwrap().value;
        assert!((weighted - plain / len).abs() <= 1e-9, "{weighted} vs {}", plain / len);
    }
}

#[test]
fn density_on_positive_half_hides_the_kink() {
    let cfg = DistanceConfig::default();
    let rho = Density::from_bins(0.0, 3.0, vec![1.0])
        .unwrap()
        .normalized_on(cfg.domain.0, cfg.domain.1, cfg.quad_points)
        .unwrap();
    let v = rnd(&relu, &id, &rho, &cfg).unwrap().value;
    assert!(v <= 1e-3, "{v}");
}

#[test]
fn weighted_self_distance_is_zero() {
    let cfg = DistanceConfig::default();
    let rho = Density::from_bins(-3.0, 3.0, vec![0.1, 0.5, 2.0, 0.7, 0.0, 0.3])
        .unwrap()
        .normalized_on(-3.0, 3.0, cfg.quad_points)
        .unwrap();
    for k in 0..5 {
        let f = reference(k);
        assert!(rnd(&f, &f, &rho, &cfg).unwrap().value <= 1e-6);
    }
}

#[test]
fn integrate_matches_closed_form() {
    // 2x² − x² on [0, 1] integrates to 1/3; trapezoid error ≤ h²/12·max|f''| = h²/6.
    let sq = |x: f64| x * x;
    let v = integrate_abs_diff(&sq, &sq, &AffineReparam::new(2.0, 0.0, 1.0, 0.0), (0.0, 1.0), 101, None).unwrap();
    let h = 0.01;
    assert!((v - 1.0 / 3.0).abs() <= h * h / 6.0 + 1e-15, "{v}");
}

/// Best `(c, d)` grid cell with the inner `(a, b)` from least squares,
/// scored in L1. Recomputed here from scratch.
fn grid_best(f1: &dyn Fn(f64) -> f64, f2: &dyn Fn(f64) -> f64, cfg: &DistanceConfig) -> f64 {
    let (lo, hi) = cfg.domain;
    let n = cfg.quad_points;
    let h = (hi - lo) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    let w: Vec<f64> = (0..n).map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h }).collect();
    let y: Vec<f64> = xs.iter().map(|&x| f1(x)).collect();
    let wsum: f64 = w.iter().sum();
    let mut best = f64::INFINITY;
    for &c in &cfg.c_grid {
        for &d in &cfg.d_grid {
            let g: Vec<f64> = xs.iter().map(|&x| f2(c * x + d)).collect();
            let gm = w.iter().zip(&g).map(|(w, g)| w * g).sum::<f64>() / wsum;
            let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / wsum;
            let cov: f64 = (0..n).map(|i| w[i] * (g[i] - gm) * (y[i] - ym)).sum();
            let var: f64 = (0..n).map(|i| w[i] * (g[i] - gm).powi(2)).sum();
            let a = if var > 1e-20 { cov / var } else { 0.0 };
            let b = ym - a * gm;
            let v: f64 = (0..n).map(|i| w[i] * (y[i] - a * g[i] - b).abs()).sum();
            best = best.min(v);
        }
    }
    best
}

#[test]
fn refinement_never_exceeds_grid_best() {
    let cfg = DistanceConfig::default();
    let pairs: [(&dyn Fn(f64) -> f64, &dyn Fn(f64) -> f64); 4] = [
        (&relu, &id),
        (&|x: f64| x.tanh(), &|x: f64| x.sin()),
        (&|x: f64| Ref::Dsilu.eval(x), &|x: f64| x * x),
        (&|x: f64| x.abs(), &|x: f64| Ref::Silu.eval(x)),
    ];
    for (f1, f2) in pairs {
        let refined = nd(f1, f2, &cfg).unwrap().value;
        let grid = grid_best(f1, f2, &cfg);
        assert!(refined <= grid * (1.0 + 1e-12) + 1e-15, "{refined} > {grid}");
    }
}

#[test]
fn unnormalized_density_is_rejected() {
    let cfg = DistanceConfig::default();
    let rho = Density::from_bins(-3.0, 3.0, vec![1.0]).unwrap();
    assert!(rnd(&relu, &id, &rho, &cfg).is_err());
}

fn jittered_rational(seed: &[f64]) -> RationalFunction {
    let mut rf = init_identity(5, 4).unwrap();
    let p: Vec<f64> = rf.params().iter().zip(seed).map(|(p, s)| p + s).collect();
    rf.set_params(&p).unwrap();
    rf
}

fn reparam() -> impl Strategy<Value = AffineReparam> {
    (any::<bool>(), -1.0f64..1.0, -2.0f64..2.0, any::<bool>(), -1.0f64..1.0, -1.0f64..1.0).prop_map(
        |(sa, la, b, sc, lc, d)| {
            let sign = |s: bool| if s { 1.0 } else { -1.0 };
            AffineReparam::new(sign(sa) * 10f64.powf(la), b, sign(sc) * 10f64.powf(lc), d)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn affine_copies_are_at_distance_zero(
        k in 0usize..6,
        jitter in prop::collection::vec(-0.3f64..0.3, 10),
        rp in reparam(),
    ) {
        let rf = jittered_rational(&jitter);
        let f = move |x: f64| if k < 5 { reference(k)(x) } else { rf.eval(x).unwrap() };
        let g = |x: f64| rp.apply(&f, x);
        let d = nd(&f, &g, &DistanceConfig::default()).unwrap();
        prop_assert!(d.value >= 0.0);
        prop_assert!(d.value <= 1e-3, "{rp:?}: {}", d.value);
    }

    #[test]
    fn symmetric_distance_is_exactly_symmetric(k1 in 0usize..5, k2 in 0usize..5, shift in -1.0f64..1.0) {
        let cfg = DistanceConfig::default();
        let f1 = reference(k1);
        let f2 = move |x: f64| reference(k2)(x + shift).sin();
        let ab = nd_sym(&f1, &f2, &cfg).unwrap();
        let ba = nd_sym(&f2, &f1, &cfg).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
    }

    #[test]
    fn quadrature_converges_on_smooth_integrands(lo in 1.5f64..2.5, len in 0.5f64..2.0, n in 11usize..200) {
        // x³ − x on [lo, hi] with lo > 1 stays positive, so the integrand is smooth.
        let hi = lo + len;
        let cube = |x: f64| x * x * x;
        let coarse = integrate_abs_diff(&cube, &id, &AffineReparam::IDENTITY, (lo, hi), n, None).unwrap();
        let fine = integrate_abs_diff(&cube, &id, &AffineReparam::IDENTITY, (lo, hi), 2 * n - 1, None).unwrap();
        let h = len / (n - 1) as f64;
        let bound = len * h * h / 12.0 * 6.0 * hi;
        prop_assert!((fine - coarse).abs() <= bound, "{} > {bound}", (fine - coarse).abs());
        let exact = (hi.powi(4) - lo.powi(4)) / 4.0 - (hi * hi - lo * lo) / 2.0;
        prop_assert!((coarse - exact).abs() <= bound);
    }
}
