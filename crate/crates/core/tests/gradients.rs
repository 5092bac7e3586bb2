//! Finite-difference and linearity properties of the differentiable stack.

use proptest::prelude::*;
use salnet::geometry::{
    compose_affine, normalized_to_index, param_jacobians, Axis, GridSpec, SalParams, SamplingGrid, N_AFFINE,
};
use salnet::resampler::{bilinear_backward, bilinear_sample, sal_param_grad, Frame, SamplerConfig};
use salnet::sal::{FreezeMask, SalLayer};

fn params_strategy() -> impl Strategy<Value = SalParams> {
    (
        -0.3..0.3f64,
        -0.3..0.3f64,
        -0.3..0.3f64,
        0.8..1.2f64,
        0.8..1.2f64,
        -0.2..0.2f64,
        -0.2..0.2f64,
    )
        .prop_map(|(tx, ty, phi, sx, sy, shx, shy)| SalParams { tx, ty, phi, sx, sy, shx, shy })
}

fn frame_strategy(h: usize, w: usize) -> impl Strategy<Value = Frame> {
    prop::collection::vec(-2.0..2.0f64, h * w).prop_map(move |v| Frame::new(h, w, v).unwrap())
}

fn with_param(p: &SalParams, k: usize, delta: f64) -> SalParams {
    let mut a = p.to_array();
    a[k] += delta;
    SalParams::from_array(a)
}

/// Loss `<c, sample(u, A(p))>` for a fixed cotangent `c`.
fn pairing(u: &Frame, p: &SalParams, c: &Frame, cfg: &SamplerConfig) -> f64 {
    let v = bilinear_sample(u, &salnet::resampler::sal_grid(u, p).unwrap(), cfg).unwrap();
    v.values.iter().zip(&c.values).map(|(a, b)| a * b).sum()
}

fn kink_free(u: &Frame, p: &SalParams) -> bool {
    let s = salnet::resampler::sal_grid(u, p).unwrap();
    let near = |v: f64| (v - v.round()).abs() < 1e-3;
    !s.coords
        .iter()
        .any(|&(x, y)| near(normalized_to_index(x, u.width)) || near(normalized_to_index(y, u.height)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_jacobians_match_central_differences(p in params_strategy()) {
        let jac = param_jacobians(&p).unwrap();
        let h = 1e-6;
        for k in 0..N_AFFINE {
            let up = compose_affine(&with_param(&p, k, h)).unwrap();
            let down = compose_affine(&with_param(&p, k, -h)).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    let fd = (up.theta[r][c] - down.theta[r][c]) / (2.0 * h);
                    prop_assert!((fd - jac[k].theta[r][c]).abs() < 1e-8,
                        "param {k} entry ({r},{c}): fd {fd} analytic {}", jac[k].theta[r][c]);
                }
            }
        }
    }

    #[test]
    fn sampler_param_gradient_matches_differences(
        u in frame_strategy(7, 24),
        c in frame_strategy(7, 24),
        p in params_strategy(),
        wrap in any::<bool>(),
    ) {
        prop_assume!(kink_free(&u, &p));
        let cfg = SamplerConfig { wrap: wrap.then_some(Axis::X) };
        let g = sal_param_grad(&u, &p, &c, &cfg).unwrap();
        let h = 1e-7;
        for k in 0..N_AFFINE {
            let fd = (pairing(&u, &with_param(&p, k, h), &c, &cfg)
                - pairing(&u, &with_param(&p, k, -h), &c, &cfg)) / (2.0 * h);
            let scale = fd.abs().max(g[k].abs()).max(1e-3);
            prop_assert!((fd - g[k]).abs() / scale < 1e-4, "param {k}: fd {fd} analytic {}", g[k]);
        }
    }

    #[test]
    fn input_gradient_is_adjoint_of_sampling(
        u in frame_strategy(5, 6),
        v in frame_strategy(5, 6),
        p in params_strategy(),
    ) {
        // <S u, v> == <u, S^T v> for the linear map S at fixed coordinates
        let cfg = SamplerConfig::default();
        let s = salnet::resampler::sal_grid(&u, &p).unwrap();
        let su = bilinear_sample(&u, &s, &cfg).unwrap();
        let st_v = bilinear_backward(&u, &s, &v, &cfg).unwrap().d_input;
        let lhs: f64 = su.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.values.iter().zip(&st_v).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn sampling_is_linear_in_the_image(
        u in frame_strategy(7, 24),
        w in frame_strategy(7, 24),
        p in params_strategy(),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let cfg = SamplerConfig::default();
        let s = salnet::resampler::sal_grid(&u, &p).unwrap();
        let mix = Frame::new(7, 24, u.values.iter().zip(&w.values).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = bilinear_sample(&mix, &s, &cfg).unwrap();
        let su = bilinear_sample(&u, &s, &cfg).unwrap();
        let sw = bilinear_sample(&w, &s, &cfg).unwrap();
        for i in 0..lhs.len() {
            prop_assert!((lhs.values[i] - (a * su.values[i] + b * sw.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_samples_are_convex_combinations(
        u in frame_strategy(7, 24),
        x in -1.0..1.0f64,
        y in -1.0..1.0f64,
    ) {
        // inside the lattice every sample lies between its four neighbours
        let grid = SamplingGrid { coords: vec![(x, y); u.len()] };
        let v = bilinear_sample(&u, &grid, &SamplerConfig::default()).unwrap().values[0];
        let (mx, my) = (normalized_to_index(x, 24), normalized_to_index(y, 7));
        let (c0, r0) = (mx.floor() as usize, my.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(23), (r0 + 1).min(6));
        let nb = [u.at(r0, c0), u.at(r0, c1), u.at(r1, c0), u.at(r1, c1)];
        let lo = nb.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nb.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }

    #[test]
    fn bias_gradient_matches_differences(
        u in frame_strategy(7, 24),
        c in frame_strategy(7, 24),
        p in params_strategy(),
        idx in 0usize..168,
    ) {
        let grid = GridSpec::csl();
        let mut layer = SalLayer::new(grid);
        layer.params = p;
        let loss = |l: &SalLayer| -> f64 {
            l.prepare().unwrap().forward(&u).unwrap().values.iter().zip(&c.values).map(|(a, b)| a * b).sum()
        };
        let g = layer.prepare().unwrap().backward(&u, &c).unwrap();
        let h = 1e-3;
        let mut up = layer.clone();
        up.bias[idx] += h;
        let mut down = layer.clone();
        down.bias[idx] -= h;
        // the output is linear in the bias, so the difference is exact up to rounding
        let fd = (loss(&up) - loss(&down)) / (2.0 * h);
        prop_assert!((fd - g.bias[idx]).abs() < 1e-9);
    }

    #[test]
    fn frozen_groups_get_exact_zero(
        u in frame_strategy(7, 24),
        c in frame_strategy(7, 24),
        p in params_strategy(),
    ) {
        let layer = SalLayer { params: p, ..SalLayer::new(GridSpec::csl()) }
            .with_freeze(FreezeMask::frozen(&["tx", "phi", "shy", "bias"]).unwrap());
        let g = layer.prepare().unwrap().backward(&u, &c).unwrap();
        prop_assert_eq!(g.affine[0], 0.0);
        prop_assert_eq!(g.affine[2], 0.0);
        prop_assert_eq!(g.affine[6], 0.0);
        prop_assert!(g.bias.iter().all(|&b| b == 0.0));
    }
}
