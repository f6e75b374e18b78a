//! Property tests for losses, updates, chains, bounds and report helpers.

use proptest::prelude::*;

use mcsgm::bounds::{
    sgd_gen_bound, sgd_stability_bound, sgda_gen_bounds, sgda_opt_bound, sgda_stability_bound, BoundInputs,
};
use mcsgm::chain::{sample_path, uniform_distribution, MixingProfile, TransitionMatrix};
use mcsgm::harness::{fit_rate, quantile_report};
use mcsgm::losses::{
    generate_saddle_dataset, Dataset, Example, LossFamily, LossKind, MinimaxFamily, MinimaxKind, SaddleGenerator,
};
use mcsgm::optim::{mc_sgd, mc_sgda, nonexpansive_witness, DomainSpec, StepSchedule};
use mcsgm::stability::{twin_sgd, NeighborSpec};
use mcsgm::vecops::{dot, norm};

const D: usize = 3;
const B_X: f64 = 1.5;
const RADIUS: f64 = 2.0;

fn vec_in(r: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-r..r, D)
}

fn example() -> impl Strategy<Value = Example> {
    (prop::collection::vec(-1.0..1.0f64, D), 0.0..1.0f64, any::<bool>()).prop_map(|(x, s, pos)| {
        let nx = norm(&x).max(1e-9);
        Example {
            x: x.iter().map(|v| v * s * B_X / nx).collect(),
            y: if pos { 1.0 } else { -1.0 },
        }
    })
}

fn family(kind: LossKind) -> LossFamily {
    LossFamily::new(kind, D, B_X, &DomainSpec::Ball { radius: RADIUS }).unwrap()
}

fn kinds() -> impl Strategy<Value = LossKind> {
    prop_oneof![
        Just(LossKind::Logistic),
        Just(LossKind::Hinge),
        Just(LossKind::Absolute),
        Just(LossKind::LeastSquares),
        Just(LossKind::SigmoidSq),
    ]
}

fn project(w: &[f64]) -> Vec<f64> {
    let mut w = w.to_vec();
    DomainSpec::Ball { radius: RADIUS }.project_in_place(&mut w);
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn losses_nonnegative_and_lipschitz(kind in kinds(), w in vec_in(3.0), z in example()) {
        let fam = family(kind);
        let w = project(&w);
        prop_assert!(fam.value(&w, &z).unwrap() >= 0.0);
        let g = fam.subgradient(&w, &z).unwrap();
        prop_assert!(norm(&g) <= fam.g * (1.0 + 1e-12));
    }

    #[test]
    fn convex_losses_satisfy_subgradient_inequality(kind in kinds(), w in vec_in(2.0), w2 in vec_in(2.0), z in example()) {
        let fam = family(kind);
        prop_assume!(fam.convex);
        let g = fam.subgradient(&w, &z).unwrap();
        let diff: Vec<f64> = w2.iter().zip(&w).map(|(a, b)| a - b).collect();
        let lhs = fam.value(&w2, &z).unwrap();
        let rhs = fam.value(&w, &z).unwrap() + dot(&g, &diff);
        prop_assert!(lhs >= rhs - 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gradient_step_is_nonexpansive(
        logistic in any::<bool>(), w in vec_in(2.0), w2 in vec_in(2.0), z in example(), frac in 0.0..1.0f64,
    ) {
        let fam = family(if logistic { LossKind::Logistic } else { LossKind::LeastSquares });
        let eta = 2.0 / fam.l.unwrap() * (1.0 - frac);
        let (lhs, rhs) = nonexpansive_witness(&fam, &w, &w2, &z, eta).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn sgd_iterates_stay_in_domain(
        kind in kinds(), zs in prop::collection::vec(example(), 4..12), t in 2usize..300, seed in any::<u64>(),
        w0 in vec_in(RADIUS / 2.0),
    ) {
        let fam = family(kind);
        let n = zs.len();
        let s = Dataset::new(zs, "prop", 0);
        let p = TransitionMatrix::random_symmetric(n, 0.3, seed).unwrap();
        let path = sample_path(&p, t, &uniform_distribution(n), seed).unwrap();
        prop_assert!(path.indices.iter().all(|&i| i < n));
        let domain = DomainSpec::Ball { radius: RADIUS };
        let sched = if fam.smooth { StepSchedule::InvSqrtTlogt } else { StepSchedule::Constant { eta: 0.5 } };
        let tr = mc_sgd(&fam, &s, &path, &sched, &w0, &domain).unwrap();
        for w in tr.iterates.iter().chain([&tr.last, &tr.averaged]) {
            prop_assert!(norm(w) <= RADIUS * (1.0 + 1e-12));
        }
    }

    #[test]
    fn sgda_iterates_stay_in_domain(t in 2usize..300, seed in any::<u64>(), mean_seed in any::<u64>()) {
        let fam = MinimaxFamily::new(MinimaxKind::ScConcaveSaddle, 2, 2, 0.5, 2.0, 1.0, 0.8).unwrap();
        let s = generate_saddle_dataset(&SaddleGenerator::new(&fam, mean_seed), 8, seed).unwrap();
        let p = TransitionMatrix::uniform(8).unwrap();
        let path = sample_path(&p, t, &uniform_distribution(8), seed).unwrap();
        let tr = mc_sgda(&fam, &s, &path, &StepSchedule::Constant { eta: 0.7 }, &[0.0; 2], &[0.0; 2],
            &fam.w_domain(), &fam.v_domain()).unwrap();
        for (w, v) in tr.iterates.iter().chain([&tr.last, &tr.averaged]) {
            prop_assert!(norm(w) <= 1.0 + 1e-12 && norm(v) <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn twin_runs_with_identical_replacement_coincide(
        zs in prop::collection::vec(example(), 3..10), t in 2usize..200, seed in any::<u64>(), idx in any::<prop::sample::Index>(),
    ) {
        let fam = family(LossKind::Logistic);
        let n = zs.len();
        let i = idx.index(n);
        let nb = NeighborSpec { index: i, replacement: zs[i].clone() };
        let s = Dataset::new(zs, "prop", 0);
        let p = TransitionMatrix::uniform(n).unwrap();
        let path = sample_path(&p, t, &uniform_distribution(n), seed).unwrap();
        let out = twin_sgd(&fam, &s, &nb, &path, &StepSchedule::InvSqrtTlogt, &[0.0; D],
            &DomainSpec::Ball { radius: RADIUS }).unwrap();
        prop_assert_eq!(out.distance, 0.0);
        prop_assert_eq!(out.output, out.neighbor_output);
    }

    #[test]
    fn transition_rows_are_stochastic(n in 2usize..20, alpha in 0.01..1.0f64, seed in any::<u64>()) {
        let p = TransitionMatrix::random_symmetric(n, alpha, seed).unwrap();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| p.get(i, j)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
            prop_assert!((0..n).all(|j| p.get(i, j) >= 0.0 && (p.get(i, j) - p.get(j, i)).abs() <= 1e-15));
        }
    }

    #[test]
    fn fit_rate_recovers_exact_power_laws(c in 0.01..100.0f64, alpha in -2.0..2.0f64, k in 2usize..8) {
        let pts: Vec<(f64, f64)> = (0..k).map(|i| {
            let t = (1u64 << (i + 4)) as f64;
            (t, c * t.powf(alpha))
        }).collect();
        let f = fit_rate(&pts).unwrap();
        prop_assert!((f.slope - alpha).abs() < 1e-9);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        prop_assert!((f.r_squared - 1.0).abs() < 1e-9 || alpha.abs() < 1e-12);
    }

    #[test]
    fn quantiles_are_ordered(values in prop::collection::vec(-10.0..10.0f64, 1..50), g1 in 0.01..0.99f64, g2 in 0.01..0.99f64) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let q_lo = quantile_report(&values, lo).unwrap();
        let q_hi = quantile_report(&values, hi).unwrap();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(q_hi <= q_lo && min <= q_hi && q_lo <= max);
    }
}

struct Draw {
    g: f64,
    l: f64,
    rho: f64,
    n: usize,
    t: usize,
    eta: f64,
    lambda: f64,
    c: f64,
    k_p: usize,
    d_w: f64,
    d_v: f64,
}

impl Draw {
    fn inputs(&self) -> BoundInputs {
        BoundInputs {
            g: self.g,
            l: Some(self.l),
            rho: self.rho,
            n: self.n,
            t: self.t,
            eta: self.eta,
            mixing: MixingProfile::new(self.lambda, self.c, self.k_p).unwrap(),
            d0: 0.0,
            f0_sup: 0.0,
            d_w: self.d_w,
            d_v: self.d_v,
            f_s_w0: 0.0,
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Re-derives the closed-form bounds term by term from per-step sums.
#[test]
fn bounds_match_independent_rederivation() {
    use rand::Rng;
    let mut rng = mcsgm::rng::rng_from_seed(42);
    let s2 = 2f64.sqrt();
    for _ in 0..100 {
        let t = rng.random_range(1..400usize);
        let l = rng.random_range(0.5..4.0);
        let draw = Draw {
            g: rng.random_range(0.1..5.0),
            l,
            rho: rng.random_range(0.0..1.0),
            n: rng.random_range(1..500),
            t,
            eta: rng.random_range(0.0..(1.0 / (l * (2.0 * t as f64).sqrt()))),
            lambda: rng.random_range(0.05..0.95),
            c: rng.random_range(1.0..1000.0),
            k_p: rng.random_range(0..5),
            d_w: rng.random_range(0.5..4.0),
            d_v: rng.random_range(0.5..4.0),
        };
        let inp = draw.inputs();
        let (g, n, eta) = (draw.g, draw.n as f64, draw.eta);
        let etas = vec![eta; t];
        let sum: f64 = etas.iter().sum();
        let sum_sq: f64 = etas.iter().map(|e| e * e).sum();

        assert!(close(sgd_stability_bound(&inp, true).unwrap(), 2.0 * g * sum / n));
        let nonsmooth = 2.0 * g * sum_sq.sqrt() + 4.0 * g * sum / n;
        assert!(close(sgd_stability_bound(&inp, false).unwrap(), nonsmooth));
        assert!(close(sgd_gen_bound(&inp, true).unwrap(), 2.0 * g * g * sum / n));
        assert!(close(sgd_gen_bound(&inp, false).unwrap(), g * nonsmooth));

        let a = 4.0 * g * (sum_sq / n).sqrt() + 8.0 * s2 * g * sum / n;
        let b = 2.0 * g * (2.0 * sum_sq).sqrt() + 4.0 * s2 * g * sum / n;
        assert!(close(sgda_stability_bound(&inp, true).unwrap(), a));
        assert!(close(sgda_stability_bound(&inp, false).unwrap(), b));
        for (smooth, eps) in [(true, a), (false, b)] {
            let gb = sgda_gen_bounds(&inp, smooth).unwrap();
            assert!(close(gb.weak_pd, g * eps));
            match gb.primal {
                Some(p) => assert!(close(p, (1.0 + draw.l / draw.rho) * g * eps)),
                None => assert_eq!(draw.rho, 0.0),
            }
        }

        if eta > 0.0 {
            let d = draw.d_w + draw.d_v;
            let mut sum_k = 0.0;
            for j in 1..=t {
                let arg = 2.0 * draw.c * d * n * (j * j) as f64;
                let raw = (arg.ln() / (1.0 / draw.lambda).ln()).ceil().max(0.0) as usize;
                sum_k += raw.max(draw.k_p).min(j) as f64;
            }
            let tail: f64 = (draw.k_p.max(1)..=t).map(|j| 1.0 / (j * j) as f64).sum();
            let expect = g * g * eta
                + d * d / (2.0 * t as f64 * eta)
                + (2.0 * g * draw.k_p as f64 * d + 12.0 * g * g * eta * sum_k + g * tail) / t as f64;
            assert!(close(sgda_opt_bound(&inp).unwrap(), expect));
        }
    }
}
