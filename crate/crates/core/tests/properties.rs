use proptest::prelude::*;

use bayes_joinpoint::model::{
    equally_spaced_taus, fisher_scale_matrix, in_omega, log_prior_model_bayes1,
    log_prior_model_bayes2, omega_slice, ModelState,
};
use bayes_joinpoint::summaries::quantile;
use bayes_joinpoint::{solve_breakpoint, SeriesData, TimeGrid};

fn grid_strategy() -> impl Strategy<Value = Vec<f64>> {
    (5usize..50, -200.0f64..2100.0)
        .prop_flat_map(|(n, start)| (Just(start), prop::collection::vec(0.2f64..3.0, n - 1)))
        .prop_map(|(start, steps)| {
            let mut t = vec![start];
            for s in steps {
                t.push(t.last().unwrap() + s);
            }
            t
        })
}

fn all_patterns(j: usize) -> Vec<Vec<bool>> {
    (0..1usize << j)
        .map(|m| (0..j).map(|i| m >> i & 1 == 1).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn basis_satisfies_constraints(times in grid_strategy(), frac in 0.05f64..0.95) {
        let (t1, tn) = (times[0], *times.last().unwrap());
        let tau = t1 + frac * (tn - t1);
        let grid = TimeGrid::new(times.clone()).unwrap();
        let b = solve_breakpoint(&grid, tau).unwrap();
        let (a0, b0, a1, b1) = b.coefficients();
        let scale = times.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!(((a0 + b0 * tau) - (a1 + b1 * tau)).abs() < 1e-9);
        prop_assert!((b.eval(tau) - 1.0).abs() < 1e-10);
        let v = b.eval_grid(&grid);
        prop_assert!(v.iter().sum::<f64>().abs() < 1e-9);
        prop_assert!(v.iter().zip(&times).map(|(v, t)| v * t).sum::<f64>().abs() / scale < 1e-9);
    }

    #[test]
    fn basis_is_shift_invariant(times in grid_strategy(), frac in 0.1f64..0.9, shift in -500.0f64..500.0) {
        let tau = times[0] + frac * (times.last().unwrap() - times[0]);
        let a = solve_breakpoint(&TimeGrid::new(times.clone()).unwrap(), tau).unwrap();
        let moved: Vec<f64> = times.iter().map(|t| t + shift).collect();
        let b = solve_breakpoint(&TimeGrid::new(moved.clone()).unwrap(), tau + shift).unwrap();
        for (x, y) in times.iter().zip(&moved) {
            prop_assert!((a.eval(*x) - b.eval(*y)).abs() < 1e-8);
        }
    }

    #[test]
    fn model_priors_sum_to_one(j in 2usize..=10) {
        let pats = all_patterns(j);
        let s1: f64 = pats.iter().map(|d| log_prior_model_bayes1(d).exp()).sum();
        let s2: f64 = pats.iter().map(|d| log_prior_model_bayes2(d).unwrap().exp()).sum();
        prop_assert!((s1 - 1.0).abs() < 1e-12);
        prop_assert!((s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bayes1_is_exchangeable(j in 2usize..=10, m in any::<u64>(), rot in 0usize..10) {
        let d: Vec<bool> = (0..j).map(|i| m >> i & 1 == 1).collect();
        let mut r = d.clone();
        r.rotate_left(rot % j);
        prop_assert_eq!(log_prior_model_bayes1(&d), log_prior_model_bayes1(&r));
        prop_assert_eq!(log_prior_model_bayes2(&d).unwrap(), log_prior_model_bayes2(&r).unwrap());
    }

    #[test]
    fn scale_matrix_is_spd(
        j in 1usize..=4,
        us in prop::collection::vec(0.0f64..1.0, 4),
        alpha in -9.0f64..-6.0,
        beta0 in -0.05f64..0.05,
        mask in 0u32..16,
        seed in any::<u32>(),
    ) {
        let years: Vec<f64> = (0..28).map(|i| 1980.0 + i as f64).collect();
        let counts: Vec<u64> = (0..28).map(|i| 40 + (seed as u64 >> (i % 16)) % 40).collect();
        let data = SeriesData::from_years(&years, counts, vec![285_000.0; 28]).unwrap();
        let gap = 2.0;
        let l = years[27] - years[0] - (j as f64 + 1.0) * gap;
        let mut u: Vec<f64> = us[..j].iter().map(|x| x * l).collect();
        u.sort_by(f64::total_cmp);
        let tau: Vec<f64> = u.iter().enumerate().map(|(i, x)| years[0] + (i as f64 + 1.0) * gap + x).collect();
        prop_assume!(in_omega(&tau, data.grid(), gap));
        let state = ModelState {
            alpha,
            beta0,
            beta: vec![0.0; j],
            tau,
            delta: (0..j).map(|i| mask >> i & 1 == 1).collect(),
            gamma: 1.0,
        };
        let sigma = fisher_scale_matrix(&state, &data).unwrap();
        prop_assert!((&sigma - sigma.transpose()).amax() <= 1e-12 * sigma.amax());
        prop_assert!(sigma.cholesky().is_some());
    }

    #[test]
    fn equally_spaced_points_lie_in_omega(n in 10usize..60, jstar in 1usize..4) {
        let grid = TimeGrid::regular(0.0, n).unwrap();
        let gap = ((n as f64 - 1.0) / (jstar as f64 + 1.0) - 0.5).min(2.0);
        prop_assume!(gap > 0.0);
        let taus = equally_spaced_taus(&grid, jstar);
        prop_assert!(in_omega(&taus, &grid, gap));
        for k in 0..jstar {
            let (lo, hi) = omega_slice(&taus, k, &grid, gap);
            prop_assert!(lo <= taus[k] && taus[k] <= hi);
        }
    }

    #[test]
    fn quantiles_are_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..200), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(quantile(&v, lo) <= quantile(&v, hi));
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= quantile(&v, lo) && quantile(&v, hi) <= max);
    }
}
