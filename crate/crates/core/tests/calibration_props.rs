use cascadekit_core::calibration::{
    confidence, fit_temperature, logitnorm_grad, logitnorm_loss, mean_nll, sequence_confidence,
    FitOptions, LogitNormParams,
};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

/// Independent cross-entropy: direct log-sum-exp, no shared helpers.
fn reference_cross_entropy(z: &[f64], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

fn logits_strategy(q: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, q).prop_filter("non-degenerate norm", |l| {
        l.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.5
    })
}

#[test]
fn fit_matches_analytic_optimum_and_grid_oracle() {
    let l = [2.0, 0.0];
    let val: Vec<(&[f64], usize)> = vec![(&l, 0), (&l, 0), (&l, 1)];
    let fitted = fit_temperature("m", &val, &FitOptions::default()).unwrap();

    // Grid oracle over T at step 1e-4.
    let mut best = (f64::INFINITY, 0.0);
    let mut t = 0.05;
    while t <= 20.0 {
        let nll = mean_nll(&val, t).unwrap();
        if nll < best.0 {
            best = (nll, t);
        }
        t += 1e-4;
    }
    let analytic = 2.0 / std::f64::consts::LN_2;
    assert!((best.1 - analytic).abs() < 2e-4, "grid {} vs {analytic}", best.1);
    assert!((fitted.value - best.1).abs() < 1e-3, "fit {} vs grid {}", fitted.value, best.1);
    assert!((fitted.value - analytic).abs() < 1e-3);
    assert!(!fitted.pinned);
    assert_eq!(fitted.fit_size, 3);
}

#[test]
fn all_correct_fixture_is_monotone_on_grid() {
    // NLL keeps falling as T shrinks, so the fit hits the lower bound.
    let l = [5.0, 0.0];
    let val: Vec<(&[f64], usize)> = vec![(&l, 0); 3];
    let grid: Vec<f64> = (0..200).map(|i| 0.05 + i as f64 * 0.1).collect();
    for w in grid.windows(2) {
        assert!(mean_nll(&val, w[0]).unwrap() <= mean_nll(&val, w[1]).unwrap());
    }
    let t = fit_temperature("m", &val, &FitOptions::default()).unwrap();
    assert!(t.pinned);
    assert_eq!(t.value, 0.05);
}

#[test]
fn logitnorm_gradient_matches_finite_differences() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let taus = [0.01, 0.04, 1.0];
    let qs = [2usize, 3, 10];
    for k in 0..200 {
        let (tau, q) = (taus[k % 3], qs[(k / 3) % 3]);
        let l = logits_strategy(q).new_tree(&mut runner).unwrap().current();
        let y = k % q;
        let p = LogitNormParams::with_tau(tau);
        let analytic = logitnorm_grad(&l, y, &p).unwrap();
        let numeric = central_difference(|x| logitnorm_loss(x, y, &p).unwrap(), &l, 1e-5);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |a, b| a.max(b.abs()))
            .max(1e-8);
        let err = analytic
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
            / scale;
        assert!(err < 1e-6, "tau {tau} q {q} l {l:?}: rel err {err}");
    }
}

proptest! {
    #[test]
    fn logitnorm_is_cross_entropy_of_rescaled_logits(
        l in logits_strategy(4), y in 0usize..4, tau in 0.01f64..2.0
    ) {
        let p = LogitNormParams::with_tau(tau);
        let norm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z: Vec<f64> = l.iter().map(|v| v / (tau * norm)).collect();
        let expected = reference_cross_entropy(&z, y);
        let got = logitnorm_loss(&l, y, &p).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    #[test]
    fn logitnorm_scale_invariance(l in logits_strategy(5), y in 0usize..5, c in 1e-3f64..1e3) {
        let p = LogitNormParams::default();
        let scaled: Vec<f64> = l.iter().map(|v| v * c).collect();
        let a = logitnorm_loss(&l, y, &p).unwrap();
        let b = logitnorm_loss(&scaled, y, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn uniform_logits_give_ln_q(q in 2usize..20, v in -5.0f64..5.0, tau in 0.01f64..3.0) {
        prop_assume!(v.abs() > 1e-3);
        let l = vec![v; q];
        let loss = logitnorm_loss(&l, 0, &LogitNormParams::with_tau(tau)).unwrap();
        prop_assert!((loss - (q as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_radially_flat(l in logits_strategy(6), y in 0usize..6, tau in 0.01f64..1.0) {
        let g = logitnorm_grad(&l, y, &LogitNormParams::with_tau(tau)).unwrap();
        let dot: f64 = l.iter().zip(&g).map(|(a, b)| a * b).sum();
        prop_assert!(dot.abs() < 1e-10, "l.g = {dot}");
    }

    #[test]
    fn temperature_never_changes_the_argmax(
        l in prop::collection::vec(-50.0f64..50.0, 2..12), t in 0.05f64..20.0
    ) {
        prop_assert_eq!(confidence(&l, t).unwrap().1, confidence(&l, 1.0).unwrap().1);
    }

    #[test]
    fn fit_is_no_worse_than_identity(
        rows in prop::collection::vec((prop::collection::vec(-6.0f64..6.0, 3), 0usize..3), 1..40)
    ) {
        let val: Vec<(&[f64], usize)> = rows.iter().map(|(l, y)| (l.as_slice(), *y)).collect();
        let opts = FitOptions::default();
        let t = fit_temperature("m", &val, &opts).unwrap();
        let at_one = mean_nll(&val, 1.0).unwrap();
        prop_assert!(t.fit_nll <= at_one + opts.tol);
        prop_assert!(t.value >= opts.t_min && t.value <= opts.t_max);
        prop_assert!((mean_nll(&val, t.value).unwrap() - t.fit_nll).abs() < 1e-12);
    }

    #[test]
    fn sequence_entropy_falls_as_relevance_rises(
        probs in prop::collection::vec(1e-6f64..=1.0, 1..10),
        rel in prop::collection::vec(0.0f64..=1.0, 10),
        i in 0usize..10, bump in 0.0f64..=1.0
    ) {
        let r = &rel[..probs.len()];
        let i = i % probs.len();
        let mut r2 = r.to_vec();
        r2[i] = (r2[i] + bump).min(1.0);
        let a = sequence_confidence(&probs, r).unwrap().entropy;
        let b = sequence_confidence(&probs, &r2).unwrap().entropy;
        prop_assert!(b <= a + 1e-15);
        prop_assert!(a >= 0.0);
    }
}
