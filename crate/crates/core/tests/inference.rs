use patree::experiment::{run_mc, run_projected_bootstrap, Centering, Estimator, McConfig, ProjectionConfig};
use patree::inference::{bootstrap_variance, wald_affinity};
use patree::{grow, PaFamily};

fn mc_config() -> McConfig {
    McConfig {
        family: PaFamily::power_offset(),
        theta0: vec![0.0, 2.0 / 3.0],
        n: 2000,
        reps: 12,
        seed: 99,
        estimators: vec![Estimator::Mle, Estimator::Pmle, Estimator::Ee],
        with_reference: false,
    }
}

#[test]
fn monte_carlo_does_not_depend_on_worker_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_mc(&mc_config()).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.estimates, y.estimates);
        assert_eq!(x.rescaled_cov, y.rescaled_cov);
    }
}

#[test]
fn bootstrap_variance_is_positive_definite() {
    let fam = PaFamily::power_offset();
    let boot = bootstrap_variance(&fam, &[0.0, 2.0 / 3.0], 2000, 30, 5).unwrap();
    let s = &boot.sigma_tilde;
    assert!(s[(0, 0)] > 0.0 && s[(0, 0)] * s[(1, 1)] > s[(0, 1)].powi(2), "{s}");
}

#[test]
fn projected_bootstrap_smoke() {
    let cfg = ProjectionConfig {
        family: PaFamily::power_offset(),
        theta0: vec![0.0, 2.0 / 3.0],
        n: 1000,
        m: 1000,
        s: 2,
        reps: 3,
        seed: 2,
        centering: Centering::Theta0,
    };
    let out = run_projected_bootstrap(&cfg).unwrap();
    assert_eq!(out.len(), 3);
    assert!(out.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn wald_rejects_linear_preference_only_against_strong_evidence() {
    let fam = PaFamily::power_offset();
    let (h, _) = grow(&fam, &[4.0, 0.8], 50_000, 3).unwrap();
    let fit = patree::estimate::fit_mle(&fam, &h, None).unwrap();
    let w = wald_affinity(&fam, fit.theta_hat[0], fit.theta_hat[1], 50_000, 0.05).unwrap();
    assert!(w.reject, "{w:?}");
    assert!(wald_affinity(&fam, 1.0, 1.0, 50_000, 0.05)
        .map(|w| !w.reject)
        .unwrap_or(true));
}
