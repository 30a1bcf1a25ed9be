use zofd_core::smoothing::{mse_compare_with, run_oracle, smoothed_grad_norm_sq, OracleGrid, TestFunction};
use zofd_core::{forward_fd, DirectionMatrix, EllSpec, GradEstimate, Objective, Result, RngStream};

/// Surrogate with the `d/ℓ` factor dropped.
fn unscaled(f: &dyn Objective, x: &[f64], h: f64, p: &DirectionMatrix, fx: Option<f64>) -> Result<GradEstimate> {
    let mut est = forward_fd(f, x, h, p, fx)?;
    let k = p.ell() as f64 / p.d() as f64;
    est.g.iter_mut().for_each(|v| *v *= k);
    Ok(est)
}

fn small_grid() -> OracleGrid {
    OracleGrid {
        dims: vec![4, 6],
        ells: vec![EllSpec::Count(1), EllSpec::Count(2), EllSpec::Fraction(1, 2)],
        hs: vec![0.1],
        functions: vec![TestFunction::Linear, TestFunction::Quadratic],
        n_samples: 20_000,
        seed: 3,
    }
}

#[test]
fn production_surrogate_passes_small_grid() {
    let out = run_oracle(&small_grid(), zofd_core::smoothing::production_surrogate()).unwrap();
    assert!(out.all_pass, "{:#?}", out.failures().collect::<Vec<_>>());
    assert!(out.cells.iter().filter(|c| c.report.ell == 1).all(|c| c.report.predicted_gap == 0.0));
}

#[test]
fn dropping_scale_factor_breaks_gap_identity() {
    let out = run_oracle(&small_grid(), unscaled).unwrap();
    assert!(!out.all_pass);
    assert!(out.cells.iter().any(|c| c.report.ell > 1 && !c.report.gap_identity_holds));
}

#[test]
fn shared_reference_is_reused_across_ell() {
    let d = 6;
    let f = TestFunction::Quadratic.objective(d);
    let x = TestFunction::Quadratic.point(d);
    let s = RngStream::new(9, 0);
    let reference = smoothed_grad_norm_sq(&f, &x, 0.1, 20_000, &s.derive("smoothed_grad")).unwrap();
    for ell in 1..=d {
        let rep = mse_compare_with(
            &f,
            &x,
            0.1,
            ell,
            20_000,
            &s.derive(&format!("ell{ell}")),
            zofd_core::smoothing::production_surrogate(),
            &reference,
        )
        .unwrap();
        assert_eq!(rep.grad_smooth_norm_sq, reference.value);
        let coef = (ell as f64 - 1.0) / ell as f64;
        assert_eq!(rep.predicted_gap, coef * reference.value);
        assert!(rep.gap_identity_holds, "ell={ell}: {rep:?}");
    }
}

#[test]
fn report_json_round_trip() {
    let out = run_oracle(&OracleGrid { dims: vec![4], hs: vec![0.1], n_samples: 2_000, ..small_grid() },
        zofd_core::smoothing::production_surrogate()).unwrap();
    let text = serde_json::to_string(&out).unwrap();
    let back: zofd_core::smoothing::OracleOutcome = serde_json::from_str(&text).unwrap();
    assert_eq!(back, out);
}
