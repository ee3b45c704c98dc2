use bohmlab_core::pipeline::commands;
use bohmlab_core::pipeline::RunConfig;

#[test]
fn noiseless_residual_pictures_coincide() {
    let cfg = RunConfig::noiseless();
    let ms = commands::simulate_measurements(&cfg).unwrap();
    let wv = commands::invert_measurements(&cfg, &ms).unwrap();
    let rep = commands::residuals(&cfg, &ms.fringe_counts(), &wv).unwrap();
    let (mut diff2, mut norm2, mut compared) = (0.0, 0.0, 0);
    for (e, n) in rep.r_e.iter().zip(&rep.r_n) {
        assert_eq!(e.is_nan(), n.is_nan());
        if e.is_finite() {
            compared += 1;
            diff2 += (e - n) * (e - n);
            norm2 += e * e;
        }
    }
    assert!(compared > 7000, "{compared}");
    let rel = (diff2 / norm2).sqrt();
    assert!(rel < 1e-10, "relative grid difference {rel:e}");
}

#[test]
fn noisy_run_masks_dark_fringes_only() {
    let cfg = RunConfig::default();
    let ms = commands::simulate_measurements(&cfg).unwrap();
    let wv = commands::invert_measurements(&cfg, &ms).unwrap();
    assert!(wv.unmasked_count() > wv.grid.len() / 2);
    let rep = commands::residuals(&cfg, &ms.fringe_counts(), &wv).unwrap();
    assert!(rep.relativistic.count > 1000 && rep.nonrelativistic.count > 1000);
}
