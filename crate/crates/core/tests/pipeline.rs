use ringshift::geometry::{coord_drift, phase_range, sinc, GeometricTransform, PerturbationBounds};
use ringshift::io::fmt_f64;
use ringshift::pipeline::*;
use ringshift::surrogate::Surrogate;
use ringshift::watermark::sample_key;
use ringshift::ImageGrid;

fn small(translations: Vec<f64>, rotations: Vec<f64>, trials: usize) -> TrialConfig {
    TrialConfig {
        latent_width: 32,
        latent_height: 32,
        r_max: 8.0,
        translations_px: translations,
        rotations_deg: rotations,
        trials,
        seed: 3,
        ..TrialConfig::default()
    }
}

#[test]
fn empty_grid_gives_header_only_csv() {
    let cfg = small(vec![0.0], vec![0.0], 2);
    let mut report = run_detection_sweep(&cfg).unwrap();
    report.cells.clear();
    assert_eq!(sweep_csv(&report), format!("{SWEEP_CSV_HEADER}\n"));
}

#[test]
fn one_cell_gives_two_line_csv() {
    let report = run_detection_sweep(&small(vec![4.0], vec![0.0], 4)).unwrap();
    let csv = sweep_csv(&report);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1].split(',').count(), SWEEP_CSV_HEADER.split(',').count());
}

#[test]
fn svg_has_one_polyline_per_series() {
    let report = run_detection_sweep(&small(vec![0.0, 2.0, 8.0], vec![0.0], 4)).unwrap();
    let svg = sweep_svg(&report);
    assert_eq!(svg.matches("<polyline").count(), 4);
    for series in ["mean_d", "tpr_at_fpr", "corr_comp_ratio", "predicted_sinc"] {
        assert_eq!(svg.matches(&format!("data-series=\"{series}\"")).count(), 1, "{series}");
    }
    assert_eq!(svg, sweep_svg(&report));
}

#[test]
fn emit_writes_requested_files() {
    let report = run_detection_sweep(&small(vec![0.0, 4.0], vec![0.0], 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, ReportFormat::CsvAndSvg, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    assert_eq!(std::fs::read_to_string(&files[0]).unwrap(), sweep_csv(&report));
    let err = emit_report(&report, ReportFormat::Csv, dir.path().join("missing")).unwrap_err();
    assert!(err.to_string().contains("missing"), "{err}");
}

#[test]
fn zero_attack_distance_is_round_trip_loss() {
    let cfg = small(vec![0.0], vec![0.0], 8);
    let report = run_detection_sweep(&cfg).unwrap();
    let cell = &report.cells[0];
    let mask = cfg.mask().unwrap();
    let eta = sample_key(&mask, cfg.key_seed()).canonical_values(&mask);
    let sur = Surrogate::new(cfg.surrogate, cfg.latent_height, cfg.latent_width).unwrap();
    let h = sur.round_trip_transfer().unwrap();
    let (cy, cx) = (cfg.latent_height / 2, cfg.latent_width / 2);
    let oracle: f64 = mask
        .canonical_coords()
        .zip(&eta)
        .map(|((u, v), e)| {
            let i = (cy as i64 + v) as usize * cfg.latent_width + (cx as i64 + u) as usize;
            (e - h[i] * e).abs()
        })
        .sum::<f64>()
        / eta.len() as f64;
    assert!((cell.mean_distance - oracle).abs() < 1e-9, "{} vs {oracle}", cell.mean_distance);
    assert_eq!(cell.tpr, 1.0);
    assert_eq!(cell.bit_accuracy, 1.0);
}

#[test]
fn prediction_columns_recomputable_from_csv() {
    let cfg = small(vec![0.0, 3.0], vec![0.0, 2.5], 2);
    let csv = sweep_csv(&run_detection_sweep(&cfg).unwrap());
    let header: Vec<&str> = SWEEP_CSV_HEADER.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let delta: f64 = f[col("translation_px")].parse().unwrap();
        let theta: f64 = f[col("rotation_deg")].parse().unwrap();
        let range = phase_range(cfg.r_max, delta.abs(), cfg.surrogate.stride, cfg.latent_width);
        assert_eq!(f[col("phase_range_rad")], fmt_f64(range));
        assert_eq!(f[col("coord_drift")], fmt_f64(coord_drift(cfg.r_max, theta.to_radians().abs())));
        assert_eq!(f[col("predicted_attenuation")], fmt_f64(sinc(range / 2.0)));
    }
}

#[test]
fn cells_follow_grid_order_and_counts() {
    let cfg = small(vec![0.0, 2.0], vec![0.0, 1.0, 2.0], 3);
    let report = run_detection_sweep(&cfg).unwrap();
    assert_eq!(report.cells.len(), 6);
    for (i, c) in report.cells.iter().enumerate() {
        assert_eq!(c.trials, 3);
        assert_eq!(c.records.len(), 3);
        assert_eq!(c.transform.translation_x_px, cfg.translations_px[i / 3]);
        assert_eq!(c.transform.rotation_deg, cfg.rotations_deg[i % 3]);
    }
}

#[test]
fn invalid_configs_rejected() {
    for cfg in [
        small(vec![], vec![0.0], 2),
        small(vec![0.0], vec![0.0], 0),
        small(vec![0.0], vec![90.0], 2),
        TrialConfig {
            threshold: 0.0,
            ..small(vec![0.0], vec![0.0], 2)
        },
    ] {
        assert!(run_detection_sweep(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn config_json_uses_unit_names() {
    let json = serde_json::to_string(&TrialConfig::default()).unwrap();
    for key in ["translations_px", "rotations_deg", "sigma_px", "align_radius_px"] {
        assert!(json.contains(key), "{key}");
    }
    let back: TrialConfig = serde_json::from_str(r#"{"trials": 7, "translations_px": [1.5]}"#).unwrap();
    assert_eq!(back.trials, 7);
    assert_eq!(back.translations_px, vec![1.5]);
}

#[test]
fn sub_stride_phase_ramp_agrees() {
    let cfg = small(vec![0.0], vec![0.0], 1);
    for d in [1.0, 3.0] {
        let m = phase_ramp_error(&cfg, d, 4).unwrap();
        assert!(m.mean_abs_error_rad < 0.15, "{m:?}");
        assert!(m.coefficients > 0);
    }
}

fn removal_cfg() -> RemovalConfig {
    let mut cfg = RemovalConfig::default();
    cfg.fit.iterations = 400;
    cfg.fit.adam.learning_rate = 2e-3;
    cfg
}

#[test]
fn removal_zero_bounds_matches_control() {
    let img = ringshift::testimage::natural(128, 128, 4).unwrap();
    let cfg = RemovalConfig {
        bounds: PerturbationBounds::zero(),
        ..removal_cfg()
    };
    let session = RemovalSession::new(&img, &cfg, 1).unwrap();
    let (report, _) = session.perturb(&session.sample(0).unwrap()).unwrap();
    assert!(report.transform.is_identity());
    let noise = (report.control.distance - report.pre.distance).abs();
    assert!((report.post.distance - report.pre.distance).abs() <= 2.0 * noise + 1e-12);
    assert_eq!(report.method, REMOVAL_METHOD);
    assert_eq!(report.loss_trace.len(), 400);

    let (moved, _) = session.perturb(&GeometricTransform::translation(8.0, 0.0)).unwrap();
    assert!(moved.aligned_psnr_db >= moved.raw_psnr_db + 5.0, "{moved:?}");
    assert_eq!(moved.recovered_shift, (8, 0));
    assert!(moved.post.distance > moved.control.distance);
}

#[test]
fn removal_pipeline_reads_image_file() {
    let img = ringshift::testimage::natural(64, 64, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.png");
    img.write_png(&path).unwrap();
    let mut cfg = removal_cfg();
    cfg.fit.iterations = 20;
    cfg.r_max = 3.0;
    let (report, out) = run_removal_pipeline(&path, &cfg, 2).unwrap();
    assert_eq!(out.shape(), (3, 64, 64));
    assert!(cfg.bounds.contains(&report.transform));
    assert!(run_removal_pipeline(dir.path().join("nope.png"), &cfg, 2).is_err());
    let odd = ImageGrid::zeros(3, 60, 64).unwrap();
    assert!(run_removal(&odd, &cfg, 2).is_err());
}

#[test]
fn distance_grows_and_tpr_falls_with_translation() {
    let cfg = TrialConfig {
        translations_px: vec![0.0, 2.0, 4.0, 8.0, 16.0],
        trials: 200,
        seed: 11,
        ..TrialConfig::default()
    };
    let cells = run_detection_sweep(&cfg).unwrap().cells;
    for pair in cells.windows(2) {
        assert!(pair[1].mean_distance >= pair[0].mean_distance, "{} < {}", pair[1].mean_distance, pair[0].mean_distance);
        assert!(pair[1].tpr <= pair[0].tpr);
    }
}
