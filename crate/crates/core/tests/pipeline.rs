use illposed::experiments::{read_records, Format};
use illposed::{fit, fit_cv_pipeline, fit_nuisances, Dataset, Design, FitConfig, Method, PipelineConfig, SeriesNpivDgp, Truth};

fn dgp() -> SeriesNpivDgp {
    SeriesNpivDgp::with_source(vec![0.3, 0.15, 0.075], 2.0, &[1.0, 2.0, 2.0, 2.0], 0.3, 0.5).unwrap()
}

#[test]
fn single_and_double_precision_agree() {
    let d = dgp();
    let data = d.sample(3000, 1).unwrap();
    let basis = d.basis();
    let design64 = Design::from_dataset(&data, &basis, &basis).unwrap();
    let nuis64 = fit_nuisances(&design64, None).unwrap();
    let h64 = fit(&design64, &nuis64, &FitConfig::new(0.05, Method::Debiased)).unwrap().h_hat;

    let data32: Dataset<f32> = data.cast();
    let design32 = Design::from_dataset(&data32, &basis, &basis).unwrap();
    let nuis32 = fit_nuisances(&design32, None).unwrap();
    let h32 = fit(&design32, &nuis32, &FitConfig::new(0.05f32, Method::Debiased)).unwrap().h_hat;
    for (a, b) in h64.coeffs().iter().zip(h32.coeffs().iter()) {
        assert!((a - *b as f64).abs() < 1e-3, "{a} vs {b}");
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let data = dgp().sample(200, 2).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back: Dataset<f64> = Dataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.data(), data.data());
    assert_eq!(back.columns(), data.columns());
}

#[test]
fn golden_records_read_back() {
    let text = include_str!("fixtures/sweep_records.csv");
    let records = read_records(text.as_bytes(), Format::Csv).unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(records[1].method, Method::Debiased);
    assert_eq!(records[2].runtime_ms, 17);
}

#[test]
fn cv_report_carries_oracle_errors() {
    let d = dgp();
    let data = d.sample(6000, 3).unwrap();
    let mut cfg = PipelineConfig::new(d.basis(), d.basis());
    cfg.seed = 8;
    let out = fit_cv_pipeline(&data, &cfg, Some(&d as &dyn Truth)).unwrap();
    let oracle = out.report.oracle_errors.as_ref().unwrap();
    assert_eq!(oracle.source.len(), out.report.grid.len());
    let picked = oracle.projected[out.report.selected_index].unwrap();
    assert!((picked - d.projected_error(&out.selected).unwrap()).abs() < 1e-15);
    assert!(d.source_error(&out.selected).unwrap() < d.source_error(&illposed::FunctionHandle::zeros(d.basis())).unwrap());
}
