use std::fs;

use nalgebra::DMatrix;
use proptest::prelude::*;
use serde_json::json;
use spatialgl::harness::simulate_problem;
use spatialgl::io::{load_matrix, standardize_phenotypes, write_matrix, ExpectedShape};
use spatialgl::pipeline::{fit_vb, prepare, regularization_path, FitSettings};
use spatialgl::report::{default_names, emit_results, RunResults, SummaryTable};
use spatialgl::selection::{fdr_threshold, CoefficientPosterior};
use spatialgl::vb::VBConfig;
use spatialgl::{Dataset, SpatialStructure};

proptest! {
    #[test]
    fn matrices_survive_a_csv_round_trip(
        rows in 1usize..8,
        cols in 1usize..6,
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 48),
    ) {
        let m = DMatrix::from_fn(rows, cols, |i, j| values[i * cols + j]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix(&path, &m, None).unwrap();
        let back = load_matrix(&path, ExpectedShape::exact(rows, cols), false).unwrap();
        for (a, b) in m.iter().zip(back.data.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn header_names_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    let names = vec!["rs1".to_string(), "rs2".to_string()];
    let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 1.0]);
    write_matrix(&path, &m, Some(&names)).unwrap();
    let back = load_matrix(&path, ExpectedShape::any(), true).unwrap();
    assert_eq!(back.names.unwrap(), names);
    assert_eq!(back.data, m);
}

#[test]
fn emitted_files_cover_the_path_and_back_transform_exactly() {
    let sim = simulate_problem(50, 4, 5, 0.6, 0.5, 20.0, 4).unwrap();
    let (y, t) = standardize_phenotypes(&sim.dataset.y).unwrap();
    let ds = Dataset::new(y, sim.dataset.x.clone()).unwrap();
    let prep = prepare(&ds, &FitSettings::default()).unwrap();
    let spatial = SpatialStructure::new(sim.a.clone(), 0.95).unwrap();
    let vb = VBConfig::default();
    let post = fit_vb(&ds, &spatial, &prep.hyper, &prep.ridge.w_ridge, &vb).unwrap();
    let grid = [1.0, 10.0, 100.0];
    let path = regularization_path(
        &ds,
        &spatial,
        &grid,
        &prep.hyper,
        &prep.ridge.w_ridge,
        &vb,
        0.044,
        0.05,
    )
    .unwrap();
    let tail = post.tail_probabilities(0.044).unwrap();
    let selection = fdr_threshold(&tail, 0.05).unwrap();
    let snps = default_names("snp", 5);
    let phs = default_names("ph", 4);
    let summary = SummaryTable::build(
        &snps,
        &phs,
        &post.posterior_sd(),
        &post.credible_intervals(0.95).unwrap(),
        &tail,
        &selection,
    )
    .unwrap();
    let n_selected = selection.selected.len();
    let results = RunResults {
        snp_names: snps,
        phenotype_names: phs,
        summary: summary.clone(),
        selection,
        standardization: Some(t.clone()),
        waic: None,
        elbo_trace: post.elbo_trace.clone(),
        path,
        chain_stats: vec![],
        details: json!({"note": "test"}),
    };
    let dir = tempfile::tempdir().unwrap();
    emit_results(&results, dir.path()).unwrap();

    let read = |name: &str| fs::read_to_string(dir.path().join(name)).unwrap();
    assert_eq!(
        read("regularization_path.csv").lines().count(),
        1 + 5 * 4 * grid.len()
    );
    assert_eq!(
        read("selection_counts.csv").lines().count(),
        1 + 4 * grid.len()
    );
    assert_eq!(read("selection.csv").lines().count(), 1 + n_selected);
    assert_eq!(
        read("elbo_trace.csv").lines().count(),
        1 + post.elbo_trace.len()
    );
    let report: serde_json::Value = serde_json::from_str(&read("report.json")).unwrap();
    assert_eq!(report["note"], "test");
    assert_eq!(report["n_selected"], n_selected);

    let original = SummaryTable::read_csv(&dir.path().join("summary_original_scale.csv")).unwrap();
    for (k, (o, s)) in original.rows.iter().zip(&summary.rows).enumerate() {
        let sd = t.sds[k % 4];
        assert_eq!(o.mean, s.mean * sd);
        assert_eq!(o.sd, s.sd * sd);
        assert_eq!((o.lo, o.hi), (s.lo * sd, s.hi * sd));
        assert_eq!(o.tail_prob, s.tail_prob);
        assert_eq!(o.selected, s.selected);
    }

    let again = tempfile::tempdir().unwrap();
    emit_results(&results, again.path()).unwrap();
    for e in fs::read_dir(dir.path()).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(
            fs::read(dir.path().join(&name)).unwrap(),
            fs::read(again.path().join(&name)).unwrap()
        );
    }
}
