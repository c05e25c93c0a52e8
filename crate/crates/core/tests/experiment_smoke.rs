//! End-to-end orchestration smoke test at desk scale: train all stages on a
//! tiny synthetic corpus, evaluate, and check determinism plus the
//! archive-rerun contract.

use midword_core::archive::ModelArchive;
use midword_core::config::PipelineConfig;
use midword_core::experiment::{evaluate, run_experiment, synth_corpora};

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.corpus.words = 6;
    cfg.corpus.per_word_learn = 2;
    cfg.corpus.per_word_test = 2;
    cfg.corpus.height = 64;
    cfg.corpus.seed = 11;
    cfg.features.sift_scales = vec![12, 16, 24];
    cfg.features.sift_step = 2;
    cfg.features.pca_dim = 24;
    cfg.features.baseline_pca_dim = 20;
    cfg.features.pca_sample_per_image = 400;
    cfg.codebook.block_gaussians = 3;
    cfg.codebook.em_iters = 8;
    cfg.codebook.em_restarts = 1;
    cfg.codebook.sample_per_image = 300;
    cfg.supervision.blocks_per_image = 25;
    cfg.supervision.block_sizes = vec![16, 24];
    cfg.embedding.k = 12;
    cfg.midlevel.block_sizes = vec![16, 24];
    cfg.global.gaussians = 4;
    cfg.global.em_iters = 8;
    cfg.global.em_restarts = 1;
    cfg.global.sample_per_image = 200;
    cfg.attributes.levels = vec![1, 2];
    cfg.subspace.out_dim = 8;
    cfg.experiment.seed = 5;
    cfg.experiment.crs = vec![2, 1];
    cfg.experiment.fv_sources = vec![
        "supervised-cr2".into(),
        "supervised-cr1".into(),
        "unsupervised".into(),
        "sift".into(),
    ];
    cfg.experiment.attribute_sources = vec!["supervised-cr2".into(), "concat".into()];
    cfg
}

#[test]
fn experiment_runs_and_is_deterministic() {
    let cfg = tiny_config();
    let (report, archive) = run_experiment(&cfg).unwrap();

    // every configured row is present with sane values
    assert_eq!(report.rows.len(), 4 + 2);
    for row in &report.rows {
        assert!((0.0..=1.0).contains(&row.qbe_map), "{row:?}");
        assert!((0.0..=1.0).contains(&row.qbe_p1));
        assert!(row.qbe_retained > 0);
        if row.space == "subspace" {
            assert!(row.qbs_map.is_some());
            assert!(row.recognition_p1.is_some());
        }
    }
    // identical config + seed reproduces the numbers exactly
    let (report2, _) = run_experiment(&cfg).unwrap();
    assert_eq!(report.corpus.hash, report2.corpus.hash);
    for (a, b) in report.rows.iter().zip(report2.rows.iter()) {
        assert_eq!(a.qbe_map, b.qbe_map);
        assert_eq!(a.qbe_p1, b.qbe_p1);
        assert_eq!(a.qbs_map, b.qbs_map);
        assert_eq!(a.recognition_p1, b.recognition_p1);
    }

    // a rerun from the saved archive reproduces evaluation numbers exactly
    let dir = tempfile::tempdir().unwrap();
    archive.save(dir.path()).unwrap();
    let loaded = ModelArchive::load(dir.path()).unwrap();
    let (_, test) = synth_corpora(&cfg).unwrap();
    let rows = evaluate(&cfg, &test, &loaded, 1.0).unwrap();
    assert_eq!(rows.len(), report.rows.len());
    for (a, b) in report.rows.iter().zip(rows.iter()) {
        assert_eq!(a.qbe_map, b.qbe_map, "{} {}", a.source, a.space);
        assert_eq!(a.qbe_p1, b.qbe_p1);
        assert_eq!(a.qbs_map, b.qbs_map);
        assert_eq!(a.recognition_p1, b.recognition_p1);
    }

    // expected archive components exist
    for name in [
        "pca_block",
        "pca_baseline",
        "gmm_block",
        "embedding_sup_cr2",
        "embedding_sup_cr1",
        "embedding_unsup",
        "gmm_global_sup_cr2",
        "gmm_global_sift",
        "attributes_sup_cr2",
        "attributes_concat",
        "subspace_sup_cr2",
        "subspace_concat",
    ] {
        assert!(archive.has(name), "missing component {name}");
    }
}

#[test]
fn learn_fraction_sweep_emits_rows_per_fraction() {
    let mut cfg = tiny_config();
    cfg.experiment.learn_fractions = vec![0.5, 1.0];
    cfg.experiment.fv_sources = vec!["supervised-cr2".into()];
    cfg.experiment.attribute_sources = vec![];
    let (report, _) = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].learn_fraction, 0.5);
    assert_eq!(report.rows[1].learn_fraction, 1.0);
}
