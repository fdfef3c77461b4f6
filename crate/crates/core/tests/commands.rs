use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use odisphere::config::{BackendChoice, BiasMode, PipelineConfig};
use odisphere::grid::Grid;
use odisphere::io::{fixations, osb1, pfm};
use odisphere::metrics::{EvalOptions, FixationSet};
use odisphere::pipeline::{self, PipelineInputs};
use odisphere::synthetic::{elevation_prior, equator_scene};
use odisphere::Error;

fn small_config() -> PipelineConfig {
    PipelineConfig {
        erp_height: 32,
        erp_width: 64,
        patch_height: 12,
        patch_width: 12,
        bias_grid: [4, 4],
        ..PipelineConfig::default()
    }
}

fn write_scene(dir: &Path, name: &str, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = equator_scene(&mut rng, 32, 64, 30f64.to_radians());
    let img = dir.join(format!("{name}.pfm"));
    let gt = dir.join(format!("{name}_gt.pfm"));
    pfm::write(&img, &s.image).unwrap();
    pfm::write(&gt, &s.saliency).unwrap();
    (img, gt)
}

fn write_dataset(dir: &Path, n: usize) -> PathBuf {
    let scenes: Vec<serde_json::Value> = (0..n)
        .map(|i| {
            write_scene(dir, &format!("s{i}"), i as u64);
            serde_json::json!({"image": format!("s{i}.pfm"), "saliency": format!("s{i}_gt.pfm")})
        })
        .collect();
    let path = dir.join("dataset.json");
    std::fs::write(&path, serde_json::json!({ "scenes": scenes }).to_string()).unwrap();
    path
}

fn pfm_count(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pfm"))
        .count()
}

#[test]
fn extract_default_layout_writes_78_patches() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = write_scene(dir.path(), "a", 0);
    let cfg = small_config();
    let out = dir.path().join("patches");
    let m = pipeline::cmd_extract(&img, &cfg, &out).unwrap();
    assert_eq!(pfm_count(&out), 78);
    assert!(out.join("d0_a100.pfm").exists());
    assert!(out.join("d25_a120.pfm").exists());
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.inputs[0].sha256.len(), 64);
    let patch = pfm::read(out.join("d7_a110.pfm")).unwrap();
    assert_eq!((patch.rows(), patch.cols()), (12, 12));
}

#[test]
fn extract_interval_90_single_aov_writes_6() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = write_scene(dir.path(), "a", 0);
    let cfg = PipelineConfig {
        interval_deg: 90.0,
        aovs_deg: vec![100.0],
        ..small_config()
    };
    let out = dir.path().join("patches");
    pipeline::cmd_extract(&img, &cfg, &out).unwrap();
    assert_eq!(pfm_count(&out), 6);
}

#[test]
fn bad_interval_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = write_scene(dir.path(), "a", 0);
    let cfg = PipelineConfig {
        interval_deg: 50.0,
        ..small_config()
    };
    let out = dir.path().join("never");
    assert!(matches!(
        pipeline::cmd_extract(&img, &cfg, &out),
        Err(Error::InvalidArgument(_))
    ));
    assert!(!out.exists());
}

#[test]
fn unreadable_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = pipeline::cmd_extract(&dir.path().join("missing.png"), &small_config(), &dir.path().join("o"));
    assert!(matches!(err, Err(Error::Io { .. })));
}

#[test]
fn uniform_backend_without_bias_gives_uniform_map() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = write_scene(dir.path(), "a", 0);
    let cfg = PipelineConfig {
        aovs_deg: vec![100.0],
        bias: BiasMode::None,
        backend: BackendChoice::Uniform { value: 3.0 },
        ..small_config()
    };
    let out = dir.path().join("o");
    pipeline::cmd_pipeline(&img, &PipelineInputs::default(), &cfg, &out).unwrap();
    let map = pfm::read(out.join("saliency.pfm")).unwrap();
    let expected = 1.0 / (32.0 * 64.0);
    for &v in map.data() {
        assert!((v as f64 - expected).abs() < 1e-9);
    }
}

#[test]
fn pipeline_with_evaluation_and_stage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (img, gt) = write_scene(dir.path(), "a", 1);
    let fix = dir.path().join("fix.csv");
    std::fs::write(&fix, "azimuth_deg,elevation_deg\n0,0\n45,10\n-120,-5\n").unwrap();
    let inputs = PipelineInputs {
        fixations: Some(fix),
        ground_truth: Some(gt),
        ..PipelineInputs::default()
    };
    let out = dir.path().join("o");
    let m = pipeline::cmd_pipeline(&img, &inputs, &small_config(), &out).unwrap();
    assert_eq!(m.inputs.len(), 3);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    for key in ["nss", "auc", "cc", "kld"] {
        assert!(report[key].is_f64(), "{key}");
    }
    assert!(report["meta"]["nss_zscore"].as_str().unwrap().contains("solid-angle"));

    // backend files are missing: the error names the stage and the patch
    let cfg = PipelineConfig {
        backend: BackendChoice::Files {
            dir: dir.path().join("nothing"),
        },
        aovs_deg: vec![100.0],
        ..small_config()
    };
    let err = pipeline::cmd_pipeline(&img, &PipelineInputs::default(), &cfg, &dir.path().join("o2")).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("backend") && msg.contains("d0_a100"), "{msg}");
}

#[test]
fn mismatched_parameter_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = write_scene(dir.path(), "a", 0);
    let single = dir.path().join("single.osb1");
    osb1::write(&single, &osb1::Params::Bias(odisphere::BiasGrid::single(4, 4))).unwrap();
    let inputs = PipelineInputs {
        bias_params: Some(single),
        ..PipelineInputs::default()
    };
    // the default bias mode is multi
    assert!(pipeline::cmd_pipeline(&img, &inputs, &small_config(), &dir.path().join("o")).is_err());

    let attn = dir.path().join("attn.osb1");
    let p = odisphere::AttentionParams::init(odisphere::multiscale::Arch::Shallow, 3, 4, 3, 0).unwrap();
    osb1::write(&attn, &osb1::Params::Attention(p)).unwrap();
    let inputs = PipelineInputs {
        attention_params: Some(attn),
        ..PipelineInputs::default()
    };
    // file holds arch 1, config asks for arch 4
    assert!(pipeline::cmd_pipeline(&img, &inputs, &small_config(), &dir.path().join("o")).is_err());
}

#[test]
fn evaluate_prediction_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = write_scene(dir.path(), "a", 2);
    let out = dir.path().join("r/metrics.json");
    let report = pipeline::cmd_evaluate(&gt, Some(&gt), None, &EvalOptions::default(), &out).unwrap();
    assert!(report.kld.unwrap().abs() < 1e-10);
    assert!((report.cc.unwrap() - 1.0).abs() < 1e-12);
    assert!(report.nss.is_none());
    assert!(out.exists());
    assert!(pipeline::cmd_evaluate(&gt, None, None, &EvalOptions::default(), &out).is_err());
}

#[test]
fn biasfit_on_identity_dataset_stays_near_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        aovs_deg: vec![100.0],
        bias: BiasMode::None,
        ..small_config()
    };
    // ground truth = the unbiased model output, so the identity bias is optimal
    let scenes: Vec<serde_json::Value> = (0..3)
        .map(|i| {
            let (img, _) = write_scene(dir.path(), &format!("s{i}"), i);
            let out = dir.path().join(format!("pred{i}"));
            pipeline::cmd_pipeline(&img, &PipelineInputs::default(), &cfg, &out).unwrap();
            serde_json::json!({"image": format!("s{i}.pfm"), "saliency": format!("pred{i}/saliency.pfm")})
        })
        .collect();
    let ds = dir.path().join("ds.json");
    std::fs::write(&ds, serde_json::json!({ "scenes": scenes }).to_string()).unwrap();
    let fit_cfg = PipelineConfig {
        bias: BiasMode::Multi,
        ..cfg
    };
    let out = dir.path().join("fit");
    pipeline::cmd_biasfit(&ds, None, &fit_cfg, &out).unwrap();
    let bias = osb1::read_bias::<f64>(out.join("bias.osb1")).unwrap();
    assert_eq!(bias.channels(), 5);
    for &w in bias.weights().data() {
        assert!((w - 1.0).abs() < 0.01, "{w}");
    }
    let losses = std::fs::read_to_string(out.join("bias_loss.csv")).unwrap();
    assert!(losses.starts_with("step,loss\n"));
    assert_eq!(losses.lines().count(), 1 + 3 * 5);

    assert!(pipeline::cmd_biasfit(&ds, None, &PipelineConfig { bias: BiasMode::None, ..small_config() }, &out).is_err());
}

#[test]
fn attnfit_then_pipeline_uses_trained_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 2);
    let mut cfg = small_config();
    cfg.train.epochs = 1;
    cfg.train.lr_attention = 1e-3;
    let fit = dir.path().join("fit");
    pipeline::cmd_attnfit(&ds, &PipelineInputs::default(), &cfg, &fit).unwrap();
    let attn = fit.join("attention.osb1");
    let params = osb1::read_attention::<f64>(&attn).unwrap();
    assert_eq!(params.arch.number(), 4);
    assert_eq!(params.output_channels(), 3);
    let (img, _) = write_scene(dir.path(), "x", 9);
    let inputs = PipelineInputs {
        attention_params: Some(attn),
        ..PipelineInputs::default()
    };
    pipeline::cmd_pipeline(&img, &inputs, &cfg, &dir.path().join("o")).unwrap();
    let map = pfm::read(dir.path().join("o/saliency.pfm")).unwrap();
    let sum: f64 = map.data().iter().map(|&v| v as f64).sum();
    assert!((sum - 1.0).abs() < 1e-4);
}

#[test]
fn plotprior_peaks_on_the_equator_and_feeds_constant_bias() {
    let dir = tempfile::tempdir().unwrap();
    let ds = write_dataset(dir.path(), 4);
    let out = dir.path().join("prior");
    pipeline::cmd_plotprior(&ds, &small_config(), &out).unwrap();
    let prior = pfm::read(out.join("prior.pfm")).unwrap();
    let row_mean = |r: usize| (0..64).map(|c| prior.get(r, c, 0) as f64).sum::<f64>() / 64.0;
    let best = (0..32).max_by(|&a, &b| row_mean(a).total_cmp(&row_mean(b))).unwrap();
    assert!((12..20).contains(&best), "peak row {best}");
    assert!(out.join("prior.png").exists());

    let (img, _) = write_scene(dir.path(), "x", 11);
    let cfg = PipelineConfig {
        bias: BiasMode::Constant,
        ..small_config()
    };
    assert!(pipeline::cmd_pipeline(&img, &PipelineInputs::default(), &cfg, &dir.path().join("o")).is_err());
    let inputs = PipelineInputs {
        prior: Some(out.join("prior.pfm")),
        ..PipelineInputs::default()
    };
    pipeline::cmd_pipeline(&img, &inputs, &cfg, &dir.path().join("o")).unwrap();
}

#[test]
fn average_prior_of_equator_maps() {
    let maps: Vec<Grid<f64>> = (1..4).map(|k| elevation_prior(16, 32, 0.2 * k as f64)).collect();
    let p = pipeline::average_prior(&maps).unwrap();
    assert!((p.sum() - 1.0).abs() < 1e-12);
    assert!(p.get(8, 0, 0) > p.get(0, 0, 0));
}

#[test]
fn fixation_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    std::fs::write(&path, "10,20,2\n-30,-40\n").unwrap();
    let f: FixationSet<f64> = fixations::read(&path).unwrap();
    assert_eq!(f.len(), 2);
    std::fs::write(&path, "10,95\n").unwrap();
    let err = fixations::read::<f64>(&path).unwrap_err().to_string();
    assert!(err.contains("line 1"), "{err}");
}
