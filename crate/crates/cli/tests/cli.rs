use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fecnn::bitstats::BitstatsRow;
use fecnn::evalplan::EvalPlanRow;
use fecnn::setup::{load_evaluator, load_model, ReprChoice};
use fecnn::sweep::{Method, SweepRow};
use fecnn::twophase::{run_phases, Phase, TwophaseRow};
use fecnn_core::scheme::PlanFile;
use fecnn_core::{BitMaskVector, Direction, EccSpec, ProtectionPlan};
use serde::de::DeserializeOwned;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn model() -> String {
    root()
        .join("assets/reference-model.bin")
        .display()
        .to_string()
}

fn dataset() -> String {
    root().join("data/mnist-5k").display().to_string()
}

fn fecnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fecnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok_rows<R: DeserializeOwned>(args: &[&str]) -> Vec<R> {
    let out = fecnn(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    csv::Reader::from_reader(out.stdout.as_slice())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

#[test]
fn baseline_sweep_row() {
    let (m, d) = (model(), dataset());
    let rows: Vec<SweepRow> = ok_rows(&[
        "sweep",
        "--model",
        &m,
        "--dataset",
        &d,
        "--limit",
        "200",
        "--mode",
        "baseline",
        "--ber",
        "0.01",
        "--target-r",
        "0.008",
        "--trials",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(row.method, Method::Baseline);
    assert_eq!((row.trials, row.seed, row.train_seed), (5, 3, None));
    assert!(row.achieved_r <= row.target_r);
    assert_eq!(row.config_hash.len(), 16);

    let masks: Vec<BitMaskVector> = row.plan.split('/').map(|m| m.parse().unwrap()).collect();
    let plan = ProtectionPlan::new(masks, EccSpec::Ideal, None).unwrap();
    let sizes = load_model(Path::new(&m)).unwrap().layer_sizes();
    assert_eq!(plan.redundancy(&sizes, 0.01).unwrap().r, row.achieved_r);
}

#[test]
fn bitstats_frequencies() {
    let m = model();
    let rows: Vec<BitstatsRow> = ok_rows(&["bitstats", "--model", &m]);
    assert_eq!(rows.len(), 32);
    for r in &rows {
        assert!((r.p0 + r.p1 - 1.0).abs() < 1e-12);
    }
    let net = load_model(Path::new(&m)).unwrap();
    let negative = net
        .layers()
        .iter()
        .flat_map(|l| l.weights())
        .filter(|w| w.is_sign_negative())
        .count() as u64;
    assert_eq!(rows[0].region, "sign");
    assert_eq!(rows[0].ones, negative);
    assert_eq!(rows[0].weights, net.weight_count() as u64);

    let fixed: Vec<BitstatsRow> = ok_rows(&["bitstats", "--model", &m, "--repr", "fixed:8:auto"]);
    assert_eq!(fixed.len(), 8);
    assert!(fixed[1..].iter().all(|r| r.region == "magnitude"));
}

#[test]
fn twophase_starts_clean() {
    let (m, d) = (model(), dataset());
    let rows: Vec<TwophaseRow> = ok_rows(&[
        "twophase",
        "--model",
        &m,
        "--dataset",
        &d,
        "--limit",
        "200",
        "--scenario",
        "oneToZero_then_zeroToOne",
        "--steps",
        "2",
        "--trials",
        "2",
        "--positions",
        "1-8",
    ]);
    assert_eq!(rows.len(), 6);
    let ev = load_evaluator(Path::new(&m), Path::new(&d), ReprChoice::Float32, 200).unwrap();
    assert_eq!(rows[0].mean, ev.clean_accuracy());
    assert_eq!(rows[0].std, 0.0);
    // phase two begins where phase one ended
    assert_eq!(rows[3].mean, rows[2].mean);
    assert_eq!(rows[2].direction, Direction::OneToZero);
    assert_eq!(rows[5].direction, Direction::ZeroToOne);
}

#[test]
fn fully_protected_control_is_flat() {
    let ev = load_evaluator(
        Path::new(&model()),
        Path::new(&dataset()),
        ReprChoice::Float32,
        200,
    )
    .unwrap();
    let none = |direction| Phase {
        direction,
        exposed: vec![0; ev.layer_sizes().len()],
    };
    let curves = run_phases(
        &ev,
        &[none(Direction::OneToZero), none(Direction::ZeroToOne)],
        0.1,
        3,
        2,
        9,
    )
    .unwrap();
    for phase in &curves {
        for accs in phase {
            assert!(accs.iter().all(|&a| a == ev.clean_accuracy()));
        }
    }
}

#[test]
fn setdiff_needs_plans() {
    let out = fecnn(&[
        "twophase",
        "--model",
        &model(),
        "--scenario",
        "setdiff_TopBits_first",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--plan-topbits"));
}

fn write_config(dir: &Path) -> PathBuf {
    let cfg = format!(
        r#"
model = "{}"
dataset = "{}"
limit = 100
ber = 0.01
target_r = 0.006
mode = "top_bits"
final_trials = 3

[drl]
iterations = 6
batch_size = 8
"#,
        model(),
        dataset()
    );
    let path = dir.join("train.toml");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn train_is_reproducible_and_plan_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for dir in &dirs {
        let out = fecnn(&[
            "train",
            "--config",
            cfg,
            "--seed",
            "5",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in ["log.csv", "plan.txt", "checkpoint.bin", "summary.csv"] {
        let a = std::fs::read(dirs[0].join(name)).unwrap();
        assert!(!a.is_empty(), "{name}");
        assert_eq!(a, std::fs::read(dirs[1].join(name)).unwrap(), "{name}");
    }
    let log = std::fs::read_to_string(dirs[0].join("log.csv")).unwrap();
    assert!(log.starts_with("iteration,r,P,R,loss_actor,loss_critic,seed,config_hash"));
    assert_eq!(log.lines().count(), 7);

    let plan_path = dirs[0].join("plan.txt");
    let plan: PlanFile = std::fs::read_to_string(&plan_path)
        .unwrap()
        .parse()
        .unwrap();
    assert!(plan.achieved_r <= 0.006);
    assert_eq!(plan.plan.target_r(), Some(0.006));

    let rows: Vec<EvalPlanRow> = ok_rows(&[
        "eval-plan",
        "--model",
        &model(),
        "--dataset",
        &dataset(),
        "--limit",
        "100",
        "--plan",
        plan_path.to_str().unwrap(),
        "--trials",
        "3",
        "--seed",
        "5",
    ]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].ber, 0.01);
    assert_eq!(rows[0].achieved_r, plan.achieved_r);
    // same channel seed and draws as the training run's final evaluation
    let summary = std::fs::read_to_string(dirs[0].join("summary.csv")).unwrap();
    let mean: f64 = csv::Reader::from_reader(summary.as_bytes())
        .records()
        .next()
        .unwrap()
        .unwrap()[4]
        .parse()
        .unwrap();
    assert_eq!(rows[0].mean, mean);
}

#[test]
fn bad_inputs_fail_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[drl]\nnoise = 1.0\n").unwrap();
    let out = fecnn(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));

    for args in [
        &["sweep", "--model", "/nonexistent/model.bin"][..],
        &["sweep", "--ber", "1.5"],
        &["sweep", "--ecc", "bch:7:9:1"],
        &["sweep", "--repr", "fixed:40"],
        &["bitstats", "--model", "/nonexistent/model.bin"],
    ] {
        let out = fecnn(args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn zero_to_one_first_hurts_more() {
    let (m, d) = (model(), dataset());
    let phase_one_end = |scenario: &str| -> TwophaseRow {
        let rows: Vec<TwophaseRow> = ok_rows(&[
            "twophase",
            "--model",
            &m,
            "--dataset",
            &d,
            "--limit",
            "300",
            "--scenario",
            scenario,
            "--steps",
            "1",
            "--trials",
            "30",
            "--positions",
            "1-8",
            "--seed",
            "4",
        ]);
        rows.into_iter()
            .find(|r| r.phase == 1 && r.step == 1)
            .unwrap()
    };
    let up = phase_one_end("zeroToOne_then_oneToZero");
    let down = phase_one_end("oneToZero_then_zeroToOne");
    let se = (up.stderr.powi(2) + down.stderr.powi(2)).sqrt();
    assert!(
        down.mean - up.mean > 3.0 * se,
        "0->1 {} vs 1->0 {}",
        up.mean,
        down.mean
    );
}

#[test]
fn baseline_rows_match_direct_evaluation_and_rerun_identically() {
    let (m, d) = (model(), dataset());
    let args = [
        "sweep",
        "--model",
        &m,
        "--dataset",
        &d,
        "--limit",
        "300",
        "--mode",
        "baseline",
        "--ber",
        "0.01",
        "--target-r",
        "0,0.011,0.022",
        "--trials",
        "10",
        "--seed",
        "8",
    ];
    let first = fecnn(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, fecnn(&args).stdout);

    let rows: Vec<SweepRow> = csv::Reader::from_reader(first.stdout.as_slice())
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    let ev = load_evaluator(Path::new(&m), Path::new(&d), ReprChoice::Float32, 300).unwrap();
    let sizes = ev.layer_sizes().to_vec();
    for row in &rows {
        let problem = fecnn_core::drl::Problem {
            metas: ev.model().layer_metadata(),
            layer_sizes: sizes.clone(),
            width: 32,
            ecc: EccSpec::Ideal,
            p: 0.01,
            target_r: row.target_r,
            mode: fecnn_core::drl::ActionMode::TopBits,
        };
        let plan = problem.baseline_fallback().unwrap();
        let chan = fecnn_core::ChannelSpec::symmetric(0.01, 8).unwrap();
        let direct = ev.evaluate(&plan, &chan, 10).unwrap();
        assert_eq!(direct.mean, row.mean);
        assert_eq!(direct.r, row.achieved_r);
    }
    // no protection collapses; the eight leading bits recover most of the accuracy
    let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    assert!(means[0] < 0.2, "{means:?}");
    assert!(means[2] - means[0] > 0.5, "{means:?}");
}

#[test]
fn float32_exponent_bits_are_skewed() {
    let rows: Vec<BitstatsRow> = ok_rows(&["bitstats", "--model", &model()]);
    let ones: Vec<u64> = rows[..9].iter().map(|r| r.ones).collect();
    assert_eq!(ones, [8391, 0, 11535, 11221, 10392, 8640, 4642, 6266, 6237]);
    let max_skew = rows[1..9]
        .iter()
        .map(|r| (r.p1 - 0.5).abs())
        .fold(0.0, f64::max);
    assert_eq!(max_skew, 0.5);
}
