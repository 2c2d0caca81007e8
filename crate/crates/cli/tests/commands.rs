use std::path::Path;
use std::process::Command;

use reed_cli::run::{cmd_run_fedavg, cmd_sweep, cmd_validate_moments, validate_moments};
use reed_cli::{ExperimentConfig, MomentPlan, SweepAxis};

const SMALL: &str = r#"
seed = 3
trials = 2

[phy]
eta = 200.0
snr_db = -10.0

[fed]
clients = 4
local_steps = 3
rounds = 3
batch_size = 16
beta0 = 0.1
aggregators = ["ideal"]

[data]
source = "synth"
kind = "blobs"
n_train = 200
n_test = 50
classes = 3
features = 4
separation = 2.0
partition = "dirichlet"
alpha = 0.5

[model]
kind = "logistic"
"#;

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path).lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn run_writes_one_row_per_trial_and_round() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_run_fedavg(&cfg(SMALL), dir.path()).unwrap();
    let text = read(&dir.path().join("traces.csv"));
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "trial,round,aggregator,train_loss,test_acc,grad_norm_sq,eps_norm_sq,max_client_energy"
    );
    assert_eq!(lines.count(), 6);
    assert_eq!(summary.aggregators.len(), 1);
    let json: serde_json::Value = serde_json::from_str(&read(&dir.path().join("summary.json"))).unwrap();
    assert_eq!(json["trials"], 2);
    assert!(json["aggregators"][0]["final_test_acc"]["mean"].is_number());
}

#[test]
fn ideal_trajectory_ignores_other_aggregators() {
    let alone = tempfile::tempdir().unwrap();
    let both = tempfile::tempdir().unwrap();
    cmd_run_fedavg(&cfg(SMALL), alone.path()).unwrap();
    let text = SMALL.replace(r#"aggregators = ["ideal"]"#, r#"aggregators = ["reed", "ideal"]"#);
    cmd_run_fedavg(&cfg(&text), both.path()).unwrap();
    let a = csv_rows(&alone.path().join("traces.csv"));
    let b: Vec<_> = csv_rows(&both.path().join("traces.csv")).into_iter().filter(|r| r[2] == "ideal").collect();
    assert_eq!(a, b);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let text = SMALL.replace(r#"aggregators = ["ideal"]"#, r#"aggregators = ["ideal", "reed", "coherent_csit"]"#);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_run_fedavg(&cfg(&text), a.path()).unwrap();
    cmd_run_fedavg(&cfg(&text), b.path()).unwrap();
    for f in ["traces.csv", "summary.json"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
}

#[test]
fn single_value_sweep_matches_plain_run() {
    let text = format!("{SMALL}\n[sweep]\nm = [1]\n");
    let run = tempfile::tempdir().unwrap();
    let sweep = tempfile::tempdir().unwrap();
    cmd_run_fedavg(&cfg(&text), run.path()).unwrap();
    cmd_sweep(&cfg(&text), SweepAxis::M, sweep.path()).unwrap();
    let plain = read(&run.path().join("traces.csv"));
    let swept = read(&sweep.path().join("sweep_traces.csv"));
    let stripped: Vec<&str> = swept.lines().map(|l| l.split_once(',').unwrap().1).collect();
    assert_eq!(stripped, plain.lines().collect::<Vec<_>>());
    assert!(swept.starts_with("m,trial,"));
}

#[test]
fn chip_sweep_emits_one_group_per_value_with_gaps() {
    let text = SMALL.replace(r#"aggregators = ["ideal"]"#, r#"aggregators = ["ideal", "reed"]"#) + "\n[sweep]\nm = [1, 2, 4]\n";
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_sweep(&cfg(&text), SweepAxis::M, dir.path()).unwrap();
    assert_eq!(summary.points.len(), 3);
    let rows = csv_rows(&dir.path().join("sweep_traces.csv"));
    for m in ["1", "2", "4"] {
        assert_eq!(rows.iter().filter(|r| r[0] == m).count(), 2 * 2 * 3);
    }
    let head = read(&dir.path().join("sweep_summary.csv"));
    assert!(head.starts_with("m,aggregator,"));
    for p in &summary.points {
        assert_eq!(p.summary.aggregators[0].gap_to_ideal.unwrap().mean, 0.0);
        assert!(p.summary.aggregators[1].gap_to_ideal.is_some());
    }
}

#[test]
fn higher_snr_gives_smaller_aggregation_error() {
    let text = SMALL.replace(r#"aggregators = ["ideal"]"#, r#"aggregators = ["reed"]"#) + "\n[sweep]\nsnr_db = [-10.0, 0.0]\n";
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_sweep(&cfg(&text), SweepAxis::SnrDb, dir.path()).unwrap();
    let eps: Vec<f64> = s.points.iter().map(|p| p.summary.aggregators[0].final_eps_norm_sq.mean).collect();
    assert!(eps[1] < eps[0], "{eps:?}");
}

#[test]
fn empty_sweep_axis_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_sweep(&cfg(SMALL), SweepAxis::Alpha, dir.path()).unwrap_err();
    assert!(err.to_string().contains("sweep.alpha"), "{err}");
    let err = cmd_sweep(&cfg(&format!("{SMALL}\n[sweep]\nbeta0 = []\n")), SweepAxis::Beta0, dir.path()).unwrap_err();
    assert!(err.to_string().contains("sweep.beta0"), "{err}");
}

#[test]
fn default_moment_matrix_passes() {
    let plan = MomentPlan::build(&cfg("")).unwrap();
    assert_eq!(plan.points.len(), 12);
    assert_eq!(plan.trials, 1_000_000);
    for row in validate_moments(&plan).unwrap() {
        assert!(row.pass, "{row:?}");
    }
}

const MOMENT_POINTS: &str = r#"
[moments]
trials = 300000
tolerance = 0.02

[[moments.points]]
id = "quiet"
u = [2.0, -1.0]
noise_var = 0.0

[[moments.points]]
id = "quiet_chips"
u = [0.5, 0.25, -1.0]
noise_var = 0.0
chip_weights = [1.0, 0.5]

[[moments.points]]
id = "wrong_eta"
u = [2.0, -1.0]
eta = 1.0
noise_var = 1.0
cf_eta = 0.5
"#;

#[test]
fn noiseless_points_follow_the_fading_law_and_wrong_eta_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let all_pass = cmd_validate_moments(&cfg(MOMENT_POINTS), dir.path()).unwrap();
    assert!(!all_pass);
    let rows = csv_rows(&dir.path().join("moments.csv"));
    let by_id = |id: &str| rows.iter().find(|r| r[0] == id).unwrap().clone();
    // sigma^2 = 0: Var = (sum c^2 / C^2)(S_+^2 + S_-^2).
    let quiet = by_id("quiet");
    assert_eq!(quiet[7], "true");
    assert!((quiet[4].parse::<f64>().unwrap() / 5.0 - 1.0).abs() <= 0.02);
    let chips = by_id("quiet_chips");
    assert_eq!(chips[7], "true");
    let expected = 1.25 / 2.25 * (0.75f64.powi(2) + 1.0);
    assert!((chips[4].parse::<f64>().unwrap() / expected - 1.0).abs() <= 0.02);
    assert_eq!(by_id("wrong_eta")[7], "false");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reed"))
}

#[test]
fn binary_exit_codes_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, MOMENT_POINTS).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["--workers", "2", "--seed", "9", "validate-moments"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(out.join("moments.csv").exists());

    let good = dir.path().join("good.toml");
    std::fs::write(&good, SMALL).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (o, seed) in [(&a, "5"), (&b, "6")] {
        let s = bin().args(["run-fedavg", "--seed", seed]).arg(&good).arg("--out").arg(o).output().unwrap();
        assert!(s.status.success());
    }
    assert_ne!(read(&a.join("traces.csv")), read(&b.join("traces.csv")));

    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, format!("{SMALL}\nbogus = 1\n")).unwrap();
    let r = bin().arg("run-fedavg").arg(&broken).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("bogus"));
}

#[test]
fn idx_data_is_loaded_and_missing_files_fail_at_startup() {
    use reed::data::{write_idx_images, write_idx_labels};
    let dir = tempfile::tempdir().unwrap();
    let n = 60;
    let pixels: Vec<f64> = (0..n * 4).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
    std::fs::write(dir.path().join("img"), write_idx_images(n, 2, 2, &pixels).unwrap()).unwrap();
    std::fs::write(dir.path().join("lbl"), write_idx_labels(&labels)).unwrap();
    let text = format!(
        r#"
trials = 1
[fed]
clients = 3
local_steps = 2
rounds = 2
batch_size = 8
beta = 0.1
aggregators = ["ideal", "reed"]
[data]
source = "idx"
classes = 3
train_images = "{0}/img"
train_labels = "{0}/lbl"
test_images = "{0}/img"
test_labels = "{0}/lbl"
[model]
kind = "mlp"
hidden = 5
"#,
        dir.path().display()
    );
    let out = dir.path().join("out");
    cmd_run_fedavg(&cfg(&text), &out).unwrap();
    assert_eq!(csv_rows(&out.join("traces.csv")).len(), 4);

    let missing = text.replace("/img\"\ntrain_labels", "/nope\"\ntrain_labels");
    let err = cmd_run_fedavg(&cfg(&missing), &dir.path().join("out2")).unwrap_err();
    assert!(format!("{err:#}").contains("data.train_images"), "{err:#}");
    assert!(!dir.path().join("out2").exists());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["moments.toml", "fedavg_blobs.toml", "chip_trend.toml", "quadratic_budget.toml"] {
        let c = ExperimentConfig::load(&root.join(name)).unwrap();
        if c.fed.is_some() {
            reed_cli::FedPlan::build(&c).unwrap();
        } else {
            MomentPlan::build(&c).unwrap();
        }
    }
    ExperimentConfig::load(&root.join("mlp_idx.toml")).unwrap();
}
