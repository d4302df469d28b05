//! Acceptance: the ablation harness. Every sweep axis must complete through
//! the real binary and emit well-formed paired tables; the unlabeled-amount
//! sweep must show a non-decreasing mean trend (one inversion allowed). No
//! numeric accuracy targets are claimed here.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dyndistill"))
}

/// Base config for sweep cells: small but real training. `data_extra` is
/// spliced into the `[base.data]` table.
fn base_table(data_extra: &str) -> String {
    format!(
        r#"
[base]
name = "ablation"

[base.data]
n_base_classes = 4
n_target_classes = 5
samples_per_class = 40
input_dim = 16
latent_dim = 6
seed = 17
{data_extra}

[base.model]
layer_widths = [32, 16]

[base.train]
epochs_step1 = 6
epochs_step2 = 6
batch_size = 16

[base.eval]
way = 5
shots = [5]
queries_per_class = 10
n_episodes = 60
seed = 3
"#
    )
}

struct SweepRun {
    out: PathBuf,
    cells: Vec<(String, u64, usize, f64, f64, f64)>, // value, seed, shot, mean, ci, v
}

fn run_sweep(dir: &Path, label: &str, spec_head: &str, data_extra: &str) -> SweepRun {
    let spec_path = dir.join(format!("{label}.toml"));
    std::fs::write(&spec_path, format!("{spec_head}\n{}", base_table(data_extra))).unwrap();
    let out = dir.join(label);
    let result = bin()
        .args([
            "sweep",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--log-level",
            "quiet",
        ])
        .output()
        .unwrap();
    assert!(
        result.status.success(),
        "sweep {label} failed\nstderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );

    let cells_text = std::fs::read_to_string(out.join("cells.csv")).unwrap();
    let mut cells = Vec::new();
    for line in cells_text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8, "malformed cells row: {line}");
        let mean: f64 = f[5].parse().unwrap();
        let ci: f64 = f[6].parse().unwrap();
        let v: f64 = f[7].parse().unwrap();
        assert!((0.0..=100.0).contains(&mean), "mean out of range: {line}");
        assert!(ci >= 0.0);
        assert!((0.0..=1.0).contains(&v), "v-measure out of range: {line}");
        cells.push((
            f[1].to_string(),
            f[2].parse().unwrap(),
            f[4].parse().unwrap(),
            mean,
            ci,
            v,
        ));
    }

    let summary_text = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut summary_rows = 0;
    for line in summary_text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 7, "malformed summary row: {line}");
        let _: f64 = f[4].parse().unwrap();
        summary_rows += 1;
    }
    assert!(summary_rows > 0, "empty summary table");
    assert!(out.join("sweep.json").exists());
    assert!(out.join("manifest-sweep.json").exists());
    SweepRun { out, cells }
}

#[test]
fn criterion_11_ablation_harness() {
    let dir = tempfile::tempdir().unwrap();

    // teacher-momentum sweep {0, 0.99, 1} over two paired seeds
    let m_run = run_sweep(
        dir.path(),
        "m-sweep",
        "name = \"m-sweep\"\naxis = \"teacher-momentum\"\nvalues = [0.0, 0.99, 1.0]\nseeds = [1, 2]",
        "",
    );
    assert_eq!(m_run.cells.len(), 6, "3 momentum values x 2 seeds");
    for value in ["m0", "m0.99", "m1"] {
        assert_eq!(
            m_run.cells.iter().filter(|c| c.0 == value).count(),
            2,
            "missing cells for {value}"
        );
    }

    // sharpening-temperature sweep
    let tau_run = run_sweep(
        dir.path(),
        "tau-sweep",
        "name = \"tau-sweep\"\naxis = \"tau\"\nvalues = [0.02, 0.1, 1.0, 2.0]\nseeds = [1]",
        "",
    );
    assert_eq!(tau_run.cells.len(), 4);

    // augmentation-pairing sweep over all four pairings
    let pairing_run = run_sweep(
        dir.path(),
        "pairing-sweep",
        "name = \"pairing-sweep\"\naxis = \"pairing\"\nvalues = [\"w-w\", \"w-s\", \"s-w\", \"s-s\"]\nseeds = [1]",
        "",
    );
    let mut pairings: Vec<String> = pairing_run.cells.iter().map(|c| c.0.clone()).collect();
    pairings.sort();
    assert_eq!(pairings, vec!["s-s", "s-w", "w-s", "w-w"]);

    // unlabeled-amount sweep with the evaluation split pinned; the mean over
    // seeds should not decrease with more unlabeled data (one inversion
    // allowed). This axis trains longer so the distillation term has real
    // influence at every fraction.
    let fraction_spec = r#"
name = "fraction-sweep"
axis = "unlabeled-fraction"
values = [0.05, 0.2, 0.45]
seeds = [1, 2, 3]

[base]
name = "fraction"

[base.data]
n_base_classes = 6
n_target_classes = 6
samples_per_class = 80
input_dim = 24
latent_dim = 8
seed = 17
eval_fraction = 0.5

[base.model]
layer_widths = [64, 32]

[base.train]
epochs_step1 = 20
epochs_step2 = 20
batch_size = 16

[base.eval]
way = 5
shots = [5]
queries_per_class = 10
n_episodes = 150
seed = 3
"#;
    let spec_path = dir.path().join("fraction-sweep.toml");
    std::fs::write(&spec_path, fraction_spec).unwrap();
    let fraction_out = dir.path().join("fraction-sweep");
    let result = bin()
        .args([
            "sweep",
            "--spec",
            spec_path.to_str().unwrap(),
            "--out",
            fraction_out.to_str().unwrap(),
            "--log-level",
            "quiet",
        ])
        .output()
        .unwrap();
    assert!(
        result.status.success(),
        "fraction sweep failed: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    let summary_text = std::fs::read_to_string(fraction_out.join("summary.csv")).unwrap();
    let mut summary = Vec::new();
    for line in summary_text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        summary.push((f[1].to_string(), f[4].parse::<f64>().unwrap()));
    }
    assert_eq!(summary.len(), 3);
    let mut means: Vec<(f64, f64)> = summary
        .iter()
        .map(|(value, mean)| (value.trim_start_matches('u').parse::<f64>().unwrap(), *mean))
        .collect();
    means.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let inversions = means
        .windows(2)
        .filter(|w| w[1].1 < w[0].1)
        .count();
    println!("  unlabeled-amount trend: {means:?} ({inversions} inversion(s))");
    assert!(
        inversions <= 1,
        "accuracy should be non-decreasing in unlabeled amount (one inversion allowed): {means:?}"
    );

    // ablation modes complete end to end
    let mode_run = run_sweep(
        dir.path(),
        "mode-sweep",
        "name = \"mode-sweep\"\naxis = \"mode\"\nvalues = [\"no-base\", \"one-step\"]\nseeds = [1]",
        "",
    );
    assert_eq!(mode_run.cells.len(), 2);
    assert!(!mode_run
        .out
        .join("cells/one-step-s1/checkpoints/step1.ckpt")
        .exists());

    println!("ACCEPTANCE 11 (ablation harness: m, tau, pairing, unlabeled-amount, modes): PASS");
}

#[test]
fn duplicate_sweep_cells_are_deduplicated() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_sweep(
        dir.path(),
        "dup",
        "name = \"dup\"\naxis = \"mode\"\nvalues = [\"transfer\", \"transfer\"]\nseeds = [1]",
        "",
    );
    assert_eq!(run.cells.len(), 1, "duplicate cell was not deduplicated");
}
