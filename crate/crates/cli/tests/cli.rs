use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modify::persist::{load_package, read_manifest};
use modify::stage2::StylizeMode;
use tempfile::TempDir;

fn modify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modify"))
        .args(args)
        .env_remove("MODIFY_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = modify(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, profile: &str, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let (count, seed) = (count.to_string(), seed.to_string());
    ok(&["synth", "--profile", profile, "--count", &count, "--resolution", "16", "--seed", &seed, "--out", s(&out)]);
    out
}

const TINY: [&str; 10] = [
    "--resolution", "16", "--arch", "tiny", "--layer-dim", "8", "--iterations", "4", "--batch-size", "2",
];

fn package(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let style = synth(dir, "style", "painterly", 4, 1);
    let out = dir.join(name);
    let mut args = vec!["encapsulate", "--style-dir", s(&style), "--out", s(&out)];
    args.extend(TINY);
    args.extend(extra);
    let stdout = ok(&args);
    assert_eq!(stdout.trim(), s(&out));
    out
}

#[test]
fn encapsulate_is_reproducible_and_records_its_config() {
    let dir = TempDir::new().unwrap();
    let a = package(dir.path(), "a", &["--seed", "3"]);
    let b = package(dir.path(), "b", &["--seed", "3"]);
    let c = package(dir.path(), "c", &["--seed", "4"]);
    let fp = |p: &Path| read_manifest(p).unwrap().fingerprint();
    assert_eq!(fp(&a), fp(&b));
    assert_ne!(fp(&a), fp(&c));

    let info = read_manifest(&a).unwrap().info;
    assert_eq!(info.arch.latent.fusion_index, 2);
    assert_eq!(info.config["encapsulate.xi"], "2");
    assert_eq!(info.config["encapsulate.seed"], "3");
    let log = fs::read_to_string(dir.path().join("a.metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().all(|l| l.starts_with("iteration=")));
}

#[test]
fn missing_style_dir_fails_without_a_package() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("pkg");
    let r = modify(&["encapsulate", "--style-dir", s(&dir.path().join("nope")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
    assert!(r.stdout.is_empty());
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(modify(&["encapsulate"]).status.code(), Some(2));
    assert_eq!(modify(&["synth", "--profile", "oil", "--out", s(dir.path())]).status.code(), Some(2));
    let style = synth(dir.path(), "style", "painterly", 2, 1);
    let out = dir.path().join("pkg");
    let mut args = vec!["encapsulate", "--style-dir", s(&style), "--out", s(&out)];
    args.extend(TINY);
    args.extend(["--xi", "6"]);
    assert_eq!(modify(&args).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = TempDir::new().unwrap();
    let style = synth(dir.path(), "style", "painterly", 4, 1);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# quick run\nresolution=16\narch=tiny\nlayer_dim=8\niterations=3\nbatch-size=2\nseed=5\nno-critic=true\n").unwrap();
    let out = dir.path().join("pkg");
    ok(&["encapsulate", "--style-dir", s(&style), "--out", s(&out), "--config", s(&cfg), "--seed", "7"]);
    let pkg = load_package(&out).unwrap();
    assert_eq!(pkg.info.config["encapsulate.iterations"], "3");
    assert_eq!(pkg.info.config["encapsulate.seed"], "7");
    assert_eq!(pkg.info.seed, 7);
    assert!(pkg.model.critic.is_none());

    fs::write(&cfg, "resolution=16\ncolour=blue\n").unwrap();
    let r = modify(&["encapsulate", "--style-dir", s(&style), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("faces");
    let run = |seed: &str| {
        let r = Command::new(env!("CARGO_BIN_EXE_modify"))
            .args(["synth", "--profile", "photo", "--count", "1", "--resolution", "8", "--out", s(&out)])
            .env("MODIFY_SEED", seed)
            .output()
            .unwrap();
        assert!(r.status.success());
        fs::read(out.join("0000.png")).unwrap()
    };
    let a = run("11");
    ok(&["synth", "--profile", "photo", "--count", "1", "--resolution", "8", "--seed", "11", "--out", s(&out)]);
    assert_eq!(a, fs::read(out.join("0000.png")).unwrap());
    assert_ne!(a, run("12"));
}

#[test]
fn stylize_writes_identical_bytes_per_seed() {
    let dir = TempDir::new().unwrap();
    let pkg = package(dir.path(), "pkg", &[]);
    let src = synth(dir.path(), "src", "photo", 1, 2);
    let input = src.join("0000.png");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let stdout = ok(&["stylize", "--pkg", s(&pkg), "--input", s(&input), "--steps", "2", "--seed", seed, "--out", s(&out)]);
        assert_eq!(stdout.trim(), s(&out));
        fs::read(out).unwrap()
    };
    let a = run("a.png", "1");
    assert_eq!(a, run("b.png", "1"));
    let img = image::load_from_memory(&a).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
}

#[test]
fn stylize_train_routes_modes() {
    let dir = TempDir::new().unwrap();
    let pkg = package(dir.path(), "pkg", &[]);
    let src = synth(dir.path(), "src", "photo", 3, 2);
    let out = dir.path().join("adapted");
    let base = ["stylize-train", "--pkg", s(&pkg), "--source-dir", s(&src), "--out", s(&out), "--steps", "4"];

    let r = modify(&[&base[..], &["--mode", "test-time"]].concat());
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("modify stylize"));
    assert!(!out.exists());

    ok(&[&base[..], &["--mode", "online", "--batch-size", "4"]].concat());
    let rec = load_package(&out).unwrap().info.stage2.unwrap();
    assert_eq!((rec.mode, rec.batch_size, rec.steps), (StylizeMode::Online, 1, 4));
    assert_eq!(fs::read_to_string(dir.path().join("adapted.metrics.log")).unwrap().lines().count(), 4);

    ok(&[&base[..], &["--mode", "offline", "--batch-size", "2"]].concat());
    let info = load_package(&out).unwrap().info;
    assert_eq!(info.stage2.unwrap().mode, StylizeMode::Offline);
    assert_eq!(info.config["stylize-train.mode"], "offline");
    assert!(info.config.contains_key("encapsulate.xi"));
}

#[test]
fn sample_grid_has_an_input_column_and_one_per_seed() {
    let dir = TempDir::new().unwrap();
    let pkg = package(dir.path(), "pkg", &[]);
    let src = synth(dir.path(), "src", "photo", 2, 2);
    let grid = dir.path().join("grid.png");
    ok(&["sample", "--pkg", s(&pkg), "--input", s(&src), "--noise-seeds", "0,1,0", "--out-grid", s(&grid)]);
    let img = image::open(&grid).unwrap().to_rgb8();
    assert_eq!((img.width(), img.height()), (4 * 16 + 3 * 2, 2 * 16 + 2));
    let tile = |col: u32, row: u32| {
        let (ox, oy) = (col * 18, row * 18);
        (0..16).flat_map(|y| (0..16).map(move |x| (x, y))).map(|(x, y)| img.get_pixel(ox + x, oy + y).0).collect::<Vec<_>>()
    };
    for row in 0..2 {
        assert_eq!(tile(1, row), tile(3, row));
        assert_ne!(tile(0, row), tile(1, row));
    }
}

#[test]
fn eval_of_a_set_against_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let refs = synth(dir.path(), "ref", "painterly", 4, 1);
    let stdout = ok(&["eval", "--reference-dir", s(&refs), "--source-dir", s(&refs), "--resolution", "16"]);
    let fid: f64 = stdout.lines().find_map(|l| l.strip_prefix("fid=")).unwrap().parse().unwrap();
    assert!(fid.abs() <= 1e-6, "{fid}");
    assert_eq!(modify(&["eval", "--reference-dir", s(&refs), "--source-dir", s(&refs)]).status.code(), Some(2));
}

#[test]
fn xi_ablation_rescales_reference_indices() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("xi");
    ok(&[
        "ablate", "--which", "xi", "--xi-list", "3,6,9", "--xi-reference-layers", "18", "--count", "3", "--resolution",
        "16", "--arch", "tiny", "--layer-dim", "8", "--iterations", "4", "--batch-size", "2", "--out", s(&out),
    ]);
    let text = fs::read_to_string(out.join("summary.txt")).unwrap();
    for xi in 1..=3 {
        assert!(text.contains(&format!("xi.{xi}.loss_id=")), "{text}");
    }
    assert!(out.join("grid.png").is_file());
}
