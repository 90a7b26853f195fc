use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bathysize_core::report::{convergence_plot_from_csv, eta_plot_from_csv};

fn bathysize(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bathysize"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest_entries(dir: &Path) -> Vec<(String, String)> {
    fs::read_to_string(dir.join("manifest.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let mut it = l.split_whitespace();
            let name = it.next().unwrap().to_string();
            let sha = it.next().unwrap().trim_start_matches("sha256=").to_string();
            (name, sha)
        })
        .collect()
}

#[test]
fn minimal_verify_config_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "subcommand = \"verify\"\n");
    let o = bathysize(dir.path(), &["--config", &cfg, "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = String::from_utf8_lossy(&o.stdout);
    assert!(printed.contains("subcommand = \"verify\""));
    assert!(printed.contains("nx = 128") && printed.contains("ny = 64"), "{printed}");
    let log = stderr(&o);
    for key in ["discretization.nx", "discretization.ny", "discretization.tol", "domain.surface"] {
        assert!(log.contains(&format!("default applied: {key}")), "{key} not echoed:\n{log}");
    }
}

#[test]
fn zero_cells_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "subcommand = \"solve\"\n[discretization]\nnx = 0\n");
    let o = bathysize(dir.path(), &["--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("nx = 0") && e.contains("[2, 4096]"), "{e}");
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "subcommand = \"solve\"\n[output]\ndirectroy = \"x\"\n");
    let o = bathysize(dir.path(), &["--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("directroy"), "{}", stderr(&o));
}

#[test]
fn bump_through_the_surface_reports_the_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "subcommand = \"solve\"\n[domain]\nbottom = { kind = \"bump\", amplitude = 1.0, center = 0.5, halfwidth = 0.25 }\n",
    );
    let o = bathysize(dir.path(), &["--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("gap") && e.contains("bottom") && e.contains("surface 1.000000"), "{e}");
}

#[test]
fn solve_respects_the_maximum_principle() {
    let dir = tempfile::tempdir().unwrap();
    let o = bathysize(dir.path(), &["solve", "--nx", "32", "--ny", "32", "--datum", "mode1", "-o", "out", "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("out/field_mode1.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,phi"));
    let mut n = 0;
    let mut max = 0.0f64;
    for l in lines {
        let phi: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        max = max.max(phi.abs());
        n += 1;
    }
    assert_eq!(n, 33 * 33);
    assert!(max <= 1.0 + 1e-9, "max |phi| = {max}");
    assert!(dir.path().join("out/mesh.txt").exists());
}

#[test]
fn empty_sweep_grid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "subcommand = \"sweep\"\n[sweep]\namplitudes = []\n");
    let o = bathysize(dir.path(), &["--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("0 points"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("taken"), "").unwrap();
    let o = bathysize(dir.path(), &["solve", "--nx", "4", "--ny", "4", "-o", "taken", "-q"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn manifest_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["sweep", "--nx", "16", "--ny", "8", "--amplitudes", "0.04,0.08,0.12", "--datum", "mode1,mode2", "-q"];
    let run = |out: &str| {
        let mut a = args.to_vec();
        a.extend(["-o", out]);
        let o = bathysize(dir.path(), &a);
        assert!(o.status.success(), "{}", stderr(&o));
        manifest_entries(&dir.path().join(out))
    };
    let first = run("a");
    let second = run("b");
    assert_eq!(first, second);
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    for f in ["config.toml", "sweep.csv", "fit.csv", "eta.svg", "sweep.txt"] {
        assert!(names.contains(&f), "{f} missing from {names:?}");
    }
    for entry in fs::read_dir(dir.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "manifest.txt" {
            assert!(names.contains(&name.as_str()), "{name} has no manifest line");
        }
    }

    let csv = fs::read_to_string(dir.path().join("a/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let svg = fs::read_to_string(dir.path().join("a/eta.svg")).unwrap();
    assert_eq!(svg, eta_plot_from_csv(&csv).unwrap());
}

#[test]
fn strip_spectrum_carries_the_analytic_column() {
    let dir = tempfile::tempdir().unwrap();
    let o = bathysize(dir.path(), &["dtn", "--nx", "32", "--ny", "32", "-o", "out", "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("out/spectrum.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for r in &rows[1..] {
        assert!((r[1] - r[2]).abs() <= 0.02 * r[2], "{r:?}");
    }
    let g = fs::read_to_string(dir.path().join("out/dtn.csv")).unwrap();
    assert_eq!(g.lines().count(), 33);
}

#[test]
fn converge_plot_matches_its_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "subcommand = \"converge\"\n[converge]\nresolutions = [[8, 8], [16, 16], [32, 32]]\n[output]\ndirectory = \"out\"\n",
    );
    let o = bathysize(dir.path(), &["--config", &cfg, "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/convergence_mode1.csv")).unwrap();
    let svg = fs::read_to_string(dir.path().join("out/convergence_mode1.svg")).unwrap();
    assert_eq!(svg, convergence_plot_from_csv(&csv).unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("strip-oracle"));
}

#[test]
fn estimate_on_crossing_bottoms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"subcommand = "estimate"
[domain]
second_bottom = { kind = "multi-bump", lobes = [
  { amplitude = 0.08, center = 0.3, halfwidth = 0.2 },
  { amplitude = 0.08, center = 0.7, halfwidth = 0.2, sign = -1.0 },
] }
[discretization]
nx = 32
ny = 16
[data]
datums = ["mode1", "gaussian"]
[window]
intervals = [[0.0, 1.0], [0.25, 0.75]]
[output]
directory = "out"
formats = ["csv", "txt"]
"#,
    );
    let o = bathysize(dir.path(), &["--config", &cfg, "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/estimate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("II,")), "{csv}");
    let w = fs::read_to_string(dir.path().join("out/windows.csv")).unwrap();
    assert_eq!(w.lines().count(), 1 + 2 * 2);
    assert!(!dir.path().join("out/eta.svg").exists());
}
