use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn qcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcf")).args(args).output().expect("binary runs")
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn header(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines().find(|l| !l.starts_with('#')).unwrap().to_string()
}

fn summary(path: &Path, key: &str) -> String {
    let text = fs::read_to_string(path).unwrap();
    let prefix = format!("# summary.{key} = ");
    text.lines()
        .find_map(|l| l.strip_prefix(&prefix))
        .unwrap_or_else(|| panic!("no summary {key}"))
        .to_string()
}

#[test]
fn patch_test_passes_on_lj_grid() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("patch.csv");
    let o = qcf(&["patch-test", "--potential", "lj", "--F-list", "0.9,1.0,1.1", "--N-list", "32", "--K", "8", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 3);
    assert!(header(&out).starts_with("F,F_eff,N,K,max_residual"));
    assert!(rows.iter().all(|r| r.last().unwrap() == "true"));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# subcommand = patch-test"));
    assert!(text.contains("# seed = 0"));
}

#[test]
fn invalid_k_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let o = qcf(&["patch-test", "--N-list", "32", "--K", "32", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K out of range"));
    assert!(!out.exists());
}

#[test]
fn missing_output_path_prints_usage() {
    let o = qcf(&["convergence"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("--out") && err.contains("Usage: qcf convergence"), "{err}");
}

#[test]
fn coercivity_with_zero_next_nearest_coupling() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c.csv");
    let o = qcf(&["coercivity", "--phiF", "1", "--phi2F", "0", "--N-list", "16,32", "--K-ratio", "0.25", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(header(&out), "N,K,rayleigh_min,witness_value");
    for row in data_rows(&out) {
        let value: f64 = row[2].parse().unwrap();
        assert!((value - 1.0).abs() < 1e-10);
    }
    assert!(summary(&out, "fit").starts_with("not attempted"));
}

#[test]
fn coercivity_witness_is_feasible() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("c.csv");
    let o = qcf(&["coercivity", "--phiF", "1", "--phi2F", "-0.2", "--N-list", "16,32,64", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for row in data_rows(&out) {
        let (r, w): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
        assert!(w >= r - 1e-10);
    }
}

#[test]
fn infsup_table_and_slopes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("i.csv");
    let o = qcf(&["infsup", "--phiF", "1", "--phi2F", "-0.05", "--N-list", "64,128,256,512", "--p-list", "1,2", "--jobs", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(header(&out), "N,K,p,kind,value");
    let rows = data_rows(&out);
    let lower: Vec<_> = rows.iter().filter(|r| r[3] == "lower_bound").collect();
    assert_eq!(lower.len(), 4);
    for r in &lower {
        assert_eq!(r[2], "inf");
        assert!((r[4].parse::<f64>().unwrap() - 0.3).abs() <= 1e-14);
    }
    let ns: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert!(ns.windows(2).all(|w| w[0].parse::<usize>().unwrap() <= w[1].parse::<usize>().unwrap()));
    let p1: f64 = summary(&out, "slope_upper_p1").parse().unwrap();
    assert!((p1 + 1.0).abs() <= 0.1, "{p1}");

    let out2 = dir.path().join("i2.csv");
    let o = qcf(&["infsup", "--phi2F", "-0.1", "--N-list", "64,128,256,512,1024", "--p-list", "2", "--out", out2.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let p2: f64 = summary(&out2, "slope_exact_p2").parse().unwrap();
    assert!((p2 + 0.5).abs() <= 0.1, "{p2}");
}

#[test]
fn convergence_default_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("conv.csv");
    let o = qcf(&["convergence", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(header(&out), "N,K,M,eps,err_strain_inf,bound_rhs,trunc_star,trunc_bound");
    let slope: f64 = summary(&out, "slope_err_vs_eps").parse().unwrap();
    assert!((slope - 2.0).abs() <= 0.2);
    for row in data_rows(&out) {
        let v: Vec<f64> = row.iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[4] <= v[5] && v[6] <= v[7]);
    }
}

#[test]
fn convergence_with_constant_load_is_exact() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("conv.json");
    let o = qcf(&["convergence", "--load", "const:1", "--N-list", "16,32", "--format", "json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["passed"], true);
    for row in doc["rows"].as_array().unwrap() {
        assert!(row["err_strain_inf"].as_f64().unwrap() < 1e-9);
    }
    assert_eq!(doc["config"]["load"], "const:1");
}

#[test]
fn dump_eqcf_row() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("e.csv");
    let o = qcf(&["dump-operator", "--operator", "Eqcf", "--N-list", "8", "--K", "2", "--phiF", "1", "--phi2F", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(header(&out), "row,col,value");
    let row: Vec<_> = data_rows(&out).into_iter().filter(|r| r[0] == "-3").collect();
    let got: Vec<(i64, f64)> = row.iter().map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap())).collect();
    assert_eq!(got, vec![(-3, 6.0), (-2, -2.0), (-1, 1.0)]);
}

#[test]
fn dump_la_rows_sum_to_zero_and_ea_is_symmetric() {
    let dir = TempDir::new().unwrap();
    let la = dir.path().join("la.csv");
    let o = qcf(&["dump-operator", "--operator", "La", "--N-list", "16", "--phi2F", "-0.1", "--out", la.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let mut sums = std::collections::BTreeMap::<i64, f64>::new();
    for r in data_rows(&la) {
        *sums.entry(r[0].parse().unwrap()).or_default() += r[2].parse::<f64>().unwrap();
    }
    assert!(sums.values().all(|s| s.abs() < 1e-9));

    let ea = dir.path().join("ea.csv");
    let o = qcf(&["dump-operator", "--operator", "ea", "--N-list", "8", "--phi2F", "-0.1", "--out", ea.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let triples: Vec<(String, String, String)> =
        data_rows(&ea).into_iter().map(|r| (r[0].clone(), r[1].clone(), r[2].clone())).collect();
    for (i, j, v) in &triples {
        assert!(triples.contains(&(j.clone(), i.clone(), v.clone())));
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("c.csv");
    fs::write(&cfg, format!("# coercivity sweep\nphiF = 1\nphi2F = -0.2\nN-list = 16, 32\nout = {}\n", out.display())).unwrap();
    let o = qcf(&["coercivity", "--config", cfg.to_str().unwrap(), "--N-list", "24"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "24");

    fs::write(&cfg, "phiF = 1\nphi2F = minus one\n").unwrap();
    let o = qcf(&["coercivity", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(":2") && err.contains("phi2F"), "{err}");
}

#[test]
fn output_is_deterministic_across_job_counts() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = |p: &Path, jobs: &'static str| {
        vec!["eig-scan".to_string(), "--N-list".into(), "16,24,32".into(), "--jobs".into(), jobs.into(), "--out".into(), p.to_str().unwrap().into()]
    };
    for (p, j) in [(&a, "1"), (&b, "3")] {
        let o = Command::new(env!("CARGO_BIN_EXE_qcf")).args(args(p, j)).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(data_rows(&a), data_rows(&b));
}
