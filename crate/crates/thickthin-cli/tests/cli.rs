//! The `thickthin` binary: exit codes, artifacts and file round trips.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thickthin"))
}

fn write_config(dir: &Path, name: &str, config: Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    p
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    bin().arg("--config").arg(config).arg("--out").arg(out).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generator(g: Value) -> Value {
    json!({ "schema": 1, "seed": 11, "surface": { "generator": g } })
}

fn bubble() -> Value {
    generator(json!({ "id": "bubble", "eps": 1e-14 }))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn constants_defaults() {
    let o = bin().arg("constants").output().unwrap();
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let d = &v["derived"];
    let (l0, l1) = (d["l0"].as_f64().unwrap(), d["l1"].as_f64().unwrap());
    assert!((l1 - 4.0 * l0).abs() < 1e-12);
}

#[test]
fn constants_report_log3_term() {
    let dir = TempDir::new().unwrap();
    let mut c = generator(json!({ "id": "uniform" }));
    c["constants"] = json!({ "c3": 1.0 });
    let cfg = write_config(dir.path(), "c.json", c);
    let o = run(&cfg, dir.path(), &["constants"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let terms = v["derived"]["l0_terms"].as_array().unwrap();
    let log3 = terms.iter().find(|t| t[0] == "log 3 / c3").unwrap()[1].as_f64().unwrap();
    assert!((log3 - 1.0986).abs() < 1e-4);
}

#[test]
fn config_rejections() {
    let dir = TempDir::new().unwrap();
    let mut c = generator(json!({ "id": "uniform" }));
    c["constants"] = json!({ "delta2": 0.5 });
    let cfg = write_config(dir.path(), "bad.json", c);
    let o = run(&cfg, dir.path(), &["constants"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("delta2"));

    let cfg = write_config(dir.path(), "noseed.json", json!({ "schema": 1, "surface": { "generator": { "id": "uniform" } } }));
    assert_eq!(code(&run(&cfg, dir.path(), &["constants"])), 1);

    let mut c = generator(json!({ "id": "uniform" }));
    c["schema"] = json!(2);
    let cfg = write_config(dir.path(), "schema.json", c);
    assert_eq!(code(&run(&cfg, dir.path(), &["constants"])), 1);
}

fn generated_mass(g: Value) -> (f64, Value) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "g.json", generator(g));
    let o = run(&cfg, dir.path(), &["generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(dir.path().join("density.csv").exists());
    (v["mass"].as_f64().unwrap(), v)
}

#[test]
fn generator_masses() {
    let identity = json!({ "num": [[0.0, 0.0], [1.0, 0.0]], "den": [[1.0, 0.0]] });
    let (m, _) = generated_mass(json!({ "id": "rational-pullback", "map": identity }));
    assert!((m - 4.0 * PI).abs() < 1e-9 * 4.0 * PI);
    let (m, _) = generated_mass(json!({ "id": "bubble", "eps": 1e-4 }));
    assert!((m - 8.0 * PI).abs() < 0.01 * 8.0 * PI);
    let (m, v) = generated_mass(json!({ "id": "torus-neck", "t": 20.0, "width": 1.0 }));
    let band = 4.0 * PI * (20.0 * PI).tanh();
    assert!((m - band).abs() < 0.01 * band);
    assert!(v["warning"].is_null());
    let (m, _) = generated_mass(json!({ "id": "two-bubble", "eps": 1e-6 }));
    assert!((m - 12.0 * PI).abs() < 0.01 * 12.0 * PI);
}

#[test]
fn uniform_sphere_has_empty_decomposition() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "u.json", generator(json!({ "id": "uniform" })));
    let o = run(&cfg, dir.path(), &["decompose"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = read_json(&dir.path().join("decomposition.json"));
    assert!(d["long_necks"].as_array().unwrap().is_empty());
    assert!(d["thin"].as_array().unwrap().is_empty());
}

#[test]
fn bubble_round_trip_and_artifacts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "b.json", bubble());
    let o = run(&cfg, dir.path(), &["decompose"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = read_json(&dir.path().join("decomposition.json"));
    assert_eq!(d["thin"].as_array().unwrap().len(), 1);
    assert_eq!(d["thick"].as_array().unwrap().len(), 2);
    let first = std::fs::read(dir.path().join("report.json")).unwrap();
    for (name, header) in [
        ("decay_profiles.csv", "thin,x,sup_density,bound"),
        ("vertex_margins.csv", "vertex,genus"),
        ("boundaries.csv", "thin,end,k,s,theta"),
        ("density_heatmap.csv", "row,col,s,theta,density"),
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.starts_with(header), "{name}");
        assert!(text.lines().count() > 1, "{name}");
    }

    let o = run(&cfg, dir.path(), &["verify"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), first);

    let o = run(&cfg, dir.path(), &["report"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("dual graph: 2 vertices, 1 edges"));
    assert!(text.contains("verifier: pass true"));
}

#[test]
fn identical_seed_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "b.json", bubble());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run(&cfg, &a, &["decompose"])), 0);
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&b).args(["--threads", "2", "decompose"]).output().unwrap();
    assert_eq!(code(&o), 0);
    for f in ["decomposition.json", "report.json", "axioms.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn density_file_matches_generator() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "b.json", bubble());
    let gen_out = dir.path().join("gen");
    assert_eq!(code(&run(&cfg, &gen_out, &["generate"])), 0);
    assert_eq!(code(&run(&cfg, &gen_out, &["decompose"])), 0);
    let file_cfg = write_config(
        dir.path(),
        "f.json",
        json!({ "schema": 1, "seed": 11, "surface": { "density": "gen/density.csv" } }),
    );
    let file_out = dir.path().join("file");
    let o = run(&file_cfg, &file_out, &["decompose"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        std::fs::read(gen_out.join("decomposition.json")).unwrap(),
        std::fs::read(file_out.join("decomposition.json")).unwrap()
    );
}

#[test]
fn surface_hash_mismatch_is_an_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "b.json", bubble());
    assert_eq!(code(&run(&cfg, dir.path(), &["decompose"])), 0);
    let other = write_config(dir.path(), "o.json", generator(json!({ "id": "bubble", "eps": 1e-13 })));
    let o = run(&other, dir.path(), &["verify"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("surface hash mismatch"));
}

#[test]
fn axiom_failure_and_force() {
    let dir = TempDir::new().unwrap();
    let spike = json!({ "id": "bumps", "background": 0.01, "amplitude": 1000.0, "sigma": 0.01, "centers": [[0.0, 1.0]] });
    let cfg = write_config(dir.path(), "s.json", generator(spike));
    let o = run(&cfg, dir.path(), &["verify-axioms"]);
    assert_eq!(code(&o), 2);
    let o = run(&cfg, dir.path(), &["decompose"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gradient"));
    assert!(!dir.path().join("decomposition.json").exists());
    // the whole sphere carries less than delta1 / 2
    let o = run(&cfg, dir.path(), &["--force", "decompose"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("unstable"));
}

#[test]
fn edited_decompositions_fail_verification() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "b.json", bubble());
    assert_eq!(code(&run(&cfg, dir.path(), &["decompose"])), 0);
    let d = read_json(&dir.path().join("decomposition.json"));

    let mut dup = d.clone();
    let extra = dup["thin"][0].clone();
    dup["thin"].as_array_mut().unwrap().push(extra);
    let p = dir.path().join("dup.json");
    std::fs::write(&p, serde_json::to_vec(&dup).unwrap()).unwrap();
    let o = run(&cfg, dir.path(), &["verify", "--decomposition", p.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("disjoint"));

    let mut short = d.clone();
    short["thin"][0]["thin"] = short["thin"][0]["representative"].clone();
    let p = dir.path().join("short.json");
    std::fs::write(&p, serde_json::to_vec(&short).unwrap()).unwrap();
    let o = run(&cfg, dir.path(), &["verify", "--decomposition", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("window"), "{}", stderr(&o));
}
