use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brownpack::geometry::{angular_distance, pairwise_distances};
use brownpack::io::{read_container, read_ensemble, read_variations, write_container, Artifact};
use brownpack::{EmbeddingVector, LatentVector, ModelKind, ModelSpec};
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_brownpack");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BROWNPACK_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bytes(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn embed(spec: &ModelSpec, latents: &[LatentVector]) -> Vec<EmbeddingVector> {
    let model = spec.build().unwrap();
    latents.iter().map(|w| model.embed(w).unwrap()).collect()
}

const SMALL: &[&str] = &["--model", "identity", "--d-w", "6", "--n-id", "12", "--seed", "3"];

fn langevin(out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["langevin", "-o", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn langevin_writes_four_deterministic_files() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    langevin(&a, &["--n-iter", "20"]);
    langevin(&b, &["--n-iter", "20"]);
    for f in ["ensemble.bide", "trace.bide", "stats.json", "config.json"] {
        assert_eq!(bytes(a.join(f)), bytes(b.join(f)), "{f}");
    }
    let e = read_ensemble(a.join("ensemble.bide")).unwrap();
    assert_eq!(e.len(), 12);
    assert_eq!(e.iterations_done, 20);
}

#[test]
fn zero_iterations_keeps_the_initialisation() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    langevin(&a, &["--n-iter", "0"]);
    let e = read_ensemble(a.join("ensemble.bide")).unwrap();
    let spec = ModelSpec {
        kind: ModelKind::Identity,
        d_w: 6,
        d_e: 6,
        seed: 0,
        hidden: None,
    };
    let init = brownpack::dynamics::langevin_init(12, &spec, 3, 1.0).unwrap();
    assert_eq!(e.latents, init.latents);
    assert_eq!(e.iterations_done, 0);
}

#[test]
fn resumed_run_matches_a_single_run() {
    let dir = TempDir::new().unwrap();
    let (whole, first, second) = (dir.path().join("w"), dir.path().join("f"), dir.path().join("s"));
    langevin(&whole, &["--n-iter", "30"]);
    langevin(&first, &["--n-iter", "12"]);
    let input = first.join("ensemble.bide");
    langevin(&second, &["--n-iter", "18", "--input", s(&input)]);
    let a = read_ensemble(whole.join("ensemble.bide")).unwrap();
    let b = read_ensemble(second.join("ensemble.bide")).unwrap();
    assert_eq!(b.iterations_done, 30);
    assert_eq!(a.latents, b.latents);
}

#[test]
fn resume_rejects_a_different_model() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    langevin(&a, &["--n-iter", "2"]);
    let input = a.join("ensemble.bide");
    let b = dir.path().join("b");
    let args = [
        "langevin",
        "-o",
        s(&b),
        "--model",
        "identity",
        "--d-w",
        "7",
        "--input",
        s(&input),
    ];
    assert_eq!(code(&args), 1);
}

#[test]
fn worker_count_does_not_change_bytes() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    langevin(&a, &["--n-iter", "15", "--workers", "1", "--n-tr", "8"]);
    langevin(&b, &["--n-iter", "15", "--workers", "4", "--n-tr", "8"]);
    for f in ["ensemble.bide", "trace.bide", "stats.json"] {
        assert_eq!(bytes(a.join(f)), bytes(b.join(f)), "{f}");
    }
}

#[test]
fn zero_workers_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    assert_eq!(code(&["langevin", "-o", s(&a), "--workers", "0", "--n-iter", "1"]), 1);
}

fn reference(dir: &Path) -> PathBuf {
    let a = dir.join("ref");
    langevin(&a, &["--n-iter", "10"]);
    a.join("ensemble.bide")
}

#[test]
fn disco_without_mixing_equals_dispersion() {
    let dir = TempDir::new().unwrap();
    let r = reference(dir.path());
    let cov = dir.path().join("cov.bide");
    let mut e0 = vec![0.0; 6];
    e0[0] = 1.0;
    let basis = brownpack::covariates::CovariateBasis::new(vec![LatentVector(e0)], vec!["x".into()]).unwrap();
    write_container(&cov, &Artifact::Covariates { basis, fit: None }).unwrap();
    let (d, c) = (dir.path().join("d"), dir.path().join("c"));
    let common = ["--n-var", "3", "--n-iter-disp", "5", "--xi0", "0.2", "--seed", "9"];
    let mut da = vec!["dispersion", "-o", s(&d), "--reference", s(&r)];
    da.extend_from_slice(&common);
    ok(&da);
    let mut ca = vec![
        "disco",
        "-o",
        s(&c),
        "--reference",
        s(&r),
        "--covariates",
        s(&cov),
        "--lambda0",
        "0",
    ];
    ca.extend_from_slice(&common);
    ok(&ca);
    // The containers differ only in the stored lambda0.
    let (vd, vc) = (
        read_variations(d.join("variations.bide")).unwrap(),
        read_variations(c.join("variations.bide")).unwrap(),
    );
    assert_eq!(vd.variations, vc.variations);
    assert_eq!(vc.params.lambda0, 0.0);
    assert_eq!(bytes(d.join("trace.bide")), bytes(c.join("trace.bide")));
}

#[test]
fn missing_inputs_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let o = dir.path().join("o");
    assert_eq!(code(&["dispersion", "-o", s(&o)]), 1);
    let r = reference(dir.path());
    assert_eq!(code(&["disco", "-o", s(&o), "--reference", s(&r)]), 1);
    assert_eq!(code(&["erode", "-o", s(&o)]), 1);
    assert_eq!(code(&["fit-directions", "-o", s(&o)]), 1);
}

#[test]
fn covariate_dimension_mismatch_exits_1() {
    let dir = TempDir::new().unwrap();
    let r = reference(dir.path());
    let cov = dir.path().join("cov.bide");
    let basis =
        brownpack::covariates::CovariateBasis::new(vec![LatentVector(vec![1.0, 0.0, 0.0])], vec!["short".into()])
            .unwrap();
    write_container(&cov, &Artifact::Covariates { basis, fit: None }).unwrap();
    let o = dir.path().join("o");
    let args = [
        "disco",
        "-o",
        s(&o),
        "--reference",
        s(&r),
        "--covariates",
        s(&cov),
        "--lambda0",
        "0.5",
    ];
    assert_eq!(code(&args), 1);
}

#[test]
fn unreadable_container_exits_3() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.bide");
    fs::write(&bad, b"not a container").unwrap();
    let o = dir.path().join("o");
    assert_eq!(code(&["stats", "-o", s(&o), "--input", s(&bad)]), 3);
    let missing = dir.path().join("missing.bide");
    assert_eq!(code(&["stats", "-o", s(&o), "--input", s(&missing)]), 3);
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"n_id": 4, "not_a_key": 1}"#).unwrap();
    let o = dir.path().join("o");
    assert_eq!(code(&["langevin", "-o", s(&o), "-c", s(&cfg)]), 1);
}

/// Orthonormal identities under the identity model sit at exactly pi/2 from each other.
#[test]
fn stats_on_orthonormal_identities() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    ok(&[
        "langevin",
        "-o",
        s(&a),
        "--model",
        "identity",
        "--d-w",
        "6",
        "--n-id",
        "6",
        "--n-iter",
        "0",
    ]);
    let mut e = read_ensemble(a.join("ensemble.bide")).unwrap();
    e.latents = (0..6)
        .map(|i| {
            let mut v = vec![0.0; 6];
            v[i] = 2.0;
            LatentVector(v)
        })
        .collect();
    let input = dir.path().join("ortho.bide");
    write_container(&input, &Artifact::Identities(e)).unwrap();
    let o = dir.path().join("o");
    let summary = ok(&[
        "stats",
        "-o",
        s(&o),
        "--input",
        s(&input),
        "--n-bins",
        "4",
        "--ict",
        "1.5",
    ])["summary"]
        .clone();
    assert_eq!(summary["rho_threshold"], 0.0);
    assert_eq!(summary["contacts_per_identity"], 0.0);
    let mean = summary["mean_inter_class_distance"].as_f64().unwrap();
    assert!((mean - std::f64::consts::FRAC_PI_2).abs() < 1e-12);

    let csv = fs::read_to_string(o.join("inter_class_hist.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bin_left,bin_right,count");
    assert_eq!(lines.len(), 5);
    let counts: Vec<u64> = lines[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    // pi/2 is the left edge of the third bin.
    assert_eq!(counts, vec![0, 0, 15, 0]);
}

#[test]
fn infeasible_reject_exits_2_with_counts() {
    let dir = TempDir::new().unwrap();
    let o = dir.path().join("o");
    let out = run(&[
        "reject",
        "-o",
        s(&o),
        "--model",
        "identity",
        "--d-w",
        "4",
        "--n-id",
        "10",
        "--ict",
        "3.1",
        "--max-attempts",
        "50",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["target"], 10);
    assert_eq!(v["attempts"], 50);
    assert_eq!(v["accepted"], 1);
}

#[test]
fn reject_output_respects_threshold() {
    let dir = TempDir::new().unwrap();
    let o = dir.path().join("o");
    ok(&[
        "reject",
        "-o",
        s(&o),
        "--model",
        "identity",
        "--d-w",
        "8",
        "--n-id",
        "10",
        "--ict",
        "1.0",
    ]);
    let e = read_ensemble(o.join("ensemble.bide")).unwrap();
    assert_eq!(e.len(), 10);
    let d = pairwise_distances(&embed(&e.model_spec, &e.latents)).unwrap();
    assert!(d.pairs().all(|(_, _, x)| x > 1.0));
    let attempts: Value = serde_json::from_slice(&bytes(o.join("attempts.json"))).unwrap();
    assert_eq!(attempts["attempts_at_acceptance"].as_array().unwrap().len(), 10);
}

#[test]
fn erode_without_contacts_keeps_everyone() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    langevin(&a, &["--n-iter", "0"]);
    let input = a.join("ensemble.bide");
    let o = dir.path().join("o");
    ok(&["erode", "-o", s(&o), "--input", s(&input), "--ict", "0"]);
    let listing: Value = serde_json::from_slice(&bytes(o.join("survivors.json"))).unwrap();
    let survivors: Vec<u64> = serde_json::from_value(listing["survivors"].clone()).unwrap();
    assert_eq!(survivors, (0..12).collect::<Vec<_>>());
    assert_eq!(bytes(o.join("ensemble.bide")).len(), bytes(input).len());
}

#[test]
fn erode_leaves_no_contacts() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    langevin(&a, &["--n-iter", "0"]);
    let input = a.join("ensemble.bide");
    let o = dir.path().join("o");
    ok(&["erode", "-o", s(&o), "--input", s(&input), "--ict", "1.4"]);
    let e = read_ensemble(o.join("ensemble.bide")).unwrap();
    let d = pairwise_distances(&embed(&e.model_spec, &e.latents)).unwrap();
    assert!(d.pairs().all(|(_, _, x)| x >= 1.4));
}

#[test]
fn fit_directions_recovers_a_planted_axis() {
    let dir = TempDir::new().unwrap();
    let labeled = dir.path().join("labeled.json");
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        let jitter = (i as f64 * 0.37).sin() * 0.1;
        latents.push(vec![jitter, 2.0 * y, -jitter]);
        labels.push(y as i8);
    }
    let doc = serde_json::json!({"directions": [{"name": "axis1", "latents": latents, "labels": labels}]});
    fs::write(&labeled, doc.to_string()).unwrap();
    let o = dir.path().join("o");
    ok(&["fit-directions", "-o", s(&o), "--labeled", s(&labeled)]);
    let Artifact::Covariates { basis, fit } = read_container(o.join("covariates.bide")).unwrap() else {
        panic!("not a covariates container");
    };
    assert_eq!(basis.names(), ["axis1".to_string()]);
    assert_eq!(fit.unwrap().method, "ridge_least_squares");
    let v = &basis.directions()[0].0;
    assert!(v[1] > 0.99, "{v:?}");
}

#[test]
fn single_class_labels_exit_2() {
    let dir = TempDir::new().unwrap();
    let labeled = dir.path().join("labeled.json");
    let doc = serde_json::json!({"directions": [{"name": "a", "latents": [[1.0, 0.0], [0.0, 1.0]], "labels": [1, 1]}]});
    fs::write(&labeled, doc.to_string()).unwrap();
    let o = dir.path().join("o");
    assert_eq!(code(&["fit-directions", "-o", s(&o), "--labeled", s(&labeled)]), 2);
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    langevin(&a, &["--n-iter", "8", "--d0-e", "1.2", "--eta0", "0.05"]);
    let cfg = a.join("config.json");
    ok(&["langevin", "-o", s(&b), "-c", s(&cfg)]);
    for f in ["ensemble.bide", "trace.bide", "stats.json", "config.json"] {
        assert_eq!(bytes(a.join(f)), bytes(b.join(f)), "{f}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"model": "identity", "d_w": 5, "n_id": 4, "n_iter": 1, "d0_e": 1.0}"#,
    )
    .unwrap();
    let o = dir.path().join("o");
    ok(&["langevin", "-o", s(&o), "-c", s(&cfg), "--d0-e", "1.54"]);
    let saved: Value = serde_json::from_slice(&bytes(o.join("config.json"))).unwrap();
    assert_eq!(saved["d0_e"], 1.54);
    assert_eq!(saved["d_w"], 5);
}

/// The dispersion summary is recomputed here from the saved variations.
#[test]
fn dispersion_stats_match_saved_variations() {
    let dir = TempDir::new().unwrap();
    let r = reference(dir.path());
    let o = dir.path().join("o");
    let v = ok(&[
        "dispersion",
        "-o",
        s(&o),
        "--reference",
        s(&r),
        "--n-var",
        "4",
        "--n-iter-disp",
        "6",
        "--xi0",
        "0.1",
    ]);
    let set = read_variations(o.join("variations.bide")).unwrap();
    assert_eq!((set.n_id(), set.n_var()), (12, 4));
    let mut total = 0.0;
    let mut pairs = 0;
    let mut to_ref = 0.0;
    for (vars, r) in set.variations.iter().zip(&set.reference_embeddings) {
        let vars = embed(&set.reference.model_spec, vars);
        for i in 0..vars.len() {
            to_ref += angular_distance(&vars[i], r).unwrap();
            for j in i + 1..vars.len() {
                total += angular_distance(&vars[i], &vars[j]).unwrap();
                pairs += 1;
            }
        }
    }
    let stats = &v["stats"];
    let mean = stats["mean_intra_class_distance"].as_f64().unwrap();
    assert!((mean - total / pairs as f64).abs() < 1e-12);
    let mref = stats["mean_distance_to_reference"].as_f64().unwrap();
    assert!((mref - to_ref / 48.0).abs() < 1e-12);
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["langevin", "--help"]), 0);
    assert_eq!(code(&["no-such-command"]), 1);
}
