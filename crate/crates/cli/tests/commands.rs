use anchorkit_cli::{run_from, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("anchorkit").chain(args.iter().copied());
    let code = run_from(argv, &mut out, &mut err);
    Run { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn last_row(csv: &str) -> Vec<f64> {
    csv.lines().last().unwrap().split(',').map(|c| c.parse().unwrap()).collect()
}

#[test]
fn simulate_circle_converges() {
    let r = run(&["--system", "circle", "simulate", "--x0", "1.5,0", "--t-end", "20", "--alpha", "0.5"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().next().unwrap(), "t,x1,x2,V,fh_1,fh_2,fv_1,fv_2");
    let row = last_row(&r.stdout);
    assert_eq!(row[0], 20.0);
    assert!(((row[1] * row[1] + row[2] * row[2]).sqrt() - 1.0).abs() < 1e-6);
}

#[test]
fn simulate_point_follows_exponential() {
    let r = run(&["--system", "point", "simulate", "--x0", "3,4", "--t-end", "10"]);
    assert_eq!(r.code, EXIT_OK);
    let row = last_row(&r.stdout);
    let norm = (row[1] * row[1] + row[2] * row[2]).sqrt();
    assert!((norm - 5.0 * (-10.0f64).exp()).abs() < 1e-9);
}

#[test]
fn simulate_rejects_bad_input() {
    assert_eq!(run(&["--system", "circle", "simulate", "--x0", "3,0"]).code, EXIT_CONFIG);
    assert_eq!(run(&["--system", "circle", "simulate", "--x0", "1,0,0"]).code, EXIT_CONFIG);
    assert_eq!(run(&["--system", "torus", "simulate", "--x0", "1,0"]).code, EXIT_CONFIG);
    assert_eq!(run(&["simulate", "--x0", "1,0"]).code, EXIT_CONFIG);
    assert_eq!(run(&["--system", "circle", "--alpha", "-1", "simulate", "--x0", "1,0"]).code, EXIT_CONFIG);
}

#[test]
fn verify_passes_and_fault_fails() {
    let r = run(&["--system", "circle", "verify", "--samples", "500", "--seed", "7"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let doc: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    let records = doc.as_array().unwrap();
    assert!(records.iter().all(|c| c["passed"] == true));
    assert!(records.iter().any(|c| c["name"] == "lift" && c["samples"] == 500));

    let r = run(&["--system", "circle", "verify", "--samples", "50", "--break-vertical"]);
    assert_eq!(r.code, EXIT_CHECK_FAILED);
    let doc: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    let lift = doc.as_array().unwrap().iter().find(|c| c["name"] == "lift").unwrap();
    assert_eq!(lift["passed"], false);
    assert!(lift["max_residual"].as_f64().unwrap() > 1e-8);
}

#[test]
fn verify_double_pendulum_with_fd() {
    let r = run(&["--system", "double_pendulum", "verify", "--fd"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
}

#[test]
fn verify_csv_is_reproducible() {
    let a = run(&["--system", "sphere", "verify", "--seed", "11", "--csv"]);
    let b = run(&["--system", "sphere", "verify", "--seed", "11", "--csv"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout.lines().next().unwrap(), "name,samples,max_residual,threshold,passed");
    let c = run(&["--system", "sphere", "verify", "--seed", "12", "--csv"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn config_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dp.cfg");
    std::fs::write(&cfg, "# default constants\nsystem = double_pendulum\ndelta = 0.5\n").unwrap();
    let out = dir.path().join("run");
    let r = run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "scan", "--grid", "36"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert!(r.stdout.is_empty());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "scan");
    assert_eq!(manifest["system"]["name"], "double_pendulum");
    assert_eq!(manifest["outputs"][0], "scan.csv");
    assert!(manifest["config"].as_str().unwrap().contains("delta = 0.5"));
    assert_eq!(std::fs::read_to_string(out.join("scan.csv")).unwrap().lines().count(), 37);

    let r = run(&["--config", cfg.to_str().unwrap(), "--system", "circle", "scan"]);
    assert_eq!(r.code, EXIT_CONFIG);
    std::fs::write(&cfg, "system = circle\nalpha = zero\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "scan"]).code, EXIT_CONFIG);
}

#[test]
fn scan_outputs() {
    let r = run(&["--system", "circle", "scan"]);
    assert_eq!(r.code, EXIT_OK);
    let dets: Vec<f64> = r.stdout.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(dets.len(), 360);
    assert!(dets.iter().all(|d| (d.abs() - dets[0].abs()).abs() < 1e-12));

    let one = run(&["--system", "double_pendulum", "scan", "--grid", "1"]);
    assert_eq!(one.stdout.lines().count(), 2);
    assert!(one.stderr.contains("min |det|"));

    assert_eq!(run(&["--system", "sphere", "scan"]).code, EXIT_CONFIG);
    assert_eq!(run(&["--system", "circle", "scan", "--grid", "0"]).code, EXIT_CONFIG);
}

#[test]
fn perturb_reports() {
    let r = run(&["--system", "circle", "perturb"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let doc: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(doc["eps"], 0.5);
    assert_eq!(doc["passed"], true);

    let r = run(&["--system", "circle", "perturb", "--eps", "0", "--bound", "1e-8"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);

    let dir = tempfile::tempdir().unwrap();
    let r = run(&["--system", "sphere", "--out", dir.path().to_str().unwrap(), "perturb"]);
    assert_eq!(r.code, EXIT_OK);
    let probe = std::fs::read_to_string(dir.path().join("probe_2.csv")).unwrap();
    assert_eq!(probe.lines().next().unwrap(), "t,x1,x2,x3,G_norm");

    assert_eq!(run(&["--system", "point", "perturb"]).code, EXIT_CONFIG);
    assert_eq!(run(&["--system", "circle", "perturb", "--eps", "-1"]).code, EXIT_CONFIG);
}

#[test]
fn second_order_outputs() {
    let r = run(&["--system", "double_pendulum", "second-order", "--mu", "1,10,100"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().next().unwrap(), "mu,sup_gap");
    assert_eq!(r.stdout.lines().count(), 4);

    let r = run(&["--system", "double_pendulum", "second-order", "--mu", "5", "--on-graph"]);
    assert!(last_row(&r.stdout)[1] < 1e-8);

    assert_eq!(run(&["--system", "double_pendulum", "second-order", "--mu", ""]).code, EXIT_CONFIG);
    assert_eq!(run(&["--system", "double_pendulum", "second-order", "--mu", "10,1"]).code, EXIT_CONFIG);
    assert_eq!(run(&["--system", "circle", "second-order"]).code, EXIT_CONFIG);
}

#[test]
fn rates_outputs() {
    let r = run(&["--system", "circle", "rates"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().next().unwrap(), "alpha,mu_fitted,r_squared");
    let one = run(&["--system", "circle", "rates", "--alphas", "0.5"]);
    assert_eq!(one.stdout.lines().count(), 2);
    assert_eq!(run(&["--system", "circle", "rates", "--alphas", "0.5,0"]).code, EXIT_CONFIG);
}
