//! The command line pipeline driven in-process, from simulation to diversity.
//!
//! Run with `cargo run --release --example pipeline -- [out_dir]`. The same
//! stages are available from the `phibp` binary.

use phibp::cli::cli_main;
use std::path::PathBuf;

const CONFIG: &str = r#"{
  "simulation": {
    "base": {"alpha": 0.7, "theta": 5.0, "zeta": 1.0},
    "groups": [{"alpha": 0.3, "theta": 1.0, "zeta": 1.0}, {"alpha": 0.6, "theta": 2.0, "zeta": 1.0}],
    "samples": [50, 50]
  },
  "chains": 2, "steps": 1000, "burn_in": 500, "thin": 10, "draws": 10
}"#;

fn main() -> anyhow::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("phibp-pipeline"));
    std::fs::create_dir_all(&root)?;
    let p = |s: &str| root.join(s).display().to_string();
    std::fs::write(root.join("config.json"), CONFIG)?;
    let cfg = p("config.json");
    let (train, train_s, test, test_s, fit) =
        (p("split/train.csv"), p("split/train_samples.csv"), p("split/test.csv"), p("split/test_samples.csv"), p("fit/fit.json"));
    let data = ["--counts", &train, "--samples", &train_s, "--config", &cfg];
    let draws = [&data[..], &["--fit", &fit]].concat();
    let with_test = [&draws[..], &["--test", &test, "--test-samples", &test_s]].concat();
    let steps: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--config".into(), cfg.clone(), "--seed".into(), "7".into(), "--out".into(), p("sim")],
        ["split", "--counts", &p("sim/counts.csv"), "--samples", &p("sim/samples.csv"), "--big-m", "40", "--m", "10", "--out", &p("split")]
            .map(String::from)
            .to_vec(),
        [&["fit"][..], &data, &["--out", &p("fit")]].concat().iter().map(|s| s.to_string()).collect(),
        ["diagnose", "--fit", &fit, "--out", &p("fit")].map(String::from).to_vec(),
        [&["posterior"][..], &draws, &["--out", &p("posterior")]].concat().iter().map(|s| s.to_string()).collect(),
        [&["predict"][..], &with_test, &["--out", &p("predict")]].concat().iter().map(|s| s.to_string()).collect(),
        [&["ppc"][..], &with_test, &["--out", &p("ppc")]].concat().iter().map(|s| s.to_string()).collect(),
        [&["diversity"][..], &draws, &["--out", &p("diversity")]].concat().iter().map(|s| s.to_string()).collect(),
    ];
    for args in steps {
        println!("phibp {}", args[0]);
        let code = cli_main(std::iter::once("phibp".to_string()).chain(args));
        anyhow::ensure!(code == 0, "stage failed with exit code {code}");
    }
    println!("outputs in {}", root.display());
    Ok(())
}
