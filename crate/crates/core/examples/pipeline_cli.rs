//! Drive the command-line pipeline in-process on a synthetic data directory:
//! learn-metric, score, analyze-dims, eval-scd, eval-wic and inspect.

use semshift::synthetic::{planted_drift, DriftConfig};

fn main() -> semshift::Result<()> {
    let dir = std::env::temp_dir().join("semshift-pipeline");
    std::fs::create_dir_all(&dir).map_err(|e| semshift::Error::Input(e.to_string()))?;
    planted_drift(&DriftConfig::default())?.write_to(&dir)?;
    let path = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let (store, metric, targets, gold, scores) =
        (path("store.bin"), path("metric.bin"), path("targets.tsv"), path("gold.tsv"), path("scores.tsv"));
    let (train, dev, dims, wic) = (path("train.tsv"), path("dev.tsv"), path("dims"), path("wic.txt"));

    let steps: [Vec<&str>; 6] = [
        vec!["learn-metric", "--store", &store, "--constraints", &train, "--dev", &dev, "--gamma-grid", "default",
             "--percentile-similar", "5", "--percentile-dissimilar", "95", "--out", &metric],
        vec!["score", "--store", &store, "--metric", &metric, "--targets", &targets, "--out", &scores],
        vec!["analyze-dims", "--store", &store, "--metric", &metric, "--targets", &targets, "--gold", &gold,
             "--out", &dims],
        vec!["eval-scd", "--scores", &scores, "--gold", &gold],
        vec!["eval-wic", "--store", &store, "--test", &dev, "--metric", &metric, "--out", &wic],
        vec!["inspect", "--path", &metric],
    ];
    for args in steps {
        println!("$ semshift {}", args[0]);
        let code = semshift::cli::run(std::iter::once("semshift").chain(args.iter().copied()));
        if code != 0 {
            eprintln!("{} exited with {code}", args[0]);
            std::process::exit(code);
        }
        println!();
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}
