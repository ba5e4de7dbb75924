//! Drives the command-line interface in-process: synth, train, pick, qc.

use std::ffi::OsString;

fn run(args: &[&str]) -> i32 {
    let argv: Vec<OsString> = std::iter::once("velopick").chain(args.iter().copied()).map(OsString::from).collect();
    println!("$ velopick {}", args.join(" "));
    velopick::cli::run(argv)
}

fn main() {
    let root = std::env::temp_dir().join("velopick_cli_tour");
    let _ = std::fs::remove_dir_all(&root);
    let data = root.join("data");
    let model = root.join("model.vpk");
    let curves = root.join("picks");
    let qc = root.join("qc");
    let (data, model, curves, qc) = (data.to_str().unwrap(), model.to_str().unwrap(), curves.to_str().unwrap(), qc.to_str().unwrap());
    let steps: [Vec<&str>; 4] = [
        vec!["synth", "--out", data, "--ncdp", "8", "--train-lines", "2", "--val-lines", "1", "--test-lines", "1", "--seed", "3"],
        vec![
            "train", "--data", data, "--out", model, "--height", "32", "--width", "16", "--depth", "2", "--base", "4",
            "--sgs-channels", "4", "--max-iter", "20", "--validate-every", "5", "--batch", "8",
        ],
        vec!["pick", "--model", model, "--data", data, "--split", "test", "--curves", curves],
        vec!["qc", "--line", data, "--curves", curves, "--line-id", "3", "--out", qc],
    ];
    for step in &steps {
        let code = run(step);
        if code != 0 {
            eprintln!("exit code {code}");
            std::process::exit(code);
        }
    }
    println!("outputs under {}", root.display());
}
