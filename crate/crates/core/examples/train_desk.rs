//! Trains a small network on a synthetic dataset and reports its test VMAE.
//!
//! `cargo run --release --example train_desk -- 300` caps training at 300
//! iterations (default 150).

use velopick::dataset::Split;
use velopick::features::{reference_curve, SgsSettings};
use velopick::mifn::MifnConfig;
use velopick::pick::PickConfig;
use velopick::pipeline::{line_plan, mean_vmae, pick_entries, synth_dataset, SynthConfig};
use velopick::train::{train_dataset, write_history, TrainConfig};

fn main() -> velopick::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(150);
    let dir = std::env::temp_dir().join("velopick_train_desk");
    let mut cfg = SynthConfig::desk();
    cfg.line.n_cdp = 15;
    let ds = synth_dataset(&dir, &cfg, &line_plan(4, 1, 1), 7)?;

    let net = MifnConfig {
        height: 64,
        width: 32,
        base_channels: 8,
        sgs_channels: 8,
        ..MifnConfig::default()
    };
    let tc = TrainConfig {
        max_iterations: iterations,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    let settings = SgsSettings::default();
    let outcome = train_dataset(&ds, net, &tc, &settings, None)?;
    for row in &outcome.history {
        println!("iter {:>5}  train {:.4}  val {:.4}", row.iter, row.train_bce, row.val_bce);
    }
    println!("best validation BCE {:.4} at iteration {}", outcome.best_val, outcome.best_iter);
    write_history(dir.join("loss.csv"), &outcome.history)?;
    outcome.net.save(dir.join("model.vpk"))?;

    let reference = reference_curve(&ds)?;
    let test = ds.split_entries(Split::Test);
    let picks = pick_entries(&ds, &outcome.net, &test, reference.as_ref(), &settings, &PickConfig::default())?;
    println!("test VMAE {:.1} m/s over {} cdps; model in {}", mean_vmae(&ds, &picks)?, test.len(), dir.display());
    Ok(())
}
