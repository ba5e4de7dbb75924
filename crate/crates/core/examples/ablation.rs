//! Four-row ablation on a tiny synthetic survey; writes ablation.csv.
//!
//! Pass an iteration cap as the first argument (default 60).

use velopick::features::SgsSettings;
use velopick::mifn::MifnConfig;
use velopick::pick::PickConfig;
use velopick::pipeline::{ablate, write_ablation, AblationConfig, SynthConfig};
use velopick::train::TrainConfig;

fn main() -> velopick::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let dir = std::env::temp_dir().join("velopick_ablation");
    let mut synth = SynthConfig::desk();
    synth.line.n_cdp = 10;
    synth.snr_db = Some(0.0);
    let cfg = AblationConfig {
        synth,
        train_lines: 3,
        val_lines: 1,
        test_lines: 1,
        net: MifnConfig {
            height: 64,
            width: 32,
            base_channels: 8,
            sgs_channels: 8,
            ..MifnConfig::default()
        },
        train: TrainConfig {
            max_iterations: iterations,
            batch_size: 16,
            ..TrainConfig::default()
        },
        settings: SgsSettings::default(),
        pick: PickConfig::default(),
    };
    let rows = ablate(dir.join("data"), &cfg)?;
    for r in &rows {
        println!("{:<24} {:>8.2} m/s", r.variant, r.vmae_mps);
    }
    write_ablation(dir.join("ablation.csv"), &rows)?;
    println!("wrote {}", dir.join("ablation.csv").display());
    Ok(())
}
