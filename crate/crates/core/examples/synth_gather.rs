//! Simulates a three-layer CMP gather at 10 dB and reports its truth curve.

use velopick::rng::SeedTree;
use velopick::spectrum::AcquisitionGeometry;
use velopick::synth::{make_gather, power, LayerModel, Noise};

fn main() -> velopick::Result<()> {
    let model = LayerModel::from_layers(&[(0.3, 1700.0), (0.55, 2300.0), (0.8, 2900.0)])?;
    let geometry = AcquisitionGeometry::regular(24, 100.0, 2400.0, 0.004, 500)?;
    let (gather, truth) = make_gather(&model, &geometry, Noise::snr_db(10.0), &mut SeedTree::new(1).rng())?;

    println!("{} traces x {} samples, mean power {:.4}", gather.geometry.traces(), gather.geometry.taxis.n_t, power(gather.traces.values()));
    println!("truth stacking velocities:");
    for (t, v) in truth.points() {
        println!("  t0 {t:.3} s  v_rms {v:.1} m/s");
    }
    let out = std::env::temp_dir().join("velopick_gather.vpk");
    velopick::io::write_gather(&out, &gather)?;
    println!("wrote {}", out.display());
    Ok(())
}
