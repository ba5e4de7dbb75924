//! Post-processing and QC without a network: soft labels of the truth act as
//! segmentation maps, with the shallowest rows blanked to exercise the fill.

use velopick::grid::Grid2D;
use velopick::pick::{qc_with_truth, segmentation_to_curve, velocity_field, PickConfig};
use velopick::pipeline::SynthConfig;
use velopick::rng::SeedTree;
use velopick::synth::{make_line, random_model, Noise};
use velopick::train::soft_label;

fn main() -> velopick::Result<()> {
    let cfg = SynthConfig::desk();
    let seed = SeedTree::new(5);
    let model = random_model(&cfg.random, &mut seed.named("model").rng())?;
    let line = make_line(&model, &cfg.geometry, &cfg.line, Noise::None, seed.named("noise"))?;

    let mut picked = Vec::new();
    let mut truth = Vec::new();
    for (_, curve) in &line {
        let curve = curve.resampled(&cfg.taxis)?;
        let label = soft_label(&curve, &cfg.taxis, &cfg.vaxis);
        let blank = cfg.taxis.n_t / 8;
        let map = Grid2D::from_fn(label.rows(), label.cols(), |r, c| if r < blank { 0.0 } else { label.get(r, c) });
        picked.push(segmentation_to_curve(&map, &cfg.taxis, &cfg.vaxis, &PickConfig::default())?);
        truth.push(curve);
    }
    let gathers: Vec<_> = line.iter().map(|(g, _)| g).collect();
    let report = qc_with_truth(&gathers, &picked, &truth, &cfg.taxis)?;
    let ideal = qc_with_truth(&gathers, &truth, &truth, &cfg.taxis)?;
    println!("VMAE of picks {:.2} m/s", report.vmae.unwrap_or(f64::NAN));
    println!("stack power: picked {:.1}, truth {:.1}, ratio {:.3}", report.total_power(), ideal.total_power(), report.total_power() / ideal.total_power());

    let field = velocity_field(&picked, &cfg.taxis)?;
    println!("velocity field {}x{} spanning {:.0}..{:.0} m/s", field.rows(), field.cols(), field.min(), field.max());
    Ok(())
}
