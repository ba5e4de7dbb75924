//! Stacked gather slices for the centre cdp of a synthetic line.

use velopick::pipeline::SynthConfig;
use velopick::rng::SeedTree;
use velopick::sgs::{build_sgs, neighborhood, DEFAULT_K, DEFAULT_PERCENTAGES};
use velopick::synth::{make_line, random_model};

fn main() -> velopick::Result<()> {
    let cfg = SynthConfig::desk();
    let seed = SeedTree::new(2);
    let model = random_model(&cfg.random, &mut seed.named("model").rng())?;
    let line = make_line(&model, &cfg.geometry, &cfg.line, cfg.noise(), seed.named("noise"))?;

    let centre = line.len() / 2;
    let range = neighborhood(line.len(), centre, DEFAULT_K)?;
    let neighbours: Vec<_> = line[range.clone()].iter().map(|(g, _)| g).collect();
    // the truth curve of the centre cdp stands in for a reference pick
    let reference = &line[centre].1;
    let pack = build_sgs(&neighbours, reference, &DEFAULT_PERCENTAGES)?;

    println!("cdp {centre}, neighbours {range:?}, {} slices of {} x {}", pack.m(), pack.t(), pack.k());
    for (p, slice) in pack.percentages.iter().zip(&pack.slices) {
        let energy: f64 = slice.values().iter().map(|v| (*v as f64).powi(2)).sum();
        println!("  {:>4.0}% of reference: slice energy {energy:.2}", 100.0 * p);
    }
    Ok(())
}
