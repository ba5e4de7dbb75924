//! The nine multi-scale observation maps of a noisy spectrum.

use velopick::enhance::{multiscale_stack, PARAMETER_GRID};
use velopick::pipeline::SynthConfig;
use velopick::rng::SeedTree;
use velopick::spectrum::semblance;
use velopick::synth::{make_gather, random_model};

fn main() -> velopick::Result<()> {
    let cfg = SynthConfig::desk();
    let seed = SeedTree::new(4);
    let model = random_model(&cfg.random, &mut seed.named("model").rng())?;
    let (gather, _) = make_gather(&model, &cfg.geometry, cfg.noise(), &mut seed.named("noise").rng())?;
    let spectrum = semblance(&gather, &cfg.taxis, &cfg.vaxis, cfg.window_half)?;

    let stack = multiscale_stack(&spectrum);
    println!("channel  ws st eec  ln   mean   nonzero");
    for (i, g) in stack.iter().enumerate() {
        let mean = g.values().iter().map(|v| *v as f64).sum::<f64>() / g.values().len() as f64;
        let live = g.values().iter().filter(|v| **v > 0.0).count() as f64 / g.values().len() as f64;
        match i.checked_sub(1).map(|k| PARAMETER_GRID[k]) {
            None => println!("original              {mean:.3}   {:.0}%", 100.0 * live),
            Some(p) => println!("row {}    {:>2} {:>2} {:.1} {:>3}   {mean:.3}   {:.0}%", i - 1, p.ws, p.st, p.eec, p.ln, 100.0 * live),
        }
    }
    Ok(())
}
