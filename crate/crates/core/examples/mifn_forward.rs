//! Builds each network variant and runs one batch through it.

use velopick::features::{collate, make_sample, SgsSettings};
use velopick::mifn::{split_maps, Mifn, MifnConfig, Variant};
use velopick::pipeline::SynthConfig;
use velopick::rng::SeedTree;
use velopick::sgs::{build_sgs, neighborhood};
use velopick::spectrum::semblance;
use velopick::synth::{make_line, random_model};
use velopick_autograd::nn::Module;

fn main() -> velopick::Result<()> {
    let cfg = SynthConfig::desk();
    let seed = SeedTree::new(3);
    let model = random_model(&cfg.random, &mut seed.named("model").rng())?;
    let line = make_line(&model, &cfg.geometry, &cfg.line, cfg.noise(), seed.named("noise"))?;
    let settings = SgsSettings::default();
    let dims = (64, 32);

    let mut samples = Vec::new();
    for c in [4, 10] {
        let spectrum = semblance(&line[c].0, &cfg.taxis, &cfg.vaxis, cfg.window_half)?;
        let neighbours: Vec<_> = line[neighborhood(line.len(), c, settings.k)?].iter().map(|(g, _)| g).collect();
        let pack = build_sgs(&neighbours, &line[c].1, &settings.percentages)?;
        samples.push(make_sample(&spectrum, Some(&pack), Some(&line[c].1), None, dims)?);
    }
    let refs: Vec<_> = samples.iter().collect();

    for variant in [Variant::Full, Variant::NoSfe, Variant::NoSgs] {
        let config = MifnConfig {
            height: dims.0,
            width: dims.1,
            base_channels: 8,
            sgs_channels: 8,
            variant,
            ..MifnConfig::default()
        };
        let net = Mifn::<f32>::new(config, SeedTree::new(0))?;
        let weights: usize = net.parameters().iter().map(|p| p.numel()).sum();
        let (batch, _) = collate::<f32>(&refs, variant)?;
        let maps = split_maps(&net.forward(&batch, false)?);
        println!(
            "{variant:?}: {} input channels, {weights} weights, output {}x{} in [{:.3}, {:.3}]",
            variant.input_channels(),
            maps[0].rows(),
            maps[0].cols(),
            maps[0].min(),
            maps[0].max()
        );
    }
    Ok(())
}
