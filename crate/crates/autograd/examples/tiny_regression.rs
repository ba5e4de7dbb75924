//! Fits a 1x1 convolution to a known linear map with Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use velopick_autograd::nn::{Conv2d, Module};
use velopick_autograd::ops::{self, ConvGeometry};
use velopick_autograd::optim::{Adam, AdamConfig};
use velopick_autograd::Tensor;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let conv = Conv2d::<f64>::new(2, 1, ConvGeometry::new((1, 1), (1, 1), (0, 0)), true, &mut rng);
    let x: Vec<f64> = (0..2 * 2 * 4 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // target = 0.5 * channel0 - 2 * channel1 + 0.25
    let target: Vec<f64> = (0..2)
        .flat_map(|n| (0..16).map(move |i| (n, i)))
        .map(|(n, i)| 0.5 * x[n * 32 + i] - 2.0 * x[n * 32 + 16 + i] + 0.25)
        .collect();
    let x = Tensor::new(x, &[2, 2, 4, 4]);
    let target = Tensor::new(target, &[2, 1, 4, 4]);
    let neg = Tensor::full(&[2, 1, 4, 4], -1.0);

    let mut adam = Adam::new(AdamConfig::with_lr(0.05));
    for step in 0..400 {
        conv.zero_grad();
        let diff = ops::add(&conv.forward(&x).unwrap(), &ops::mul(&target, &neg).unwrap()).unwrap();
        let loss = ops::sum(&ops::mul(&diff, &diff).unwrap());
        loss.backward();
        adam.step(&conv.parameters());
        if step % 100 == 0 {
            println!("step {step:>3}  squared error {:.6}", loss.item());
        }
    }
    println!("weights {:?}, bias {:?}", conv.weight.to_vec(), conv.bias.as_ref().map(|b| b.to_vec()));
}
