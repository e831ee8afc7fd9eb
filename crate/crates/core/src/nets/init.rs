use rand::Rng;

use crate::diffcore::Tensor;
use crate::rng::StreamRng;

/// Uniform init for a layer followed by relu: bound √(6 / fan_in).
pub fn kaiming_uniform(out: usize, inp: usize, rng: &mut StreamRng) -> Tensor {
    uniform(out, inp, (6.0 / inp as f64).sqrt(), rng)
}

/// Uniform init for a tanh or sigmoid layer: bound √(6 / (fan_in + fan_out)).
pub fn xavier_uniform(out: usize, inp: usize, rng: &mut StreamRng) -> Tensor {
    uniform(out, inp, (6.0 / (inp + out) as f64).sqrt(), rng)
}

fn uniform(out: usize, inp: usize, bound: f64, rng: &mut StreamRng) -> Tensor {
    let data = (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![out, inp], data).expect("shape matches data")
}
