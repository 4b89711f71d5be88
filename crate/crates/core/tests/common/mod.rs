#![allow(dead_code)]

use drac_core::nn::{ConvSpec, NetArch, PolicyValueNet};
use drac_core::trainer::rng_stream;
use rand::Rng;

/// 4×4 frames, one 3×3 conv channel, 3 hidden units: 67 parameters.
pub fn tiny_arch() -> NetArch {
    NetArch {
        input_size: 4,
        input_channels: 3,
        convs: vec![ConvSpec { channels: 1, kernel: 3, stride: 1 }],
        hidden: 3,
        num_actions: 5,
    }
}

/// 3×3 frames, 50 parameters.
pub fn micro_arch() -> NetArch {
    NetArch {
        input_size: 3,
        input_channels: 3,
        convs: vec![ConvSpec { channels: 1, kernel: 3, stride: 1 }],
        hidden: 2,
        num_actions: 5,
    }
}

pub fn random_images(count: usize, size: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_stream(seed, 77);
    (0..count * size * size * 3).map(|_| rng.random::<f64>()).collect()
}

pub fn tiny_net(seed: u64) -> PolicyValueNet<f64> {
    PolicyValueNet::new(tiny_arch(), seed).unwrap()
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
