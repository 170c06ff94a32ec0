#![allow(dead_code)]

use moe_reduce::model::{ExpertWeights, ModelConfig};
use moe_reduce::numerics::Rng;

/// d=32, d_ff=128, 4 layers with MoE at layers 0 and 2.
pub fn tiny_config(n_experts: usize) -> ModelConfig {
    ModelConfig::new(32, 4, 4, n_experts, 64, 64).with_d_ff(128)
}

pub fn gaussian_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Largest absolute output difference of two experts over `n` standard
/// normal inputs.
pub fn expert_gap(a: &ExpertWeights, b: &ExpertWeights, n: usize, rng: &mut Rng) -> f64 {
    (0..n)
        .map(|_| {
            let x = gaussian_vec(a.d_model(), rng);
            a.forward(&x)
                .iter()
                .zip(b.forward(&x))
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn random_expert(d: usize, f: usize, rng: &mut Rng) -> ExpertWeights {
    let mut m = |r, c| moe_reduce::numerics::Matrix::from_fn(r, c, |_, _| rng.gaussian(0.5));
    let w_in = m(f, d);
    let w_out = m(d, f);
    let b_in = (0..f).map(|i| 0.01 * i as f64).collect();
    let b_out = (0..d).map(|i| -0.01 * i as f64).collect();
    ExpertWeights { w_in, b_in, w_out, b_out }
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}
