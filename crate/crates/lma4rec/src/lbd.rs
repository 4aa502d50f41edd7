//! Learnable Bernoulli dropout gates and their gradient estimator.
//!
//! Each gated layer owns a logit vector `phi`; neuron `n` is kept with
//! probability `sigmoid(phi[n])`. The logits are trained with an
//! antithetically-coupled two-evaluation Monte-Carlo estimator: one uniform
//! draw `u` per neuron yields a "true" mask `1[u < sigmoid(phi)]` and an
//! "anti" mask `1[u > sigmoid(-phi)]`, and the gradient estimate for the
//! whole logit vector is `(loss_anti - loss_true) * (u - 1/2)`. The estimate
//! is unbiased for the gradient of the expected loss over mask draws, and
//! needs exactly two loss evaluations no matter how many layers are gated.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LbdError {
    #[error("gate width mismatch: gate has {gate} neurons, input trailing dim is {input}")]
    WidthMismatch { gate: usize, input: usize },
    #[error("contract violation: {msg}")]
    Contract { msg: String },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(p / (1 - p)).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Trainable dropout gate for one feed-forward layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BernoulliGate {
    /// Per-neuron keep logits.
    pub logits: Vec<f64>,
    pub layer_index: usize,
}

impl BernoulliGate {
    /// Gate of `width` neurons initialized to keep probability `init_keep`.
    pub fn new(width: usize, layer_index: usize, init_keep: f64) -> Self {
        assert!(
            init_keep > 0.0 && init_keep < 1.0,
            "initial keep probability must lie strictly inside (0, 1), got {init_keep}"
        );
        BernoulliGate { logits: vec![logit(init_keep); width], layer_index }
    }

    pub fn width(&self) -> usize {
        self.logits.len()
    }

    /// Per-neuron keep probabilities `sigmoid(phi)`.
    pub fn keep_probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| sigmoid(l)).collect()
    }

    pub fn mean_keep_probability(&self) -> f64 {
        let p = self.keep_probabilities();
        p.iter().sum::<f64>() / p.len() as f64
    }
}

/// One antithetically-coupled mask draw: both masks come from the same
/// uniforms, so a single pair of loss evaluations serves the whole gradient.
#[derive(Debug, Clone)]
pub struct ArmSample {
    pub layer_index: usize,
    pub uniforms: Vec<f64>,
    /// `1[u < sigmoid(phi)]`, stored as 0.0/1.0 multipliers.
    pub mask_true: Vec<f64>,
    /// `1[u > sigmoid(-phi)]`.
    pub mask_anti: Vec<f64>,
}

/// Draw one uniform per neuron and build both coupled masks.
pub fn sample_gate(gate: &BernoulliGate, rng: &mut ChaCha8Rng) -> ArmSample {
    let mut uniforms = Vec::with_capacity(gate.width());
    let mut mask_true = Vec::with_capacity(gate.width());
    let mut mask_anti = Vec::with_capacity(gate.width());
    for &phi in &gate.logits {
        let u: f64 = rng.random();
        uniforms.push(u);
        mask_true.push(if u < sigmoid(phi) { 1.0 } else { 0.0 });
        mask_anti.push(if u > sigmoid(-phi) { 1.0 } else { 0.0 });
    }
    ArmSample { layer_index: gate.layer_index, uniforms, mask_true, mask_anti }
}

/// Evaluation-time gate: multiply activations by the expected mask
/// `sigmoid(phi)` instead of sampling, which makes evaluation deterministic.
pub fn expected_gate(gate: &BernoulliGate) -> Vec<f64> {
    gate.keep_probabilities()
}

/// Per-sample logit gradients `(loss_anti - loss_true) * (u - 1/2)`.
///
/// Both losses must have been evaluated under the full mask assignment the
/// samples describe (every gated layer masked at once, from the same
/// uniforms). Samples sharing a `layer_index` (a gate used by several
/// stochastic passes in one step) are summed by the caller.
pub fn arm_gradient(loss_true: f64, loss_anti: f64, samples: &[ArmSample]) -> Vec<Vec<f64>> {
    let delta = loss_anti - loss_true;
    samples
        .iter()
        .map(|s| s.uniforms.iter().map(|u| delta * (u - 0.5)).collect())
        .collect()
}

/// Result of one two-evaluation gradient step over a closure.
pub struct ArmStep {
    pub loss_true: f64,
    pub loss_anti: f64,
    /// One gradient vector per gate, in the order the gates were given.
    pub logit_grads: Vec<Vec<f64>>,
    /// The "true" mask per gate, for a subsequent backward pass over the
    /// continuous parameters.
    pub masks_true: Vec<Vec<f64>>,
}

/// Draw one sample per gate, evaluate `f` under all true masks and once more
/// under all anti masks, and return the logit gradients.
///
/// `f` receives one mask per gate (same order as `gates`) and must be
/// deterministic given that assignment.
pub fn arm_step<F, E>(mut f: F, gates: &[&BernoulliGate], rng: &mut ChaCha8Rng) -> Result<ArmStep, E>
where
    F: FnMut(&[&[f64]]) -> Result<f64, E>,
{
    let samples: Vec<ArmSample> = gates.iter().map(|g| sample_gate(g, rng)).collect();
    let true_masks: Vec<&[f64]> = samples.iter().map(|s| s.mask_true.as_slice()).collect();
    let loss_true = f(&true_masks)?;
    let anti_masks: Vec<&[f64]> = samples.iter().map(|s| s.mask_anti.as_slice()).collect();
    let loss_anti = f(&anti_masks)?;
    let logit_grads = arm_gradient(loss_true, loss_anti, &samples);
    Ok(ArmStep {
        loss_true,
        loss_anti,
        logit_grads,
        masks_true: samples.into_iter().map(|s| s.mask_true).collect(),
    })
}

/// Exact gradient of `E[f(z)]` for a small Bernoulli vector by enumerating
/// all 2^n outcomes. Test oracle for the sampling estimator.
pub fn enumerate_gradient<F>(logits: &[f64], f: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let n = logits.len();
    assert!(n <= 20, "enumeration is exponential; keep n small");
    let keep: Vec<f64> = logits.iter().map(|&l| sigmoid(l)).collect();
    let mut grad = vec![0.0; n];
    let mut mask = vec![0.0; n];
    for bits in 0..(1usize << n) {
        for (i, m) in mask.iter_mut().enumerate() {
            *m = if bits >> i & 1 == 1 { 1.0 } else { 0.0 };
        }
        let mut prob = 1.0;
        for i in 0..n {
            prob *= if mask[i] == 1.0 { keep[i] } else { 1.0 - keep[i] };
        }
        let value = f(&mask);
        for i in 0..n {
            // d prob / d phi_i = prob * (z_i - keep_i)  (sigmoid derivative)
            grad[i] += value * prob * (mask[i] - keep[i]);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_logit_masks_split_at_one_half() {
        // u = 0.3 against sigmoid(0) = 0.5: kept in the true mask, dropped in
        // the anti mask. Reconstructed by hand rather than through the rng.
        let phi = 0.0;
        let u = 0.3;
        assert_eq!(if u < sigmoid(phi) { 1.0 } else { 0.0 }, 1.0);
        assert_eq!(if u > sigmoid(-phi) { 1.0 } else { 0.0 }, 0.0);
    }

    #[test]
    fn saturated_gate_keeps_everything() {
        let gate = BernoulliGate { logits: vec![20.0; 8], layer_index: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let s = sample_gate(&gate, &mut rng);
            assert!(s.mask_true.iter().all(|&m| m == 1.0));
            assert!(s.mask_anti.iter().all(|&m| m == 1.0));
        }
    }

    #[test]
    fn mask_true_mean_matches_sigmoid() {
        let gate = BernoulliGate { logits: vec![0.5], layer_index: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut kept = 0usize;
        for _ in 0..n {
            kept += sample_gate(&gate, &mut rng).mask_true[0] as usize;
        }
        let p = sigmoid(0.5);
        let mean = kept as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (mean - p).abs() < 3.0 * se,
            "empirical keep rate {mean} vs sigmoid(0.5) = {p} (3 se = {})",
            3.0 * se
        );
    }

    #[test]
    fn antithetic_masks_are_complements_at_zero_logit() {
        let gate = BernoulliGate { logits: vec![0.0; 16], layer_index: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sample_gate(&gate, &mut rng);
            for i in 0..16 {
                assert_eq!(s.mask_true[i], 1.0 - s.mask_anti[i]);
            }
        }
    }

    #[test]
    fn expected_gate_values() {
        let gate = BernoulliGate { logits: vec![0.0, -20.0, 20.0, 0.5], layer_index: 0 };
        let e = expected_gate(&gate);
        assert!((e[0] - 0.5).abs() < 1e-15);
        assert!(e[1] < 1e-8);
        assert!(e[2] > 1.0 - 1e-8);
        assert!((e[3] - 0.62246).abs() < 1e-5);
    }

    #[test]
    fn equal_losses_give_zero_gradient() {
        let gate = BernoulliGate::new(4, 0, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample_gate(&gate, &mut rng);
        let g = arm_gradient(1.234, 1.234, &[s]);
        assert!(g[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_variable_identity_function_gradient() {
        // f(z) = z, phi = 0: exact d/dphi E[f] = sigmoid'(0) = 0.25.
        let gate = BernoulliGate { logits: vec![0.0], layer_index: 0 };
        let exact = enumerate_gradient(&gate.logits, |m| m[0]);
        assert!((exact[0] - 0.25).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let s = sample_gate(&gate, &mut rng);
            let g = arm_gradient(s.mask_true[0], s.mask_anti[0], std::slice::from_ref(&s));
            sum += g[0][0];
            sum_sq += g[0][0] * g[0][0];
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - exact[0]).abs() < 3.0 * se, "mean {mean} vs exact 0.25, 3 se = {}", 3.0 * se);
    }

    #[test]
    fn two_variable_polynomial_matches_enumeration() {
        // f(z) = z1*z2 + 0.3*z1 at phi = (0.4, -0.7).
        let gate = BernoulliGate { logits: vec![0.4, -0.7], layer_index: 0 };
        let f = |m: &[f64]| m[0] * m[1] + 0.3 * m[0];
        let exact = enumerate_gradient(&gate.logits, f);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 100_000;
        let mut sums = [0.0f64; 2];
        let mut sums_sq = [0.0f64; 2];
        for _ in 0..n {
            let s = sample_gate(&gate, &mut rng);
            let g = arm_gradient(f(&s.mask_true), f(&s.mask_anti), std::slice::from_ref(&s));
            for i in 0..2 {
                sums[i] += g[0][i];
                sums_sq[i] += g[0][i] * g[0][i];
            }
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let var = (sums_sq[i] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - exact[i]).abs() < 3.0 * se,
                "coord {i}: mean {mean} vs exact {} (3 se = {})",
                exact[i],
                3.0 * se
            );
        }
    }

    #[test]
    fn arm_step_is_deterministic_under_a_frozen_seed() {
        let gate = BernoulliGate::new(3, 0, 0.7);
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            arm_step::<_, std::convert::Infallible>(
                |masks| Ok(masks[0].iter().sum::<f64>()),
                &[&gate],
                &mut rng,
            )
            .unwrap()
            .loss_true
        };
        assert_eq!(run(99), run(99));
    }

    #[test]
    fn arm_step_multi_layer_matches_exhaustive_enumeration() {
        // Two gated "layers" of width 2, quadratic loss over all four mask
        // bits. The joint estimator flips every layer at once; its mean must
        // match per-layer enumeration over all 2^4 assignments.
        let g1 = BernoulliGate { logits: vec![0.3, -0.2], layer_index: 0 };
        let g2 = BernoulliGate { logits: vec![0.1, 0.6], layer_index: 1 };
        let f = |m1: &[f64], m2: &[f64]| {
            let s = m1[0] + 2.0 * m1[1] - m2[0] + 0.5 * m2[1];
            s * s * 0.1 + 0.2 * m1[0] * m2[1]
        };
        // exact gradient via enumeration over the stacked 4-vector
        let stacked: Vec<f64> = [g1.logits.clone(), g2.logits.clone()].concat();
        let exact = enumerate_gradient(&stacked, |m| f(&m[..2], &m[2..]));

        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 100_000;
        let mut sums = vec![0.0f64; 4];
        let mut sums_sq = vec![0.0f64; 4];
        for _ in 0..n {
            let step = arm_step::<_, std::convert::Infallible>(
                |masks| Ok(f(masks[0], masks[1])),
                &[&g1, &g2],
                &mut rng,
            )
            .unwrap();
            let flat: Vec<f64> = step.logit_grads.concat();
            for i in 0..4 {
                sums[i] += flat[i];
                sums_sq[i] += flat[i] * flat[i];
            }
        }
        for i in 0..4 {
            let mean = sums[i] / n as f64;
            let var = (sums_sq[i] / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            assert!(
                (mean - exact[i]).abs() < 3.0 * se,
                "coord {i}: mean {mean} vs exact {} (3 se = {})",
                exact[i],
                3.0 * se
            );
        }
    }

    #[test]
    fn arm_step_runs_exactly_two_evaluations() {
        let gates: Vec<BernoulliGate> = (0..5).map(|c| BernoulliGate::new(4, c, 0.9)).collect();
        let refs: Vec<&BernoulliGate> = gates.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut calls = 0usize;
        arm_step::<_, std::convert::Infallible>(
            |_| {
                calls += 1;
                Ok(0.0)
            },
            &refs,
            &mut rng,
        )
        .unwrap();
        assert_eq!(calls, 2);
    }
}
