//! Seeded synthetic hourly price generator.
//!
//! `p_t = base + a_day sin(2 pi t / 24 + phase) + a_week sin(2 pi t / 168) + noise`
//!
//! The noise stream is ChaCha8 with Box-Muller gaussians built from the raw
//! 64-bit output (`(u >> 11) * 2^-53`), so a seed reproduces the same series
//! bit-for-bit on every platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct PriceParams {
    /// €/kWh.
    pub base: f64,
    pub amp_day: f64,
    pub amp_week: f64,
    pub noise_sigma: f64,
    pub phase: f64,
}

impl Default for PriceParams {
    fn default() -> Self {
        PriceParams { base: 0.05, amp_day: 0.02, amp_week: 0.01, noise_sigma: 0.005, phase: 0.0 }
    }
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic hourly prices for `t = 0 .. horizon`.
pub fn generate_prices(seed: u64, horizon: usize, params: &PriceParams) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(horizon);
    let mut spare: Option<f64> = None;
    let mut gaussian = |rng: &mut ChaCha8Rng| -> f64 {
        if let Some(z) = spare.take() {
            return z;
        }
        // Box-Muller on two uniforms.
        let u1 = unit_f64(rng).max(f64::MIN_POSITIVE);
        let u2 = unit_f64(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        spare = Some(r * theta.sin());
        r * theta.cos()
    };
    for t in 0..horizon {
        let tf = t as f64;
        let day = params.amp_day * (2.0 * std::f64::consts::PI * tf / 24.0 + params.phase).sin();
        let week = params.amp_week * (2.0 * std::f64::consts::PI * tf / 168.0).sin();
        let noise = params.noise_sigma * gaussian(&mut rng);
        out.push(params.base + day + week + noise);
    }
    out
}
