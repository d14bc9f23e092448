//! Deterministic random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by
//! `(seed, tag, index)`, so results never depend on scheduling order.

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Phase tags separating independent uses of one seed.
pub mod tag {
    pub const NU: u64 = 0x6e75;
    pub const SIGMA_BOOT: u64 = 0x7362;
    pub const XI_STAGE2: u64 = 0x7832;
    pub const XI_STAGE1: u64 = 0x7831;
    pub const POWER_BOOT: u64 = 0x7062;
    pub const OPT_BOOT: u64 = 0x6f62;
    pub const SEARCH: u64 = 0x7365;
    pub const DATA: u64 = 0x6461;
    pub const ORACLE: u64 = 0x6f72;
    pub const REPLICATION: u64 = 0x7270;
    pub const TRIAL: u64 = 0x7472;
    pub const PILOT: u64 = 0x706c;
}

pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"smartsz\x01");
    ChaCha8Rng::from_seed(key)
}

/// Child seed for nested streams.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = splitmix(seed ^ splitmix(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    z = splitmix(z ^ splitmix(index));
    z
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Student t with three degrees of freedom as a normal ratio.
pub fn student_t3<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z = normal(rng);
    let chi2 = (0..3).map(|_| normal(rng).powi(2)).sum::<f64>();
    z / (chi2 / 3.0).sqrt()
}

/// A treatment drawn uniformly from {-1, +1}.
pub fn coin<R: Rng + ?Sized>(rng: &mut R) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// A point uniformly distributed in (or, with `on_boundary`, on) the unit ball.
pub fn unit_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, on_boundary: bool) -> alloc::vec::Vec<f64> {
    let mut v: alloc::vec::Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = if on_boundary {
        1.0
    } else {
        rng.random::<f64>().powf(1.0 / dim as f64)
    };
    let s = if norm > 0.0 { radius / norm } else { 0.0 };
    v.iter_mut().for_each(|x| *x *= s);
    v
}

/// Multiplicities of `size` draws with replacement from `unique` rows.
pub fn resample_weights<R: Rng + ?Sized>(rng: &mut R, unique: usize, size: usize) -> alloc::vec::Vec<f64> {
    let mut w = alloc::vec![0.0; unique];
    for _ in 0..size {
        w[rng.random_range(0..unique)] += 1.0;
    }
    w
}
