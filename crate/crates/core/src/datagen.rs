//! Labeled synthetic front-running scenarios.
//!
//! Each class has its own structural signature:
//!
//! * displacement: one attacker transaction outbidding the victim, usually
//!   leaving the victim's transaction failed, all within one block;
//! * insertion: two attacker transactions bracketing the victim, one priced
//!   above and one below it, in the victim's block;
//! * suppression: many gas-hungry, high-fee attacker transactions spread over
//!   several nearly full blocks.
//!
//! Continuous fields are log-normal around the class medians in
//! [`CLASS_PROFILES`]. The clean [`AttackInstance`] then goes through an
//! observation step controlled by `noise_sigma`: continuous fields get
//! multiplicative log-normal jitter, counts are jittered the same way in
//! `log(1 + n)` space and rounded, and binary flags flip with probability
//! `min(noise_sigma, 0.5)`. With `noise_sigma = 0` the observed row equals
//! the featurized instance exactly.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Gamma, Geometric, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, AttackClass, AttackInstance, Dataset, LabelId, Provenance, N_CLASSES, N_FEATURES};
use crate::error::{Error, Result};
use crate::features::featurize;
use crate::matrix::Matrix;
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_total: usize,
    pub class_proportions: [f64; N_CLASSES],
    pub noise_sigma: f64,
    pub seed: u64,
    pub suppression_tx_mean: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_total: 9798,
            class_proportions: [1.0 / 3.0; N_CLASSES],
            noise_sigma: 0.25,
            seed: 42,
            suppression_tx_mean: 20.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::param("class_proportions", "must be non-negative"));
        }
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(
                "class_proportions",
                format!("must sum to 1 (got {sum})"),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::param("noise_sigma", "must be non-negative"));
        }
        if !self.suppression_tx_mean.is_finite() || self.suppression_tx_mean <= 0.0 {
            return Err(Error::param("suppression_tx_mean", "must be positive"));
        }
        Ok(())
    }

    /// Rows per class: `round(n * p)` for classes 1 and 2, the remainder to class 0.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let n = self.n_total;
        let mut c1 = (n as f64 * self.class_proportions[1]).round() as usize;
        let mut c2 = (n as f64 * self.class_proportions[2]).round() as usize;
        c1 = c1.min(n);
        c2 = c2.min(n - c1);
        [n - c1 - c2, c1, c2]
    }
}

/// Log-normal described by its median and log-scale spread.
#[derive(Debug, Clone, Copy)]
pub struct Spread {
    pub median: f64,
    pub sigma: f64,
}

const fn ln(median: f64, sigma: f64) -> Spread {
    Spread { median, sigma }
}

impl Spread {
    fn sample(self, rng: &mut Rng) -> f64 {
        LogNormal::new(self.median.ln(), self.sigma)
            .expect("profile spreads are valid")
            .sample(rng)
    }
}

/// Class-conditional generator constants.
#[derive(Debug, Clone, Copy)]
pub struct ClassProfile {
    /// `gas_price_ratio - 1` for the attacker's leading transaction.
    pub price_premium: Spread,
    pub victim_gas_price_gwei: Spread,
    /// Gas per attacker transaction for suppression; total gas otherwise.
    pub attacker_gas: Spread,
    pub victim_gas: Spread,
    pub victim_value_eth: Spread,
    pub attacker_value_eth: Spread,
    pub p_same_block: f64,
    pub p_victim_failed: f64,
}

/// Displacement, insertion, suppression (label order).
pub const CLASS_PROFILES: [ClassProfile; N_CLASSES] = [
    ClassProfile {
        price_premium: ln(0.20, 0.7),
        victim_gas_price_gwei: ln(40.0, 0.6),
        attacker_gas: ln(140e3, 0.45),
        victim_gas: ln(140e3, 0.45),
        victim_value_eth: ln(0.8, 1.0),
        attacker_value_eth: ln(0.8, 1.0),
        p_same_block: 0.85,
        p_victim_failed: 1.0,
    },
    ClassProfile {
        price_premium: ln(0.15, 0.7),
        victim_gas_price_gwei: ln(40.0, 0.6),
        attacker_gas: ln(170e3, 0.45),
        victim_gas: ln(140e3, 0.45),
        victim_value_eth: ln(0.8, 1.0),
        attacker_value_eth: ln(1.0, 1.0),
        p_same_block: 1.0,
        p_victim_failed: 0.0,
    },
    ClassProfile {
        price_premium: ln(0.60, 0.7),
        victim_gas_price_gwei: ln(40.0, 0.6),
        attacker_gas: ln(120e3, 0.45),
        victim_gas: ln(140e3, 0.45),
        victim_value_eth: ln(0.5, 1.0),
        attacker_value_eth: ln(0.05, 1.0),
        p_same_block: 0.15,
        p_victim_failed: 0.3,
    },
];

/// Utilization of the blocks around displacement and insertion attacks.
const BUSY_BLOCK_UTILIZATION: Spread = ln(0.85, 0.12);
/// Suppression blocks are stuffed to at least this fraction of the gas limit.
pub const SUPPRESSION_MIN_UTILIZATION: f64 = 0.9;
pub const SUPPRESSION_MIN_TXS: u32 = 3;
/// Mean of the extra blocks (beyond 2) a suppression attack spans.
const SUPPRESSION_EXTRA_BLOCKS_MEAN: f64 = 1.0;
const GWEI_TO_ETH: f64 = 1e-9;

fn bernoulli(p: f64, rng: &mut Rng) -> bool {
    Bernoulli::new(p).expect("probability in [0, 1]").sample(rng)
}

fn poisson(mean: f64, rng: &mut Rng) -> u64 {
    let mean = mean.max(1e-12);
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Draws one clean scenario of class `c`.
pub fn generate_instance(c: AttackClass, cfg: &GeneratorConfig, rng: &mut Rng) -> AttackInstance {
    let profile = &CLASS_PROFILES[LabelId::from(c).index()];
    let gas_price_ratio = 1.0 + profile.price_premium.sample(rng);
    let victim_gas_price_gwei = profile.victim_gas_price_gwei.sample(rng);
    let victim_gas_used = profile.victim_gas.sample(rng);
    let victim_value_eth = profile.victim_value_eth.sample(rng);
    let attacker_value_eth = profile.attacker_value_eth.sample(rng);
    let same_block = bernoulli(profile.p_same_block, rng);
    let victim_failed = bernoulli(profile.p_victim_failed, rng);
    let busy = |rng: &mut Rng| BUSY_BLOCK_UTILIZATION.sample(rng).min(1.0);

    match c {
        AttackClass::Displacement => {
            let attacker_gas_used = profile.attacker_gas.sample(rng);
            let block_position_delta = 1 + Geometric::new(0.5).unwrap().sample(rng) as i64;
            let gas_limit_utilization = busy(rng);
            AttackInstance {
                attacker_tx_count: 1,
                gas_price_ratio,
                victim_gas_price_gwei,
                attacker_gas_used,
                victim_gas_used,
                victim_value_eth,
                attacker_value_eth,
                block_position_delta,
                same_block,
                victim_failed,
                interval_blocks: 1,
                cumulative_attacker_fee_eth: gas_price_ratio
                    * victim_gas_price_gwei
                    * attacker_gas_used
                    * GWEI_TO_ETH,
                gas_limit_utilization,
                label: c,
            }
        }
        AttackClass::Insertion => {
            let attacker_gas_used = profile.attacker_gas.sample(rng);
            // the back-run is priced below the victim
            let back_ratio = rng.random_range(0.5..1.0);
            let block_position_delta = 1 + Geometric::new(0.6).unwrap().sample(rng) as i64;
            let gas_limit_utilization = busy(rng);
            AttackInstance {
                attacker_tx_count: 2,
                gas_price_ratio,
                victim_gas_price_gwei,
                attacker_gas_used,
                victim_gas_used,
                victim_value_eth,
                attacker_value_eth,
                block_position_delta,
                same_block,
                victim_failed,
                interval_blocks: 1,
                cumulative_attacker_fee_eth: 0.5
                    * (gas_price_ratio + back_ratio)
                    * victim_gas_price_gwei
                    * attacker_gas_used
                    * GWEI_TO_ETH,
                gas_limit_utilization,
                label: c,
            }
        }
        AttackClass::Suppression => {
            // gamma-mixed Poisson: overdispersed counts with the configured mean
            let rate = Gamma::new(1.0, cfg.suppression_tx_mean).unwrap().sample(rng);
            let attacker_tx_count = (poisson(rate, rng) as u32).max(SUPPRESSION_MIN_TXS);
            let attacker_gas_used = f64::from(attacker_tx_count) * profile.attacker_gas.sample(rng);
            let block_position_delta = rng.random_range(-10..=10);
            let interval_blocks = 2 + poisson(SUPPRESSION_EXTRA_BLOCKS_MEAN, rng) as u32;
            let gas_limit_utilization =
                SUPPRESSION_MIN_UTILIZATION + (1.0 - SUPPRESSION_MIN_UTILIZATION) * rng.random::<f64>();
            AttackInstance {
                attacker_tx_count,
                gas_price_ratio,
                victim_gas_price_gwei,
                attacker_gas_used,
                victim_gas_used,
                victim_value_eth,
                attacker_value_eth,
                block_position_delta,
                same_block,
                victim_failed,
                interval_blocks,
                cumulative_attacker_fee_eth: gas_price_ratio
                    * victim_gas_price_gwei
                    * attacker_gas_used
                    * GWEI_TO_ETH,
                gas_limit_utilization,
                label: c,
            }
        }
    }
}

#[derive(Clone, Copy)]
enum FieldKind {
    Continuous,
    Fraction,
    Count,
    SignedCount,
    Flag,
}

const FIELD_KINDS: [FieldKind; N_FEATURES] = [
    FieldKind::Count,
    FieldKind::Continuous,
    FieldKind::Continuous,
    FieldKind::Continuous,
    FieldKind::Continuous,
    FieldKind::Continuous,
    FieldKind::Continuous,
    FieldKind::SignedCount,
    FieldKind::Flag,
    FieldKind::Flag,
    FieldKind::Count,
    FieldKind::Continuous,
    FieldKind::Fraction,
];

/// Applies the observation noise to a featurized instance.
pub fn observe(row: &[f64; N_FEATURES], noise_sigma: f64, rng: &mut Rng) -> [f64; N_FEATURES] {
    if noise_sigma == 0.0 {
        return *row;
    }
    let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
    let flip = noise_sigma.min(0.5);
    let mut out = *row;
    for (v, kind) in out.iter_mut().zip(FIELD_KINDS) {
        match kind {
            FieldKind::Continuous => *v *= normal.sample(rng).exp(),
            FieldKind::Fraction => *v = (*v * normal.sample(rng).exp()).clamp(0.0, 1.0),
            FieldKind::Count => {
                let m = normal.sample(rng).exp();
                *v = (((*v + 1.0) * m).round() - 1.0).max(1.0);
            }
            FieldKind::SignedCount => {
                let m = normal.sample(rng).exp();
                let magnitude = (((v.abs() + 1.0) * m).round() - 1.0).max(0.0);
                *v = v.signum() * magnitude;
                if *v == 0.0 {
                    *v = 0.0; // no negative zero in the CSV
                }
            }
            FieldKind::Flag => {
                if rng.random::<f64>() < flip {
                    *v = 1.0 - *v;
                }
            }
        }
    }
    out
}

/// Labels in row order: per-class blocks shuffled with the seed.
fn row_labels(cfg: &GeneratorConfig) -> Vec<LabelId> {
    let counts = cfg.class_counts();
    let mut labels: Vec<LabelId> = LabelId::all()
        .iter()
        .zip(counts)
        .flat_map(|(&l, n)| std::iter::repeat_n(l, n))
        .collect();
    labels.shuffle(&mut rng::derived(cfg.seed, stream::DATAGEN_LABELS, 0));
    labels
}

/// Generates `cfg.n_total` observed rows. Row `i` draws from its own stream
/// derived from `(seed, i)`, so the output does not depend on scheduling.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let labels = row_labels(cfg);
    let rows: Vec<[f64; N_FEATURES]> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = rng::derived(cfg.seed, stream::DATAGEN_ROW, i as u64);
            let inst = generate_instance(label.into(), cfg, &mut rng);
            observe(&featurize(&inst), cfg.noise_sigma, &mut rng)
        })
        .collect();
    let values = rows.iter().flatten().copied().collect();
    let features = Matrix::new(labels.len(), N_FEATURES, values)?;
    Dataset::new(features, labels, data::schema_names(), Provenance::Synthetic)
}

/// Rule that recovers the class from `(attacker_tx_count, interval_blocks)`
/// on noise-free rows.
pub fn hand_rule(row: &[f64]) -> LabelId {
    let count = row[0];
    let interval = row[10];
    if interval >= 2.0 || count >= f64::from(SUPPRESSION_MIN_TXS) {
        data::encode_label(AttackClass::Suppression)
    } else if count == 2.0 {
        data::encode_label(AttackClass::Insertion)
    } else {
        data::encode_label(AttackClass::Displacement)
    }
}
