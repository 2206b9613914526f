//! Seeded synthetic customer datasets with planted ground truth.
//!
//! Pair sizes follow a truncated power law `P(s) ∝ s^-α`, `1 <= s <= max_pair_size`,
//! so singletons and small pairs dominate. A fixed share of customers is
//! planted: they live in dedicated pairs and their demand is the target shape
//! times bounded multiplicative noise `1 + u_j`, `u_j ~ U[-3σ, 3σ]`. Everybody
//! else follows a per-NACE seasonal archetype `1 + a cos(2π(j - p)/12)` with its
//! own noise. Demands are scaled by a log-uniform monthly consumption.
//!
//! Structure (pair sizes, keys, archetypes, customer-to-pair assignment) is
//! drawn from stream 0 of the seed; customer `i` draws its demand from stream
//! `i + 1`, so customers can be generated in parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::model::{CustomerDataset, CustomerRecord};
use crate::pairing::PairKey;
use crate::scalar::Scalar;
use crate::simulate::rng_for;
use crate::targets::TargetProfile;
use crate::MONTHS;

fn default_provinces() -> usize {
    52
}
fn default_divisions() -> usize {
    88
}
fn default_exponent() -> f64 {
    1.8
}
fn default_max_pair() -> usize {
    1000
}
fn default_amplitude_max() -> f64 {
    0.6
}
fn default_archetype_noise() -> f64 {
    0.1
}
fn default_scale() -> (f64, f64) {
    (50.0, 50_000.0)
}
fn default_target() -> String {
    "solar-default".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_customers: usize,
    pub n_locations: usize,
    pub n_nace: usize,
    /// Provinces the locations are spread over (capped at `n_locations`).
    #[serde(default = "default_provinces")]
    pub n_provinces: usize,
    /// NACE divisions the codes are spread over (capped at `n_nace`).
    #[serde(default = "default_divisions")]
    pub n_divisions: usize,
    /// Power-law exponent α of the pair size distribution.
    #[serde(default = "default_exponent")]
    pub pair_size_exponent: f64,
    #[serde(default = "default_max_pair")]
    pub max_pair_size: usize,
    /// Archetype amplitudes are drawn from `U[0, archetype_amplitude_max]`.
    #[serde(default = "default_amplitude_max")]
    pub archetype_amplitude_max: f64,
    #[serde(default = "default_archetype_noise")]
    pub archetype_noise_sigma: f64,
    pub planted_fraction: f64,
    pub noise_sigma: f64,
    /// Share of customers written without a NACE code.
    #[serde(default)]
    pub missing_nace_fraction: f64,
    /// Range of mean monthly consumption, kWh.
    #[serde(default = "default_scale")]
    pub demand_scale_kwh: (f64, f64),
    /// Target spec the planted customers follow (see the CLI grammar).
    #[serde(default = "default_target")]
    pub target: String,
    pub seed: u64,
}

impl SynthConfig {
    /// 10^5 customers, 200 locations, 150 NACE codes, 2% planted with
    /// σ = 0.05, seed 42.
    pub fn reference() -> Self {
        Self {
            n_customers: 100_000,
            n_locations: 200,
            n_nace: 150,
            n_provinces: default_provinces(),
            n_divisions: default_divisions(),
            pair_size_exponent: default_exponent(),
            max_pair_size: default_max_pair(),
            archetype_amplitude_max: default_amplitude_max(),
            archetype_noise_sigma: default_archetype_noise(),
            planted_fraction: 0.02,
            noise_sigma: 0.05,
            missing_nace_fraction: 0.0,
            demand_scale_kwh: default_scale(),
            target: default_target(),
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_customers == 0 || self.n_locations == 0 || self.n_nace == 0 {
            return bad("customer, location and NACE counts must be >= 1".into());
        }
        if self.n_provinces == 0 || self.n_divisions == 0 || self.max_pair_size == 0 {
            return bad("province, division and pair size counts must be >= 1".into());
        }
        if self.n_divisions.min(self.n_nace) > 99 {
            return bad("at most 99 NACE divisions are supported".into());
        }
        if self.n_nace > 99 * self.n_divisions.min(self.n_nace) {
            return bad("at most 99 NACE codes per division".into());
        }
        if !(0.0..=1.0).contains(&self.planted_fraction) {
            return bad(format!(
                "planted_fraction {} not in [0, 1]",
                self.planted_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.missing_nace_fraction) {
            return bad(format!(
                "missing_nace_fraction {} not in [0, 1]",
                self.missing_nace_fraction
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.archetype_noise_sigma >= 0.0) {
            return bad("noise levels must be >= 0".into());
        }
        if !(self.pair_size_exponent.is_finite() && self.pair_size_exponent > 0.0) {
            return bad("pair_size_exponent must be positive".into());
        }
        if !(0.0..1.0).contains(&self.archetype_amplitude_max) {
            return bad("archetype_amplitude_max must be in [0, 1)".into());
        }
        let (lo, hi) = self.demand_scale_kwh;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad("demand_scale_kwh must satisfy 0 < lo <= hi".into());
        }
        Ok(())
    }

    pub fn n_planted(&self) -> usize {
        let paired = self.n_customers - self.n_missing();
        ((self.planted_fraction * self.n_customers as f64).round() as usize).min(paired)
    }

    fn n_missing(&self) -> usize {
        (self.missing_nace_fraction * self.n_customers as f64).round() as usize
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Upper bound on the RMS distance between a planted customer's normalized
/// profile and the target `g`, given noise level σ.
///
/// With `s = 3σ·mean|g|`, every month satisfies
/// `|c_j - g_j| <= |g_j| (3σ + s) / (1 - s)`, hence the RMS bound
/// `rms(g) (3σ + s) / (1 - s)`. Infinite when `s >= 1`.
pub fn planted_distance_bound<T: Scalar>(noise_sigma: f64, target: &TargetProfile<T>) -> f64 {
    let g: Vec<f64> = target
        .values()
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect();
    let mean_abs = g.iter().map(|v| v.abs()).sum::<f64>() / MONTHS as f64;
    let rms = (g.iter().map(|v| v * v).sum::<f64>() / MONTHS as f64).sqrt();
    let s = 3.0 * noise_sigma * mean_abs;
    if s >= 1.0 {
        f64::INFINITY
    } else {
        rms * (3.0 * noise_sigma + s) / (1.0 - s)
    }
}

/// What the generator planted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    rows: Vec<TruthRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRow {
    pub id: String,
    pub planted: bool,
    /// `None` for customers generated without a NACE code.
    pub pair: Option<PairKey>,
}

impl GroundTruth {
    pub fn rows(&self) -> &[TruthRow] {
        &self.rows
    }

    /// Pair size -> number of pairs.
    pub fn composition(&self) -> BTreeMap<usize, usize> {
        let mut sizes: BTreeMap<&PairKey, usize> = BTreeMap::new();
        for r in &self.rows {
            if let Some(k) = &r.pair {
                *sizes.entry(k).or_default() += 1;
            }
        }
        let mut hist = BTreeMap::new();
        for n in sizes.into_values() {
            *hist.entry(n).or_default() += 1;
        }
        hist
    }

    pub fn planted_pairs(&self) -> BTreeSet<&PairKey> {
        self.rows
            .iter()
            .filter(|r| r.planted)
            .filter_map(|r| r.pair.as_ref())
            .collect()
    }

    pub fn planted_count(&self) -> usize {
        self.rows.iter().filter(|r| r.planted).count()
    }

    /// `id,planted,pair_nace,pair_location`.
    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(["id", "planted", "pair_nace", "pair_location"])?;
        for r in &self.rows {
            let (nace, location) = r
                .pair
                .as_ref()
                .map(|k| (k.nace(), k.location()))
                .unwrap_or(("", ""));
            w.write_record([
                r.id.as_str(),
                if r.planted { "1" } else { "0" },
                nace,
                location,
            ])?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csvio::writer_to_path(path)?;
        self.write_csv(&mut w).map_err(|e| Error::csv(path, e))?;
        csvio::finish(path, w)
    }
}

/// Synthetic NACE code `k` (0-based): section letter, two-digit division,
/// two-digit class, e.g. `C1003`.
pub fn nace_code(k: usize, n_divisions: usize) -> String {
    let div = k % n_divisions + 1;
    let class = k / n_divisions + 1;
    let section = (b'A' + ((div - 1) * 21 / n_divisions) as u8) as char;
    format!("{section}{div:02}{class:02}")
}

/// Synthetic location code `l` (0-based): `P{province:02}-{l:05}`.
pub fn location_code(l: usize, n_provinces: usize) -> String {
    format!("P{:02}-{:05}", l % n_provinces + 1, l)
}

struct Archetype {
    amplitude: f64,
    peak: f64,
}

fn draw_pair_sizes<R: Rng>(rng: &mut R, total: usize, cdf: &[f64]) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = total;
    while left > 0 {
        let u: f64 = rng.gen();
        let s = cdf.partition_point(|c| *c < u) + 1;
        let s = s.min(cdf.len()).min(left);
        sizes.push(s);
        left -= s;
    }
    sizes
}

/// Generates the dataset; customers are ordered by id.
pub fn generate<T: Scalar>(
    config: &SynthConfig,
    target: &TargetProfile<T>,
) -> Result<(CustomerDataset<T>, GroundTruth)> {
    config.validate()?;
    let n_div = config.n_divisions.min(config.n_nace);
    let n_prov = config.n_provinces.min(config.n_locations);
    let mut rng = rng_for(config.seed, 0);

    let weights: Vec<f64> = (1..=config.max_pair_size)
        .map(|s| (s as f64).powf(-config.pair_size_exponent))
        .collect();
    let z: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w / z;
            acc
        })
        .collect();
    *cdf.last_mut().expect("max_pair_size >= 1") = 1.0;

    let n_missing = config.n_missing();
    let n_planted = config.n_planted();
    let n_plain = config.n_customers - n_missing - n_planted;
    let planted_sizes = draw_pair_sizes(&mut rng, n_planted, &cdf);
    let mut plain_sizes = draw_pair_sizes(&mut rng, n_plain, &cdf);

    // Distinct keys for every pair; if the key space is too small the
    // surplus plain pairs are folded into earlier plain pairs.
    let key_space = config.n_nace * config.n_locations;
    let n_pairs = planted_sizes.len() + plain_sizes.len();
    if n_pairs > key_space {
        if planted_sizes.len() >= key_space {
            return Err(Error::InvalidConfig(format!(
                "{} planted pairs do not fit in {key_space} NACE-location keys",
                planted_sizes.len()
            )));
        }
        let keep = key_space - planted_sizes.len();
        let surplus: Vec<usize> = plain_sizes.split_off(keep);
        for (i, s) in surplus.into_iter().enumerate() {
            plain_sizes[i % keep] += s;
        }
        log::warn!("pair key space exhausted; merged surplus pairs");
    }
    let n_pairs = planted_sizes.len() + plain_sizes.len();
    // (key, NACE index)
    let keys: Vec<(PairKey, usize)> = index::sample(&mut rng, key_space, n_pairs)
        .into_iter()
        .map(|k| {
            let nace_idx = k / config.n_locations;
            let key = PairKey::new(
                nace_code(nace_idx, n_div),
                location_code(k % config.n_locations, n_prov),
            );
            (key, nace_idx)
        })
        .collect();

    let archetypes: Vec<Archetype> = (0..config.n_nace)
        .map(|_| Archetype {
            amplitude: rng.gen_range(0.0..=config.archetype_amplitude_max),
            peak: f64::from(rng.gen_range(1u8..=12)),
        })
        .collect();

    // slot -> (pair index or None for missing NACE, planted)
    let mut slots: Vec<(Option<usize>, bool)> = Vec::with_capacity(config.n_customers);
    for (p, &s) in planted_sizes.iter().chain(&plain_sizes).enumerate() {
        let planted = p < planted_sizes.len();
        slots.extend(std::iter::repeat_n((Some(p), planted), s));
    }
    let missing_locations: Vec<usize> = (0..n_missing)
        .map(|_| rng.gen_range(0..config.n_locations))
        .collect();
    slots.extend(std::iter::repeat_n((None, false), n_missing));
    slots.shuffle(&mut rng);

    let target_f64: [f64; MONTHS] = target.values().map(|v| v.to_f64().unwrap_or(f64::NAN));
    let (lo, hi) = config.demand_scale_kwh;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let mut missing_iter = missing_locations.into_iter();
    let slot_locations: Vec<Option<usize>> = slots
        .iter()
        .map(|(p, _)| {
            if p.is_none() {
                missing_iter.next()
            } else {
                None
            }
        })
        .collect();

    let generated: Vec<(CustomerRecord<T>, TruthRow)> = slots
        .par_iter()
        .enumerate()
        .map(|(i, &(pair, planted))| {
            let mut rng = rng_for(config.seed, i as u64 + 1);
            let id = format!("ES{i:016}");
            let (nace, location, nace_idx) = match pair {
                Some(p) => {
                    let (k, nace_idx) = &keys[p];
                    (k.nace().to_string(), k.location().to_string(), *nace_idx)
                }
                None => (
                    String::new(),
                    location_code(
                        slot_locations[i].expect("missing slot has a location"),
                        n_prov,
                    ),
                    rng.gen_range(0..config.n_nace),
                ),
            };
            let scale = (ln_lo + (ln_hi - ln_lo) * rng.gen::<f64>()).exp();
            let (shape, sigma): ([f64; MONTHS], f64) = if planted {
                (target_f64, config.noise_sigma)
            } else {
                let a = &archetypes[nace_idx];
                (
                    std::array::from_fn(|j| {
                        1.0 + a.amplitude * (2.0 * PI * ((j + 1) as f64 - a.peak) / 12.0).cos()
                    }),
                    config.archetype_noise_sigma,
                )
            };
            let raw: [f64; MONTHS] = std::array::from_fn(|j| {
                let u = if sigma > 0.0 {
                    rng.gen_range(-3.0 * sigma..=3.0 * sigma)
                } else {
                    0.0
                };
                (scale * shape[j] * (1.0 + u)).max(0.0)
            });
            let load_factor = rng.gen_range(0.15..0.6);
            let contracted_kw = scale / (730.0 * load_factor);
            let record = CustomerRecord {
                id: id.clone(),
                nace,
                location,
                contracted_power: T::lit(contracted_kw),
                raw_demand: raw.map(T::lit),
            };
            let truth = TruthRow {
                id,
                planted,
                pair: pair.map(|p| keys[p].0.clone()),
            };
            (record, truth)
        })
        .collect();

    let (records, rows): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
    Ok((
        CustomerDataset::from_records(records)?,
        GroundTruth { rows },
    ))
}

/// `location,province` and `nace,division` mapping tables for the codes the
/// generator can emit.
pub fn write_mappings(config: &SynthConfig, dir: &Path) -> Result<()> {
    let n_div = config.n_divisions.min(config.n_nace);
    let n_prov = config.n_provinces.min(config.n_locations);
    let path = dir.join("location_province.csv");
    let mut w = csvio::writer_to_path(&path)?;
    let write_loc = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
        w.write_record(["location", "province"])?;
        for l in 0..config.n_locations {
            w.write_record([location_code(l, n_prov), format!("P{:02}", l % n_prov + 1)])?;
        }
        Ok(())
    };
    write_loc(&mut w).map_err(|e| Error::csv(&path, e))?;
    csvio::finish(&path, w)?;

    let path = dir.join("nace_division.csv");
    let mut w = csvio::writer_to_path(&path)?;
    let write_nace = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
        w.write_record(["nace", "division"])?;
        for k in 0..config.n_nace {
            let code = nace_code(k, n_div);
            let division = code[..3].to_string();
            w.write_record([code, division])?;
        }
        Ok(())
    };
    write_nace(&mut w).map_err(|e| Error::csv(&path, e))?;
    csvio::finish(&path, w)
}
