//! Customer-acquisition simulation.
//!
//! A sequence is an ordered list of customer ids; feeding it through
//! [`accumulate_curve`] gives the distance of the growing aggregate demand to
//! a target after each acquisition. Greedy and power-ordered strategies rank
//! pairs and acquire each pair's members in a seeded random order; the random
//! baseline samples customers without replacement and is summarized by
//! per-step median and quartiles over repetitions.
//!
//! All randomness comes from ChaCha8 generators: a run seeded with `seed`
//! uses stream 0, and baseline repetition `r` uses stream `r + 1` of the same
//! seed, so results are reproducible across platforms and thread counts.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::csvio;
use crate::error::{Error, Result};
use crate::metrics::{cmp_scalar, median_in_place, quantile_sorted, reduction, rmsd, Distance};
use crate::model::CustomerDataset;
use crate::pairing::{PairRecord, PairTable};
use crate::scalar::Scalar;
use crate::targets::TargetProfile;
use crate::MONTHS;

/// Generator for `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Eid,
    Contracted,
    Demanded,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Eid => "eid",
            Strategy::Contracted => "contracted",
            Strategy::Demanded => "demanded",
            Strategy::Random => "random",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "eid" => Ok(Strategy::Eid),
            "contracted" => Ok(Strategy::Contracted),
            "demanded" => Ok(Strategy::Demanded),
            "random" => Ok(Strategy::Random),
            other => Err(format!(
                "unknown strategy `{other}` (eid, contracted, demanded, random)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerKey {
    Contracted,
    Demanded,
}

/// Whether power strategies rank pairs by their average power or rank
/// individual customers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    #[default]
    Pair,
    Customer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcquisitionSequence {
    ids: Vec<String>,
    strategy: Strategy,
    seed: u64,
}

impl AcquisitionSequence {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn truncate(&mut self, n: usize) {
        self.ids.truncate(n);
    }
}

fn pair_distance<T: Scalar>(p: &PairRecord<T>) -> Option<T> {
    p.kpis.map(|k| k.distance.value())
}

/// Shared tie-break: smaller median distance, then key order.
fn tie_break<T: Scalar>(a: &PairRecord<T>, b: &PairRecord<T>) -> Ordering {
    match (pair_distance(a), pair_distance(b)) {
        (Some(x), Some(y)) => cmp_scalar(&x, &y),
        _ => Ordering::Equal,
    }
    .then_with(|| a.key.cmp(&b.key))
}

fn concat_shuffled<T: Scalar>(pairs: &[&PairRecord<T>], seed: u64) -> Vec<String> {
    let mut rng = rng_for(seed, 0);
    let mut ids = Vec::with_capacity(pairs.iter().map(|p| p.len()).sum());
    for p in pairs {
        let start = ids.len();
        ids.extend(p.member_ids.iter().cloned());
        ids[start..].shuffle(&mut rng);
    }
    ids
}

/// Pairs by decreasing enhancement indicator, members of each pair in seeded
/// random order.
pub fn greedy_sequence<T: Scalar>(table: &PairTable<T>, seed: u64) -> Result<AcquisitionSequence> {
    let mut pairs: Vec<&PairRecord<T>> = table.pairs().iter().collect();
    if let Some(p) = pairs.iter().find(|p| p.kpis.is_none()) {
        return Err(Error::Inconsistent(format!(
            "pair {} has no KPIs attached",
            p.key
        )));
    }
    let indicator = |p: &PairRecord<T>| p.kpis.expect("checked above").indicator.value();
    pairs.sort_by(|a, b| cmp_scalar(&indicator(b), &indicator(a)).then_with(|| tie_break(a, b)));
    Ok(AcquisitionSequence {
        ids: concat_shuffled(&pairs, seed),
        strategy: Strategy::Eid,
        seed,
    })
}

/// Highest contracted (or demanded) power first.
pub fn power_sequence<T: Scalar>(
    table: &PairTable<T>,
    dataset: &CustomerDataset<T>,
    key: PowerKey,
    granularity: Granularity,
    seed: u64,
) -> Result<AcquisitionSequence> {
    let strategy = match key {
        PowerKey::Contracted => Strategy::Contracted,
        PowerKey::Demanded => Strategy::Demanded,
    };
    let ids = match granularity {
        Granularity::Pair => {
            let power = |p: &PairRecord<T>| match key {
                PowerKey::Contracted => p.avg_contracted,
                PowerKey::Demanded => p.avg_demand,
            };
            let mut pairs: Vec<&PairRecord<T>> = table.pairs().iter().collect();
            pairs.sort_by(|a, b| cmp_scalar(&power(b), &power(a)).then_with(|| tie_break(a, b)));
            concat_shuffled(&pairs, seed)
        }
        Granularity::Customer => {
            let mut members: Vec<usize> = table
                .pairs()
                .iter()
                .flat_map(|p| p.member_positions().iter().copied())
                .collect();
            let records = dataset.records();
            let power = |i: usize| match key {
                PowerKey::Contracted => records[i].contracted_power,
                PowerKey::Demanded => records[i].mean_demand(),
            };
            members.sort_by(|&a, &b| {
                cmp_scalar(&power(b), &power(a)).then_with(|| records[a].id.cmp(&records[b].id))
            });
            members.into_iter().map(|i| records[i].id.clone()).collect()
        }
    };
    Ok(AcquisitionSequence {
        ids,
        strategy,
        seed,
    })
}

fn eligible_ids<T: Scalar>(dataset: &CustomerDataset<T>) -> Vec<&str> {
    dataset.eligible().map(|r| r.id.as_str()).collect()
}

fn sample_ids(pool: &[&str], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    if n > pool.len() {
        return Err(Error::SampleTooLarge {
            requested: n,
            available: pool.len(),
        });
    }
    let mut pool = pool.to_vec();
    let (chosen, _) = pool.partial_shuffle(rng, n);
    Ok(chosen.iter().map(|s| s.to_string()).collect())
}

/// `n` eligible customers sampled uniformly without replacement.
pub fn random_sequence<T: Scalar>(
    dataset: &CustomerDataset<T>,
    n: usize,
    seed: u64,
) -> Result<AcquisitionSequence> {
    let ids = sample_ids(&eligible_ids(dataset), n, &mut rng_for(seed, 0))?;
    Ok(AcquisitionSequence {
        ids,
        strategy: Strategy::Random,
        seed,
    })
}

/// Distance to target after each acquisition; index `i` is step `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCurve<T> {
    distances: Vec<T>,
}

impl<T: Scalar> DistanceCurve<T> {
    pub fn distances(&self) -> &[T] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn at(&self, step: usize) -> Option<T> {
        step.checked_sub(1)
            .and_then(|i| self.distances.get(i))
            .copied()
    }

    pub fn last(&self) -> Option<T> {
        self.distances.last().copied()
    }

    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(["step", "distance"])?;
        for (i, d) in self.distances.iter().enumerate() {
            w.write_record([(i + 1).to_string(), csvio::fmt(*d)])?;
        }
        Ok(())
    }
}

/// Running raw-demand sum; each step normalizes the sum to unit mean and
/// measures its distance to `target`. Linear in the sequence length.
pub fn accumulate_curve<T: Scalar>(
    seq: &AcquisitionSequence,
    dataset: &CustomerDataset<T>,
    target: &TargetProfile<T>,
) -> Result<DistanceCurve<T>> {
    let months = T::from_count(MONTHS);
    let mut sum = [T::zero(); MONTHS];
    let mut distances = Vec::with_capacity(seq.len());
    for id in &seq.ids {
        let r = dataset
            .get(id)
            .ok_or_else(|| Error::UnknownCustomer(id.clone()))?;
        if r.is_zero_demand() {
            return Err(Error::ZeroDemand { id: id.clone() });
        }
        for (s, v) in sum.iter_mut().zip(&r.raw_demand) {
            *s = *s + *v;
        }
        let mean = sum.iter().copied().sum::<T>() / months;
        let shape = sum.map(|s| s / mean);
        distances.push(rmsd(&shape, target.values()));
    }
    Ok(DistanceCurve { distances })
}

/// Per-step median and quartiles of repeated random acquisitions.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCurve<T> {
    pub median: Vec<T>,
    pub q1: Vec<T>,
    pub q3: Vec<T>,
    pub repetitions: usize,
}

impl<T: Scalar> BaselineCurve<T> {
    pub fn len(&self) -> usize {
        self.median.len()
    }

    pub fn is_empty(&self) -> bool {
        self.median.is_empty()
    }

    pub fn median_at(&self, step: usize) -> Option<T> {
        step.checked_sub(1)
            .and_then(|i| self.median.get(i))
            .copied()
    }

    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(["step", "median", "q1", "q3"])?;
        for i in 0..self.len() {
            w.write_record([
                (i + 1).to_string(),
                csvio::fmt(self.median[i]),
                csvio::fmt(self.q1[i]),
                csvio::fmt(self.q3[i]),
            ])?;
        }
        Ok(())
    }
}

/// `reps` random sequences of length `n`; repetition `r` draws from stream
/// `r + 1` of `seed`. Repetitions run in parallel and are merged in order.
pub fn baseline_band<T: Scalar>(
    dataset: &CustomerDataset<T>,
    target: &TargetProfile<T>,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<BaselineCurve<T>> {
    if reps == 0 {
        return Err(Error::InvalidConfig(
            "baseline needs at least one repetition".into(),
        ));
    }
    let pool = eligible_ids(dataset);
    let curves: Vec<DistanceCurve<T>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ids = sample_ids(&pool, n, &mut rng_for(seed, r as u64 + 1))?;
            let seq = AcquisitionSequence {
                ids,
                strategy: Strategy::Random,
                seed,
            };
            accumulate_curve(&seq, dataset, target)
        })
        .collect::<Result<_>>()?;

    let mut median = Vec::with_capacity(n);
    let mut q1 = Vec::with_capacity(n);
    let mut q3 = Vec::with_capacity(n);
    let mut column = vec![T::zero(); reps];
    for step in 0..n {
        for (slot, c) in column.iter_mut().zip(&curves) {
            *slot = c.distances[step];
        }
        column.sort_by(cmp_scalar);
        q1.push(quantile_sorted(&column, 0.25).expect("reps > 0"));
        q3.push(quantile_sorted(&column, 0.75).expect("reps > 0"));
        median.push(median_in_place(&mut column).expect("reps > 0"));
    }
    Ok(BaselineCurve {
        median,
        q1,
        q3,
        repetitions: reps,
    })
}

/// Relative reduction of `curve` against the baseline median at each
/// checkpoint step.
pub fn reduction_curve<T: Scalar>(
    curve: &DistanceCurve<T>,
    baseline: &BaselineCurve<T>,
    checkpoints: &[usize],
) -> Result<Vec<(usize, T)>> {
    checkpoints
        .iter()
        .map(|&n| {
            let d_m = curve.at(n).ok_or(Error::MissingCheckpoint { step: n })?;
            let d_r = baseline
                .median_at(n)
                .ok_or(Error::MissingCheckpoint { step: n })?;
            let r = reduction(Distance::new(d_r)?, Distance::new(d_m)?)
                .map_err(|_| Error::ZeroBaseline { step: n })?;
            Ok((n, r))
        })
        .collect()
}

pub fn write_reduction<T: Scalar, W: Write>(
    w: &mut csv::Writer<W>,
    rows: &[(usize, T)],
) -> csv::Result<()> {
    w.write_record(["n", "reduction"])?;
    for (n, r) in rows {
        w.write_record([n.to_string(), csvio::fmt(*r)])?;
    }
    Ok(())
}
