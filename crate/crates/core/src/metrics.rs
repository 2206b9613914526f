//! Profile-to-target distance, robust medians and the enhancement KPIs.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CustomerDataset, NormalizedProfile};
use crate::pairing::PairKey;
use crate::scalar::Scalar;
use crate::targets::{TargetProfile, TargetResolver};
use crate::MONTHS;

/// Month-wise `c - g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceVector<T> {
    values: [T; MONTHS],
}

impl<T: Scalar> DifferenceVector<T> {
    pub fn between(c: &NormalizedProfile<T>, g: &TargetProfile<T>) -> Self {
        Self {
            values: std::array::from_fn(|j| c.values()[j] - g.values()[j]),
        }
    }

    pub fn values(&self) -> &[T; MONTHS] {
        &self.values
    }

    pub fn rms(&self) -> T {
        let sq: T = self.values.iter().map(|d| *d * *d).sum();
        (sq / T::from_count(MONTHS)).sqrt()
    }
}

/// Non-negative RMS distance between two monthly shapes.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Distance<T>(T);

impl<T: Scalar> Distance<T> {
    pub fn new(value: T) -> Result<Self> {
        if value.is_finite() && value >= T::zero() {
            Ok(Distance(value))
        } else {
            Err(Error::InvalidProfile(format!(
                "distance {value} must be finite and >= 0"
            )))
        }
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Root-mean-square of month-wise differences.
pub fn rmsd<T: Scalar>(a: &[T; MONTHS], b: &[T; MONTHS]) -> T {
    let sq: T = a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    (sq / T::from_count(MONTHS)).sqrt()
}

pub fn profile_distance<T: Scalar>(c: &NormalizedProfile<T>, g: &TargetProfile<T>) -> Distance<T> {
    Distance(rmsd(c.values(), g.values()))
}

pub(crate) fn cmp_scalar<T: Scalar>(a: &T, b: &T) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Median with the two middle values averaged for even lengths.
/// Reorders `values` in place.
pub fn median_in_place<T: Scalar>(values: &mut [T]) -> Option<T> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (left, upper, _) = values.select_nth_unstable_by(mid, cmp_scalar);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower = left
            .iter()
            .copied()
            .max_by(cmp_scalar)
            .expect("left half non-empty for even n >= 2");
        Some((lower + upper) / T::lit(2.0))
    }
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: f64) -> Option<T> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::lit(h - lo as f64);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn median_distance<T: Scalar>(distances: &[Distance<T>]) -> Result<Distance<T>> {
    let mut values: Vec<T> = distances.iter().map(|d| d.0).collect();
    median_in_place(&mut values)
        .map(Distance)
        .ok_or(Error::Empty("distance list"))
}

/// Distance of every eligible customer to its pair's target, indexed by
/// dataset position; `None` for customers that cannot be profiled or paired.
pub fn customer_distances<T, R>(
    dataset: &CustomerDataset<T>,
    resolver: &R,
) -> Result<Vec<Option<T>>>
where
    T: Scalar,
    R: TargetResolver<T> + ?Sized,
{
    dataset
        .records()
        .par_iter()
        .map(|r| {
            if !r.is_eligible() {
                return Ok(None);
            }
            let key = PairKey::new(&r.nace, &r.location);
            let target = resolver.resolve(&key)?;
            Ok(Some(profile_distance(&r.profile()?, target).0))
        })
        .collect()
}

/// Median distance over every eligible customer: the reference `d*` of
/// acquiring customers at random.
pub fn global_distance<T, R>(dataset: &CustomerDataset<T>, resolver: &R) -> Result<Distance<T>>
where
    T: Scalar,
    R: TargetResolver<T> + ?Sized,
{
    let mut all: Vec<T> = customer_distances(dataset, resolver)?
        .into_iter()
        .flatten()
        .collect();
    median_in_place(&mut all)
        .map(Distance)
        .ok_or(Error::NoEligibleCustomers)
}

/// `1 - d / d*`; at most 1, unbounded below.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EnhancementMetric<T>(T);

impl<T: Scalar> EnhancementMetric<T> {
    pub fn new(value: T) -> Self {
        EnhancementMetric(value)
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Enhancement metric squashed into (-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EnhancementIndicator<T>(T);

impl<T: Scalar> EnhancementIndicator<T> {
    pub fn value(self) -> T {
        self.0
    }
}

pub fn enhancement_metric<T: Scalar>(
    d: Distance<T>,
    d_star: Distance<T>,
) -> Result<EnhancementMetric<T>> {
    if d_star.0 <= T::zero() {
        return Err(Error::DegenerateReference);
    }
    Ok(EnhancementMetric(T::one() - d.0 / d_star.0))
}

/// Identity on [0, 1], clamped to 1 above, `exp(e) - 1` below zero.
pub fn eid<T: Scalar>(e: EnhancementMetric<T>) -> EnhancementIndicator<T> {
    let e = e.0;
    EnhancementIndicator(if e > T::one() {
        T::one()
    } else if e >= T::zero() {
        e
    } else {
        e.exp_m1()
    })
}

/// Relative distance reduction `(d_r - d_m) / d_r` of a strategy against
/// the random reference.
pub fn reduction<T: Scalar>(d_r: Distance<T>, d_m: Distance<T>) -> Result<T> {
    if d_r.0 <= T::zero() {
        return Err(Error::DegenerateReference);
    }
    Ok((d_r.0 - d_m.0) / d_r.0)
}
