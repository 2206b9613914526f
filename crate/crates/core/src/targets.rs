//! Target profile families: flat, solar-shaped and complement-of-aggregate.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};
use crate::model::{mean, MonthIndex};
use crate::pairing::{CodeMap, PairKey};
use crate::scalar::Scalar;
use crate::MONTHS;

/// Amplitude used by [`default_solar_row`] when none is given.
pub const DEFAULT_SOLAR_AMPLITUDE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetLabel {
    Flat,
    Solar,
    Complement,
    Custom,
}

impl fmt::Display for TargetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetLabel::Flat => "flat",
            TargetLabel::Solar => "solar",
            TargetLabel::Complement => "complement",
            TargetLabel::Custom => "custom",
        })
    }
}

/// Desired monthly demand shape. Always unit mean; values may be negative
/// (a complement of a very peaky aggregate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetProfile<T> {
    values: [T; MONTHS],
    label: TargetLabel,
}

impl<T: Scalar> TargetProfile<T> {
    /// Rescales `values` to unit mean. Fails if the mean is not positive.
    pub fn custom(values: [T; MONTHS]) -> Result<Self> {
        Self::normalized(values, TargetLabel::Custom)
    }

    fn normalized(values: [T; MONTHS], label: TargetLabel) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProfile("target values must be finite".into()));
        }
        let m = mean(&values);
        if m <= T::zero() {
            return Err(Error::InvalidProfile("target mean must be positive".into()));
        }
        Ok(Self {
            values: values.map(|v| v / m),
            label,
        })
    }

    pub fn values(&self) -> &[T; MONTHS] {
        &self.values
    }

    pub fn label(&self) -> TargetLabel {
        self.label
    }

    pub fn mean(&self) -> T {
        mean(&self.values)
    }

    pub fn negative_months(&self) -> Vec<MonthIndex> {
        MonthIndex::all()
            .filter(|m| self.values[m.slot()] < T::zero())
            .collect()
    }
}

/// Twelve monthly values `g_j = 1`.
pub fn flat_target<T: Scalar>() -> TargetProfile<T> {
    TargetProfile {
        values: [T::one(); MONTHS],
        label: TargetLabel::Flat,
    }
}

/// Retailer's aggregate monthly demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateDemand<T> {
    values: [T; MONTHS],
}

impl<T: Scalar> AggregateDemand<T> {
    pub fn new(values: [T; MONTHS]) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidProfile(
                "aggregate demand must be finite and >= 0".into(),
            ));
        }
        Ok(Self { values })
    }

    /// Month-wise mean of a multi-row series.
    pub fn from_series(rows: &[[T; MONTHS]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("aggregate demand series"));
        }
        let n = T::from_count(rows.len());
        let mut acc = [T::zero(); MONTHS];
        for row in rows {
            for (a, v) in acc.iter_mut().zip(row) {
                *a = *a + *v;
            }
        }
        Self::new(acc.map(|a| a / n))
    }

    pub fn values(&self) -> &[T; MONTHS] {
        &self.values
    }

    pub fn mean(&self) -> T {
        mean(&self.values)
    }
}

/// `g_j = 2 - m_j / mean(m)`: customers with this shape flatten the
/// aggregate. Negative values are kept (and logged) so the mean stays 1.
pub fn complement_target<T: Scalar>(m: &AggregateDemand<T>) -> Result<TargetProfile<T>> {
    let m_bar = m.mean();
    if m_bar <= T::zero() {
        return Err(Error::ZeroAggregateMean);
    }
    let two = T::lit(2.0);
    let target = TargetProfile {
        values: m.values.map(|v| two - v / m_bar),
        label: TargetLabel::Complement,
    };
    let negative = target.negative_months();
    if !negative.is_empty() {
        let months: Vec<String> = negative.iter().map(|m| m.to_string()).collect();
        log::warn!(
            "complement target is negative in {} (aggregate exceeds twice its mean)",
            months.join(", ")
        );
    }
    Ok(target)
}

/// Per-province monthly solar radiation, relative units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolarTable<T> {
    rows: BTreeMap<String, [T; MONTHS]>,
}

impl<T: Scalar> SolarTable<T> {
    pub fn new() -> Self {
        Self {
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, province: impl Into<String>, row: [T; MONTHS]) -> Result<()> {
        let province = province.into();
        if row.iter().any(|v| !v.is_finite() || *v <= T::zero()) {
            return Err(Error::InvalidProfile(format!(
                "solar row for `{province}` must be finite and positive"
            )));
        }
        self.rows.insert(province, row);
        Ok(())
    }

    /// Every province gets [`default_solar_row`].
    pub fn with_default<I, S>(provinces: I, amplitude: T) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let row = default_solar_row(amplitude)?;
        let mut table = Self::new();
        for p in provinces {
            table.insert(p, row)?;
        }
        Ok(table)
    }

    pub fn get(&self, province: &str) -> Option<&[T; MONTHS]> {
        self.rows.get(province)
    }

    pub fn provinces(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Month-wise mean of all rows after normalizing each to unit mean.
    pub fn national_row(&self) -> Result<[T; MONTHS]> {
        if self.rows.is_empty() {
            return Err(Error::Empty("solar table"));
        }
        let n = T::from_count(self.rows.len());
        let mut acc = [T::zero(); MONTHS];
        for row in self.rows.values() {
            let m = mean(row);
            for (a, v) in acc.iter_mut().zip(row) {
                *a = *a + *v / m;
            }
        }
        Ok(acc.map(|a| a / n))
    }
}

/// Summer-peaked sinusoid `1 + A cos(2π(j - 7)/12)` for months `j = 1..=12`.
/// Stand-in for measured radiation; `A` must lie in (0, 1).
pub fn default_solar_row<T: Scalar>(amplitude: T) -> Result<[T; MONTHS]> {
    if !(amplitude > T::zero() && amplitude < T::one()) {
        return Err(Error::InvalidConfig(format!(
            "solar amplitude {amplitude} must be in (0, 1)"
        )));
    }
    let mut row = [T::zero(); MONTHS];
    for m in MonthIndex::all() {
        let phase = T::lit(2.0 * PI * (f64::from(m.get()) - 7.0) / 12.0);
        row[m.slot()] = T::one() + amplitude * phase.cos();
    }
    Ok(row)
}

/// The province's radiation row rescaled to unit mean.
pub fn solar_target<T: Scalar>(province: &str, table: &SolarTable<T>) -> Result<TargetProfile<T>> {
    let row = table
        .get(province)
        .ok_or_else(|| Error::UnknownProvince(province.to_string()))?;
    TargetProfile::normalized(*row, TargetLabel::Solar)
}

/// [`solar_target`] on the national mean row of the table.
pub fn national_solar_target<T: Scalar>(table: &SolarTable<T>) -> Result<TargetProfile<T>> {
    TargetProfile::normalized(table.national_row()?, TargetLabel::Solar)
}

/// Chooses the target profile that applies to a pair.
pub trait TargetResolver<T>: Sync {
    fn resolve(&self, key: &PairKey) -> Result<&TargetProfile<T>>;
}

impl<T: Scalar> TargetResolver<T> for TargetProfile<T> {
    fn resolve(&self, _key: &PairKey) -> Result<&TargetProfile<T>> {
        Ok(self)
    }
}

/// One solar target per province; pairs are routed by their location.
#[derive(Debug, Clone)]
pub struct ProvinceTargets<T> {
    targets: HashMap<String, TargetProfile<T>>,
    provinces: CodeMap,
}

impl<T: Scalar> ProvinceTargets<T> {
    pub fn solar(table: &SolarTable<T>, provinces: CodeMap) -> Result<Self> {
        let targets = table
            .provinces()
            .map(|p| Ok((p.to_string(), solar_target(p, table)?)))
            .collect::<Result<_>>()?;
        Ok(Self { targets, provinces })
    }
}

impl<T: Scalar> TargetResolver<T> for ProvinceTargets<T> {
    fn resolve(&self, key: &PairKey) -> Result<&TargetProfile<T>> {
        let province =
            self.provinces
                .lookup(key.location())
                .ok_or_else(|| Error::MissingTarget {
                    nace: key.nace().to_string(),
                    location: key.location().to_string(),
                })?;
        self.targets
            .get(province.as_ref())
            .ok_or_else(|| Error::UnknownProvince(province.into_owned()))
    }
}

fn read_month_rows<T: Scalar>(
    path: &Path,
    leading: &[&str],
) -> Result<Vec<(Vec<String>, [T; MONTHS])>> {
    let mut rdr = csvio::reader_from_path(path)?;
    let mut header: Vec<String> = leading.iter().map(|s| s.to_string()).collect();
    header.extend(csvio::month_columns("m"));
    csvio::expect_header(path, &mut rdr, &header)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = csvio::line_of(&row);
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() != header.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                header.len(),
                row.len()
            )));
        }
        let keys = row.iter().take(leading.len()).map(str::to_string).collect();
        let mut values = [T::zero(); MONTHS];
        for (j, v) in values.iter_mut().enumerate() {
            *v = csvio::parse_scalar(&row[leading.len() + j], &header[leading.len() + j])
                .map_err(parse_err)?;
        }
        out.push((keys, values));
    }
    Ok(out)
}

/// `province,m01..m12`.
pub fn load_solar_table<T: Scalar>(path: &Path) -> Result<SolarTable<T>> {
    let mut table = SolarTable::new();
    for (keys, row) in read_month_rows(path, &["province"])? {
        table.insert(keys.into_iter().next().unwrap_or_default(), row)?;
    }
    if table.is_empty() {
        return Err(Error::Empty("solar table"));
    }
    Ok(table)
}

/// `m01..m12`, one or more rows; several rows are averaged month-wise.
pub fn load_aggregate<T: Scalar>(path: &Path) -> Result<AggregateDemand<T>> {
    let rows: Vec<[T; MONTHS]> = read_month_rows(path, &[])?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    AggregateDemand::from_series(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::profile_distance;
    use crate::model::normalize_profile;
    use proptest::prelude::*;

    #[test]
    fn flat_is_all_ones() {
        let g = flat_target::<f64>();
        assert_eq!(g.values(), &[1.0; 12]);
        assert_eq!(g.mean(), 1.0);
        assert_eq!(g.label(), TargetLabel::Flat);
        let c = normalize_profile(g.values()).unwrap();
        assert_eq!(profile_distance(&c, &g).value(), 0.0);
    }

    #[test]
    fn solar_constant_row_is_flat() {
        let mut t = SolarTable::new();
        t.insert("P01", [4.2f64; 12]).unwrap();
        let g = solar_target("P01", &t).unwrap();
        for v in g.values() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn solar_scale_invariant() {
        let row: [f64; 12] = [1.0, 1.5, 2.2, 3.0, 3.9, 4.5, 4.8, 4.2, 3.3, 2.4, 1.5, 1.0];
        let mut t = SolarTable::new();
        t.insert("A", row).unwrap();
        t.insert("B", row.map(|v| 3.0 * v)).unwrap();
        let a = solar_target("A", &t).unwrap();
        let b = solar_target("B", &t).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn solar_unknown_province() {
        let t = SolarTable::<f64>::new();
        assert!(matches!(solar_target("P99", &t), Err(Error::UnknownProvince(p)) if p == "P99"));
    }

    #[test]
    fn default_solar_row_peaks_in_july() {
        let amplitude = 0.4;
        let row = default_solar_row(amplitude).unwrap();
        // oracle: direct evaluation of the formula
        let mut sum = 0.0;
        for j in 1..=12 {
            let expected = 1.0 + amplitude * (2.0 * PI * (j as f64 - 7.0) / 12.0).cos();
            assert!((row[j - 1] - expected).abs() < 1e-15);
            sum += expected;
        }
        assert!((sum / 12.0 - 1.0).abs() < 1e-12);
        let peak = (0..12).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(peak, 6);
        assert!((row[6] - 1.4).abs() < 1e-15);
        assert!((row[0] - 0.6).abs() < 1e-15);

        let t = SolarTable::with_default(["P01"], amplitude).unwrap();
        let g = solar_target("P01", &t).unwrap();
        assert!((g.mean() - 1.0).abs() < 1e-9);
        assert!(default_solar_row(1.0f64).is_err());
        assert!(default_solar_row(0.0f64).is_err());
    }

    #[test]
    fn complement_of_flat_is_flat() {
        let m = AggregateDemand::new([7.0f64; 12]).unwrap();
        assert_eq!(complement_target(&m).unwrap().values(), &[1.0; 12]);
    }

    #[test]
    fn complement_alternating() {
        let m: [f64; 12] = std::array::from_fn(|j| if j % 2 == 0 { 1.5 } else { 0.5 });
        let g = complement_target(&AggregateDemand::new(m).unwrap()).unwrap();
        for (j, v) in g.values().iter().enumerate() {
            let expected = if j % 2 == 0 { 0.5 } else { 1.5 };
            assert_eq!(*v, expected);
        }
    }

    #[test]
    fn complement_keeps_negative_months() {
        let mut m = [1.0f64; 12];
        m[6] = 30.0;
        let g = complement_target(&AggregateDemand::new(m).unwrap()).unwrap();
        assert_eq!(g.negative_months(), vec![MonthIndex::new(7).unwrap()]);
        assert!((g.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complement_zero_mean_errors() {
        let m = AggregateDemand::new([0.0f64; 12]).unwrap();
        assert!(matches!(
            complement_target(&m),
            Err(Error::ZeroAggregateMean)
        ));
    }

    #[test]
    fn aggregate_series_is_month_wise_mean() {
        let a = AggregateDemand::from_series(&[[1.0f64; 12], [3.0; 12]]).unwrap();
        assert_eq!(a.values(), &[2.0; 12]);
    }

    #[test]
    fn custom_target_renormalized() {
        let g = TargetProfile::custom([2.0f64; 12]).unwrap();
        assert_eq!(g.values(), &[1.0; 12]);
        assert!(TargetProfile::custom([0.0f64; 12]).is_err());
    }

    proptest! {
        #[test]
        fn complement_identities(m in prop::array::uniform12(0.0f64..1e5)
            .prop_filter("positive mean", |a| a.iter().sum::<f64>() > 1e-3)) {
            let agg = AggregateDemand::new(m).unwrap();
            let g = complement_target(&agg).unwrap();
            prop_assert!((g.mean() - 1.0).abs() < 1e-12);
            let m_bar = agg.mean();
            for (gj, mj) in g.values().iter().zip(m) {
                prop_assert!((gj + mj / m_bar - 2.0).abs() < 1e-12);
            }
        }

        #[test]
        fn complement_is_involution(g in prop::array::uniform12(0.01f64..1.99)) {
            let g = TargetProfile::custom(g).unwrap();
            prop_assume!(g.values().iter().all(|v| *v < 2.0));
            let w = AggregateDemand::new(g.values().map(|v| 2.0 - v)).unwrap();
            let back = complement_target(&w).unwrap();
            for (a, b) in back.values().iter().zip(g.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
