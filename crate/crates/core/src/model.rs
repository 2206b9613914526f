//! Customer records, dataset ingestion and profile normalization.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::MONTHS;

/// One calendar month, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthIndex(u8);

impl MonthIndex {
    pub fn new(month: u8) -> Option<Self> {
        (1..=MONTHS as u8)
            .contains(&month)
            .then_some(MonthIndex(month))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Position in a `[T; 12]` array.
    pub fn slot(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn all() -> impl Iterator<Item = MonthIndex> {
        (1..=MONTHS as u8).map(MonthIndex)
    }
}

impl fmt::Display for MonthIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{:02}", self.0)
    }
}

pub(crate) fn mean<T: Scalar>(values: &[T; MONTHS]) -> T {
    values.iter().copied().sum::<T>() / T::from_count(MONTHS)
}

/// A demand shape: twelve monthly values scaled to unit mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedProfile<T> {
    values: [T; MONTHS],
}

impl<T: Scalar> NormalizedProfile<T> {
    /// Divides `raw` by its arithmetic mean.
    pub fn from_raw(raw: &[T; MONTHS]) -> std::result::Result<Self, ProfileError> {
        if let Some(j) = raw.iter().position(|v| !v.is_finite() || *v < T::zero()) {
            return Err(ProfileError::Invalid(MonthIndex(j as u8 + 1)));
        }
        let m = mean(raw);
        if m <= T::zero() {
            return Err(ProfileError::AllZero);
        }
        Ok(Self {
            values: raw.map(|v| v / m),
        })
    }

    pub fn values(&self) -> &[T; MONTHS] {
        &self.values
    }

    pub fn get(&self, month: MonthIndex) -> T {
        self.values[month.slot()]
    }

    pub fn mean(&self) -> T {
        mean(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileError {
    AllZero,
    Invalid(MonthIndex),
}

/// Normalizes twelve raw monthly demands to a unit-mean shape.
pub fn normalize_profile<T: Scalar>(raw: &[T; MONTHS]) -> Result<NormalizedProfile<T>> {
    NormalizedProfile::from_raw(raw).map_err(|e| match e {
        ProfileError::AllZero => Error::ZeroDemand { id: String::new() },
        ProfileError::Invalid(m) => Error::InvalidProfile(format!("{m} is negative or not finite")),
    })
}

/// One anonymized supply point.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerRecord<T> {
    pub id: String,
    pub nace: String,
    pub location: String,
    /// kW.
    pub contracted_power: T,
    /// kWh per month.
    pub raw_demand: [T; MONTHS],
}

impl<T: Scalar> CustomerRecord<T> {
    pub fn has_pair_keys(&self) -> bool {
        !self.nace.is_empty() && !self.location.is_empty()
    }

    pub fn is_zero_demand(&self) -> bool {
        self.raw_demand.iter().all(|v| *v == T::zero())
    }

    /// Mean monthly demand, kWh/month.
    pub fn mean_demand(&self) -> T {
        mean(&self.raw_demand)
    }

    /// Has pair keys and a profile that can be normalized.
    pub fn is_eligible(&self) -> bool {
        self.has_pair_keys() && !self.is_zero_demand()
    }

    pub fn profile(&self) -> Result<NormalizedProfile<T>> {
        normalize_profile(&self.raw_demand).map_err(|e| match e {
            Error::ZeroDemand { .. } => Error::ZeroDemand {
                id: self.id.clone(),
            },
            other => other,
        })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty customer id".into());
        }
        if !self.contracted_power.is_finite() || self.contracted_power < T::zero() {
            return Err(format!(
                "contracted power {} must be finite and >= 0",
                self.contracted_power
            ));
        }
        if let Some((j, v)) = self
            .raw_demand
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < T::zero())
        {
            return Err(format!(
                "month {:02}: demand {v} must be finite and >= 0",
                j + 1
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DatasetCounts {
    pub total: usize,
    pub with_pair_keys: usize,
    /// Records lacking a NACE or location code.
    pub excluded: usize,
    /// Records whose twelve monthly demands are all zero.
    pub zero_demand: usize,
}

/// A rejected or flagged input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Immutable collection of customers keyed by id.
#[derive(Debug, Clone, Default)]
pub struct CustomerDataset<T> {
    records: Vec<CustomerRecord<T>>,
    index: HashMap<String, usize>,
    counts: DatasetCounts,
    diagnostics: Vec<Diagnostic>,
}

impl<T: Scalar> CustomerDataset<T> {
    pub fn from_records(records: Vec<CustomerRecord<T>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let mut counts = DatasetCounts::default();
        for (pos, r) in records.iter().enumerate() {
            r.validate().map_err(Error::InvalidProfile)?;
            if index.insert(r.id.clone(), pos).is_some() {
                return Err(Error::DuplicateId { id: r.id.clone() });
            }
            counts.total += 1;
            if r.has_pair_keys() {
                counts.with_pair_keys += 1;
            } else {
                counts.excluded += 1;
            }
            if r.is_zero_demand() {
                counts.zero_demand += 1;
            }
        }
        Ok(Self {
            records,
            index,
            counts,
            diagnostics: Vec::new(),
        })
    }

    pub fn records(&self) -> &[CustomerRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> DatasetCounts {
        self.counts
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn get(&self, id: &str) -> Option<&CustomerRecord<T>> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Customers that take part in pairing and KPI computation.
    pub fn eligible(&self) -> impl Iterator<Item = &CustomerRecord<T>> + '_ {
        self.records.iter().filter(|r| r.is_eligible())
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible().count()
    }
}

fn customer_header() -> Vec<String> {
    let mut h: Vec<String> = ["id", "nace", "location", "contracted_kw"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(csvio::month_columns("m"));
    h
}

fn parse_customer<T: Scalar>(
    rec: &csv::StringRecord,
) -> std::result::Result<CustomerRecord<T>, String> {
    if rec.len() != 4 + MONTHS {
        return Err(format!(
            "expected {} fields, found {}",
            4 + MONTHS,
            rec.len()
        ));
    }
    let contracted_power = csvio::parse_scalar(&rec[3], "contracted_kw")?;
    let mut raw_demand = [T::zero(); MONTHS];
    for (j, slot) in raw_demand.iter_mut().enumerate() {
        *slot = csvio::parse_scalar(&rec[4 + j], &format!("m{:02}", j + 1))?;
    }
    let r = CustomerRecord {
        id: rec[0].to_string(),
        nace: rec[1].to_string(),
        location: rec[2].to_string(),
        contracted_power,
        raw_demand,
    };
    r.validate()?;
    Ok(r)
}

/// Reads the customer CSV. Malformed rows are skipped with a diagnostic;
/// a header mismatch or a duplicated id aborts the load.
pub fn read_customers<T: Scalar, R: Read>(source: &Path, reader: R) -> Result<CustomerDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    csvio::expect_header(source, &mut rdr, &customer_header())?;

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(source, e))?;
        let line = csvio::line_of(&row);
        match parse_customer::<T>(&row) {
            Ok(r) => {
                if let Some(first) = seen.insert(r.id.clone(), line) {
                    log::error!("duplicate id `{}` on lines {first} and {line}", r.id);
                    return Err(Error::DuplicateId { id: r.id });
                }
                if !r.has_pair_keys() {
                    diagnostics.push(Diagnostic {
                        line,
                        message: format!(
                            "customer `{}` lacks nace or location; excluded from pairing",
                            r.id
                        ),
                    });
                }
                if r.is_zero_demand() {
                    diagnostics.push(Diagnostic {
                        line,
                        message: format!("customer `{}` has zero demand; excluded from KPIs", r.id),
                    });
                }
                records.push(r);
            }
            Err(message) => diagnostics.push(Diagnostic {
                line,
                message: format!("row rejected: {message}"),
            }),
        }
    }
    let mut ds = CustomerDataset::from_records(records)?;
    ds.diagnostics = diagnostics;
    Ok(ds)
}

pub fn load_customers<T: Scalar>(path: &Path) -> Result<CustomerDataset<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_customers(path, std::io::BufReader::new(file))
}

pub fn write_customers_to<T: Scalar, W: Write>(
    writer: &mut csv::Writer<W>,
    records: &[CustomerRecord<T>],
) -> csv::Result<()> {
    writer.write_record(customer_header())?;
    let mut row: Vec<String> = Vec::with_capacity(4 + MONTHS);
    for r in records {
        row.clear();
        row.push(r.id.clone());
        row.push(r.nace.clone());
        row.push(r.location.clone());
        row.push(csvio::fmt(r.contracted_power));
        row.extend(r.raw_demand.iter().map(|v| csvio::fmt(*v)));
        writer.write_record(&row)?;
    }
    Ok(())
}

pub fn save_customers<T: Scalar>(path: &Path, dataset: &CustomerDataset<T>) -> Result<()> {
    let mut w = csvio::writer_to_path(path)?;
    write_customers_to(&mut w, dataset.records()).map_err(|e| Error::csv(path, e))?;
    csvio::finish(path, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str =
        "id,nace,location,contracted_kw,m01,m02,m03,m04,m05,m06,m07,m08,m09,m10,m11,m12\n";

    fn parse(body: &str) -> Result<CustomerDataset<f64>> {
        let text = format!("{HEADER}{body}");
        read_customers(Path::new("mem.csv"), text.as_bytes())
    }

    #[test]
    fn month_index_bounds() {
        assert!(MonthIndex::new(0).is_none());
        assert!(MonthIndex::new(13).is_none());
        assert_eq!(MonthIndex::new(7).unwrap().slot(), 6);
        assert_eq!(MonthIndex::all().count(), 12);
    }

    #[test]
    fn loads_valid_rows() {
        let ds = parse(
            "a,C101,P01-1,3.3,1,1,1,1,1,1,1,1,1,1,1,1\n\
             b,C101,P01-1,3.3,2,2,2,2,2,2,2,2,2,2,2,2\n\
             c,C102,P02-1,10,1,2,3,4,5,6,7,8,9,10,11,12\n",
        )
        .unwrap();
        assert_eq!(ds.counts().total, 3);
        assert_eq!(ds.counts().excluded, 0);
        assert!(ds.diagnostics().is_empty());
    }

    #[test]
    fn missing_nace_is_kept_but_excluded() {
        let ds = parse(
            "a,C101,P01-1,3.3,1,1,1,1,1,1,1,1,1,1,1,1\n\
             b,,P01-1,3.3,2,2,2,2,2,2,2,2,2,2,2,2\n",
        )
        .unwrap();
        assert_eq!(ds.counts().total, 2);
        assert_eq!(ds.counts().excluded, 1);
        assert_eq!(ds.eligible_count(), 1);
    }

    #[test]
    fn duplicate_id_is_fatal() {
        let err = parse(
            "dup,C101,P01-1,3.3,1,1,1,1,1,1,1,1,1,1,1,1\n\
             dup,C102,P01-1,3.3,2,2,2,2,2,2,2,2,2,2,2,2\n",
        )
        .unwrap_err();
        match err {
            Error::DuplicateId { id } => assert_eq!(id, "dup"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_number_rejects_row_with_line() {
        let ds = parse(
            "a,C101,P01-1,3.3,1,1,1,1,1,1,1,1,1,1,1,1\n\
             b,C101,P01-1,3.3,1,x,1,1,1,1,1,1,1,1,1,1\n\
             c,C101,P01-1,-1,1,1,1,1,1,1,1,1,1,1,1,1\n",
        )
        .unwrap();
        assert_eq!(ds.counts().total, 1);
        let lines: Vec<u64> = ds.diagnostics().iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![3, 4]);
        assert!(ds.diagnostics()[0].message.contains("m02"));
    }

    #[test]
    fn header_mismatch_is_fatal() {
        let err = read_customers::<f64, _>(Path::new("x.csv"), "id,nace\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::HeaderMismatch { .. }));
    }

    #[test]
    fn zero_demand_flagged() {
        let ds = parse("z,C101,P01-1,3.3,0,0,0,0,0,0,0,0,0,0,0,0\n").unwrap();
        assert_eq!(ds.counts().zero_demand, 1);
        assert_eq!(ds.eligible_count(), 0);
        assert!(
            matches!(ds.records()[0].profile(), Err(Error::ZeroDemand { ref id }) if id == "z")
        );
    }

    #[test]
    fn normalize_constant_is_ones() {
        let p = normalize_profile(&[5.0f64; 12]).unwrap();
        assert_eq!(p.values(), &[1.0; 12]);
    }

    #[test]
    fn normalize_hand_checked() {
        let raw: [f64; 12] = [1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0];
        let p = normalize_profile(&raw).unwrap();
        let expected = [0.5, 1.0, 1.5, 1.0, 0.5, 1.0, 1.5, 1.0, 0.5, 1.0, 1.5, 1.0];
        for (a, b) in p.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_zero_and_negative() {
        assert!(matches!(
            normalize_profile(&[0.0f64; 12]),
            Err(Error::ZeroDemand { .. })
        ));
        let mut raw = [1.0f64; 12];
        raw[3] = -1.0;
        assert!(matches!(
            normalize_profile(&raw),
            Err(Error::InvalidProfile(_))
        ));
    }

    #[test]
    fn normalize_works_for_f32() {
        let p = normalize_profile(&[2.0f32; 12]).unwrap();
        assert_eq!(p.mean(), 1.0f32);
    }

    fn arb_raw() -> impl Strategy<Value = [f64; 12]> {
        prop::array::uniform12(0.0f64..1e6).prop_filter("nonzero", |a| a.iter().any(|v| *v > 1e-3))
    }

    proptest! {
        #[test]
        fn normalized_mean_is_one(raw in arb_raw()) {
            let p = normalize_profile(&raw).unwrap();
            prop_assert!((p.mean() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn normalization_is_scale_invariant(raw in arb_raw(), k in 1e-3f64..1e3) {
            let a = normalize_profile(&raw).unwrap();
            let b = normalize_profile(&raw.map(|v| v * k)).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn csv_round_trip(rows in prop::collection::vec(
            ("[a-z]{1,6}", "[A-Z][0-9]{0,3}", "[A-Z0-9-]{0,5}", 0.0f64..1e4, prop::array::uniform12(0.0f64..1e7)),
            0..20,
        )) {
            let mut records = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (id, nace, location, kw, raw) in rows {
                if seen.insert(id.clone()) {
                    records.push(CustomerRecord { id, nace, location, contracted_power: kw, raw_demand: raw });
                }
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            write_customers_to(&mut w, &records).unwrap();
            let bytes = w.into_inner().unwrap();
            let ds: CustomerDataset<f64> = read_customers(Path::new("mem"), bytes.as_slice()).unwrap();
            prop_assert_eq!(ds.records(), records.as_slice());
        }
    }
}
