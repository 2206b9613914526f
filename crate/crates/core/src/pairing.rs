//! NACE-location pair table, pair KPIs, identification statistics and the
//! province x division indicator matrix.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::csvio;
use crate::error::{Error, Result};
use crate::metrics::{
    customer_distances, eid, enhancement_metric, median_in_place, Distance, EnhancementIndicator,
    EnhancementMetric,
};
use crate::model::{CustomerDataset, NormalizedProfile};
use crate::scalar::Scalar;
use crate::targets::TargetResolver;
use crate::MONTHS;

/// Economic activity and location shared by every member of a pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    nace: String,
    location: String,
}

impl PairKey {
    pub fn new(nace: impl Into<String>, location: impl Into<String>) -> Self {
        Self {
            nace: nace.into(),
            location: location.into(),
        }
    }

    pub fn nace(&self) -> &str {
        &self.nace
    }

    pub fn location(&self) -> &str {
        &self.location
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.nace, self.location)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKpis<T> {
    /// Median of member distances.
    pub distance: Distance<T>,
    pub metric: EnhancementMetric<T>,
    pub indicator: EnhancementIndicator<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord<T> {
    pub key: PairKey,
    /// Sorted by id.
    pub member_ids: Vec<String>,
    /// Mean of member profiles, rescaled to unit mean.
    pub pair_profile: NormalizedProfile<T>,
    /// kW.
    pub avg_contracted: T,
    /// kWh/month.
    pub avg_demand: T,
    pub kpis: Option<PairKpis<T>>,
    members: Vec<usize>,
}

impl<T: Scalar> PairRecord<T> {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    /// Dataset positions of the members, in `member_ids` order.
    pub fn member_positions(&self) -> &[usize] {
        &self.members
    }
}

/// One record per non-empty pair, ordered by key.
#[derive(Debug, Clone, Default)]
pub struct PairTable<T> {
    pairs: Vec<PairRecord<T>>,
    d_star: Option<Distance<T>>,
}

impl<T: Scalar> PairTable<T> {
    pub fn pairs(&self) -> &[PairRecord<T>] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, key: &PairKey) -> Option<&PairRecord<T>> {
        self.pairs
            .binary_search_by(|p| p.key.cmp(key))
            .ok()
            .map(|i| &self.pairs[i])
    }

    /// Reference distance the KPIs were computed against.
    pub fn d_star(&self) -> Option<Distance<T>> {
        self.d_star
    }

    /// Table from already-built records; sorts them by key.
    pub fn from_records(mut pairs: Vec<PairRecord<T>>) -> Self {
        pairs.sort_by(|a, b| a.key.cmp(&b.key));
        Self {
            pairs,
            d_star: None,
        }
    }

    pub fn member_count(&self) -> usize {
        self.pairs.iter().map(PairRecord::len).sum()
    }
}

/// Groups eligible customers by (nace, location).
pub fn build_pairs<T: Scalar>(dataset: &CustomerDataset<T>) -> PairTable<T> {
    let mut groups: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
    for (pos, r) in dataset.records().iter().enumerate() {
        if r.is_eligible() {
            groups
                .entry(PairKey::new(&r.nace, &r.location))
                .or_default()
                .push(pos);
        }
    }
    if groups.is_empty() {
        log::warn!("no customer has pair keys and non-zero demand; pair table is empty");
    }
    let records = dataset.records();
    let pairs = groups
        .into_par_iter()
        .map(|(key, mut members)| {
            members.sort_by(|a, b| records[*a].id.cmp(&records[*b].id));
            let n = T::from_count(members.len());
            let mut acc = [T::zero(); MONTHS];
            let mut contracted = T::zero();
            let mut demand = T::zero();
            for &m in &members {
                let r = &records[m];
                let p = r
                    .profile()
                    .expect("eligible customers have non-zero demand");
                for (a, v) in acc.iter_mut().zip(p.values()) {
                    *a = *a + *v;
                }
                contracted = contracted + r.contracted_power;
                demand = demand + r.mean_demand();
            }
            let pair_profile =
                NormalizedProfile::from_raw(&acc).expect("mean of unit-mean profiles is positive");
            PairRecord {
                key,
                member_ids: members.iter().map(|&m| records[m].id.clone()).collect(),
                pair_profile,
                avg_contracted: contracted / n,
                avg_demand: demand / n,
                kpis: None,
                members,
            }
        })
        .collect();
    PairTable {
        pairs,
        d_star: None,
    }
}

/// Median member distance, enhancement metric and indicator for each pair.
pub fn attach_kpis<T, R>(
    table: &mut PairTable<T>,
    dataset: &CustomerDataset<T>,
    resolver: &R,
    d_star: Distance<T>,
) -> Result<()>
where
    T: Scalar,
    R: TargetResolver<T> + ?Sized,
{
    if d_star.value() <= T::zero() {
        return Err(Error::DegenerateReference);
    }
    let distances = customer_distances(dataset, resolver)?;
    table
        .pairs
        .par_iter_mut()
        .try_for_each(|pair| -> Result<()> {
            let mut member_d: Vec<T> = pair
                .members
                .iter()
                .map(|&m| {
                    distances[m]
                        .ok_or_else(|| Error::UnknownCustomer(dataset.records()[m].id.clone()))
                })
                .collect::<Result<_>>()?;
            let distance =
                Distance::new(median_in_place(&mut member_d).ok_or(Error::Empty("pair"))?)?;
            let metric = enhancement_metric(distance, d_star)?;
            pair.kpis = Some(PairKpis {
                distance,
                metric,
                indicator: eid(metric),
            });
            Ok(())
        })?;
    table.d_star = Some(d_star);
    Ok(())
}

/// Pair cardinality distribution and how many customers sit in small sets.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationStats {
    /// size -> number of pairs of that size.
    pub pair_cardinality_histogram: BTreeMap<usize, usize>,
    /// N -> customers in pairs of size <= N, for N = 1..=10 and the largest size.
    pub customers_in_sets_leq: BTreeMap<usize, usize>,
    /// N -> share of non-empty pairs with size <= N, same N as above.
    pub pair_ratio_leq: BTreeMap<usize, f64>,
    pub nonempty_pair_count: usize,
    pub customer_count: usize,
    /// Distinct NACE codes times distinct locations.
    pub total_pair_space: usize,
}

impl IdentificationStats {
    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a PairKey, usize)>,
    {
        let mut histogram = BTreeMap::new();
        let mut naces = BTreeSet::new();
        let mut locations = BTreeSet::new();
        for (key, n) in pairs {
            if n == 0 {
                continue;
            }
            *histogram.entry(n).or_insert(0usize) += 1;
            naces.insert(key.nace());
            locations.insert(key.location());
        }
        let nonempty: usize = histogram.values().sum();
        let customers: usize = histogram.iter().map(|(s, c)| s * c).sum();
        let max = histogram.keys().next_back().copied().unwrap_or(0);
        let mut customers_leq = BTreeMap::new();
        let mut ratio = BTreeMap::new();
        for n in (1..=10).chain(std::iter::once(max)).filter(|n| *n >= 1) {
            let (mut c, mut p) = (0, 0);
            for (&size, &count) in histogram.range(..=n) {
                c += size * count;
                p += count;
            }
            customers_leq.insert(n, c);
            ratio.insert(
                n,
                if nonempty == 0 {
                    0.0
                } else {
                    p as f64 / nonempty as f64
                },
            );
        }
        Self {
            pair_cardinality_histogram: histogram,
            customers_in_sets_leq: customers_leq,
            pair_ratio_leq: ratio,
            nonempty_pair_count: nonempty,
            customer_count: customers,
            total_pair_space: naces.len() * locations.len(),
        }
    }

    /// Customers in pairs with at most `n` members, for any `n`.
    pub fn customers_leq(&self, n: usize) -> usize {
        self.pair_cardinality_histogram
            .range(..=n)
            .map(|(s, c)| s * c)
            .sum()
    }

    pub fn write_histogram<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(["size", "pairs"])?;
        for (size, count) in &self.pair_cardinality_histogram {
            w.write_record([size.to_string(), count.to_string()])?;
        }
        Ok(())
    }

    pub fn write_ratio<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(["n", "customers_in_sets_leq", "pair_ratio_leq"])?;
        for (n, c) in &self.customers_in_sets_leq {
            w.write_record([
                n.to_string(),
                c.to_string(),
                self.pair_ratio_leq[n].to_string(),
            ])?;
        }
        Ok(())
    }
}

pub fn identification_stats<T: Scalar>(table: &PairTable<T>) -> IdentificationStats {
    IdentificationStats::from_pairs(table.pairs.iter().map(|p| (&p.key, p.len())))
}

/// Maps a code (location or NACE) to a coarser group (province or division).
#[derive(Debug, Clone)]
pub enum CodeMap {
    Explicit(HashMap<String, String>),
    /// Leading run of ASCII alphanumerics, e.g. `P36-0012` -> `P36`.
    AlphanumericPrefix,
    /// First `n` characters, e.g. division `C10` of NACE `C1011`.
    FirstChars(usize),
}

impl CodeMap {
    pub fn default_province() -> Self {
        CodeMap::AlphanumericPrefix
    }

    pub fn default_division() -> Self {
        CodeMap::FirstChars(3)
    }

    pub fn lookup<'a>(&'a self, code: &'a str) -> Option<Cow<'a, str>> {
        let out = match self {
            CodeMap::Explicit(m) => m.get(code).map(|s| Cow::Borrowed(s.as_str())),
            CodeMap::AlphanumericPrefix => {
                let end = code
                    .find(|c: char| !c.is_ascii_alphanumeric())
                    .unwrap_or(code.len());
                Some(Cow::Borrowed(&code[..end]))
            }
            CodeMap::FirstChars(n) => {
                let end = code
                    .char_indices()
                    .nth(*n)
                    .map(|(i, _)| i)
                    .unwrap_or(code.len());
                Some(Cow::Borrowed(&code[..end]))
            }
        };
        out.filter(|s| !s.is_empty())
    }

    fn groups(&self) -> BTreeSet<String> {
        match self {
            CodeMap::Explicit(m) => m.values().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }

    /// Two-column mapping CSV with the given header, e.g. `location,province`.
    pub fn load(path: &Path, header: [&str; 2]) -> Result<Self> {
        let mut rdr = csvio::reader_from_path(path)?;
        let expected: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        csvio::expect_header(path, &mut rdr, &expected)?;
        let mut map = HashMap::new();
        for row in rdr.records() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            if row.len() != 2 || row[0].is_empty() || row[1].is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: csvio::line_of(&row),
                    message: "expected two non-empty fields".into(),
                });
            }
            map.insert(row[0].to_string(), row[1].to_string());
        }
        Ok(CodeMap::Explicit(map))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixCell<T> {
    pub indicator: EnhancementIndicator<T>,
    pub customers: usize,
}

/// Province rows by division columns; `None` marks groups without customers.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix<T> {
    pub provinces: Vec<String>,
    pub divisions: Vec<String>,
    cells: Vec<Option<MatrixCell<T>>>,
    /// Codes that could not be mapped, with the number of customers dropped.
    pub unmapped: Vec<(String, usize)>,
}

impl<T: Scalar> IndicatorMatrix<T> {
    pub fn cell(&self, province: &str, division: &str) -> Option<&MatrixCell<T>> {
        let r = self
            .provinces
            .binary_search_by(|p| p.as_str().cmp(province))
            .ok()?;
        let c = self
            .divisions
            .binary_search_by(|d| d.as_str().cmp(division))
            .ok()?;
        self.cells[r * self.divisions.len() + c].as_ref()
    }

    /// Long form `province,division,customers,E`; empty groups have a blank `E`.
    pub fn write_long<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(["province", "division", "customers", "E"])?;
        for (r, province) in self.provinces.iter().enumerate() {
            for (c, division) in self.divisions.iter().enumerate() {
                let (customers, e) = match &self.cells[r * self.divisions.len() + c] {
                    Some(cell) => (cell.customers, csvio::fmt(cell.indicator.value())),
                    None => (0, String::new()),
                };
                w.write_record([province.as_str(), division, &customers.to_string(), &e])?;
            }
        }
        Ok(())
    }
}

/// Pools every member distance of each province x division group and turns
/// the pooled median into an indicator.
pub fn aggregate_matrix<T, R>(
    table: &PairTable<T>,
    dataset: &CustomerDataset<T>,
    province_of: &CodeMap,
    division_of: &CodeMap,
    resolver: &R,
    d_star: Distance<T>,
) -> Result<IndicatorMatrix<T>>
where
    T: Scalar,
    R: TargetResolver<T> + ?Sized,
{
    if d_star.value() <= T::zero() {
        return Err(Error::DegenerateReference);
    }
    let distances = customer_distances(dataset, resolver)?;
    let mut pooled: BTreeMap<(String, String), Vec<T>> = BTreeMap::new();
    let mut unmapped: BTreeMap<String, usize> = BTreeMap::new();
    let mut provinces = province_of.groups();
    let mut divisions = division_of.groups();
    for pair in &table.pairs {
        let province = province_of.lookup(pair.key.location());
        let division = division_of.lookup(pair.key.nace());
        let (Some(province), Some(division)) = (province, division) else {
            let code = if province_of.lookup(pair.key.location()).is_none() {
                format!("location {}", pair.key.location())
            } else {
                format!("nace {}", pair.key.nace())
            };
            *unmapped.entry(code).or_default() += pair.len();
            continue;
        };
        provinces.insert(province.to_string());
        divisions.insert(division.to_string());
        let bucket = pooled
            .entry((province.into_owned(), division.into_owned()))
            .or_default();
        for &m in &pair.members {
            bucket.push(
                distances[m]
                    .ok_or_else(|| Error::UnknownCustomer(dataset.records()[m].id.clone()))?,
            );
        }
    }
    for (code, n) in &unmapped {
        log::warn!("{code} has no mapping; {n} customers left out of the matrix");
    }
    let provinces: Vec<String> = provinces.into_iter().collect();
    let divisions: Vec<String> = divisions.into_iter().collect();
    let mut cells = vec![None; provinces.len() * divisions.len()];
    for ((p, d), mut values) in pooled {
        let r = provinces.binary_search(&p).expect("province collected");
        let c = divisions.binary_search(&d).expect("division collected");
        let customers = values.len();
        let median = Distance::new(median_in_place(&mut values).expect("non-empty group"))?;
        cells[r * divisions.len() + c] = Some(MatrixCell {
            indicator: eid(enhancement_metric(median, d_star)?),
            customers,
        });
    }
    Ok(IndicatorMatrix {
        provinces,
        divisions,
        cells,
        unmapped: unmapped.into_iter().collect(),
    })
}

/// Non-empty cells of one province, best indicator first.
pub fn slice_row<T: Scalar>(
    matrix: &IndicatorMatrix<T>,
    province: &str,
) -> Result<Vec<(String, MatrixCell<T>)>> {
    let r = matrix
        .provinces
        .binary_search_by(|p| p.as_str().cmp(province))
        .map_err(|_| Error::UnknownProvince(province.to_string()))?;
    let width = matrix.divisions.len();
    let mut row: Vec<(String, MatrixCell<T>)> = matrix.cells[r * width..(r + 1) * width]
        .iter()
        .zip(&matrix.divisions)
        .filter_map(|(cell, d)| cell.map(|c| (d.clone(), c)))
        .collect();
    row.sort_by(|a, b| {
        b.1.indicator
            .value()
            .partial_cmp(&a.1.indicator.value())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(row)
}

fn pair_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "nace",
        "location",
        "n_k",
        "avg_contracted_kw",
        "avg_demand_kwh",
        "d_k",
        "e_k",
        "E_k",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(csvio::month_columns("p"));
    h
}

/// Pair-table CSV. KPI columns are blank for pairs without KPIs.
pub fn write_pair_table<T: Scalar, W: Write>(
    w: &mut csv::Writer<W>,
    table: &PairTable<T>,
) -> csv::Result<()> {
    w.write_record(pair_header())?;
    let mut row = Vec::with_capacity(8 + MONTHS);
    for p in &table.pairs {
        row.clear();
        row.push(p.key.nace.clone());
        row.push(p.key.location.clone());
        row.push(p.len().to_string());
        row.push(csvio::fmt(p.avg_contracted));
        row.push(csvio::fmt(p.avg_demand));
        match &p.kpis {
            Some(k) => {
                row.push(csvio::fmt(k.distance.value()));
                row.push(csvio::fmt(k.metric.value()));
                row.push(csvio::fmt(k.indicator.value()));
            }
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        row.extend(p.pair_profile.values().iter().map(|v| csvio::fmt(*v)));
        w.write_record(&row)?;
    }
    Ok(())
}

pub fn save_pair_table<T: Scalar>(path: &Path, table: &PairTable<T>) -> Result<()> {
    let mut w = csvio::writer_to_path(path)?;
    write_pair_table(&mut w, table).map_err(|e| Error::csv(path, e))?;
    csvio::finish(path, w)
}

/// One row of a pair-table CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSummary<T> {
    pub key: PairKey,
    pub n_k: usize,
    pub avg_contracted: T,
    pub avg_demand: T,
    pub kpis: Option<PairKpis<T>>,
    pub profile: [T; MONTHS],
}

pub fn load_pair_table<T: Scalar>(path: &Path) -> Result<Vec<PairSummary<T>>> {
    let mut rdr = csvio::reader_from_path(path)?;
    let header = pair_header();
    csvio::expect_header(path, &mut rdr, &header)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let line = csvio::line_of(&row);
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() != header.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                header.len(),
                row.len()
            )));
        }
        let n_k: usize = row[2]
            .parse()
            .map_err(|_| err(format!("n_k `{}` is not a count", &row[2])))?;
        let num = |i: usize| csvio::parse_scalar::<T>(&row[i], &header[i]).map_err(err);
        let kpis = if row[5].is_empty() && row[6].is_empty() && row[7].is_empty() {
            None
        } else {
            // E_k is derived from e_k so the pair invariant holds exactly
            num(7)?;
            let metric = EnhancementMetric::new(num(6)?);
            Some(PairKpis {
                distance: Distance::new(num(5)?)?,
                metric,
                indicator: eid(metric),
            })
        };
        let mut profile = [T::zero(); MONTHS];
        for (j, v) in profile.iter_mut().enumerate() {
            *v = num(8 + j)?;
        }
        out.push(PairSummary {
            key: PairKey::new(&row[0], &row[1]),
            n_k,
            avg_contracted: num(3)?,
            avg_demand: num(4)?,
            kpis,
            profile,
        });
    }
    Ok(out)
}

/// Rebuilds member lists from `dataset` and takes KPIs and average powers
/// from `summaries`. Every pair must agree on its member count.
pub fn join_pair_table<T: Scalar>(
    summaries: &[PairSummary<T>],
    dataset: &CustomerDataset<T>,
) -> Result<PairTable<T>> {
    let mut table = build_pairs(dataset);
    let by_key: HashMap<&PairKey, &PairSummary<T>> =
        summaries.iter().map(|s| (&s.key, s)).collect();
    if by_key.len() != table.len() {
        return Err(Error::Inconsistent(format!(
            "pair table lists {} pairs but the customers form {}",
            by_key.len(),
            table.len()
        )));
    }
    for pair in &mut table.pairs {
        let s = by_key.get(&pair.key).ok_or_else(|| {
            Error::Inconsistent(format!("pair {} missing from pair table", pair.key))
        })?;
        if s.n_k != pair.len() {
            return Err(Error::Inconsistent(format!(
                "pair {} has n_k = {} in the pair table but {} customers",
                pair.key,
                s.n_k,
                pair.len()
            )));
        }
        pair.avg_contracted = s.avg_contracted;
        pair.avg_demand = s.avg_demand;
        pair.kpis = s.kpis;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CustomerRecord;
    use crate::targets::flat_target;

    fn rec(id: &str, nace: &str, loc: &str, raw: [f64; 12]) -> CustomerRecord<f64> {
        CustomerRecord {
            id: id.into(),
            nace: nace.into(),
            location: loc.into(),
            contracted_power: 2.0,
            raw_demand: raw,
        }
    }

    /// Raw profile whose distance to the flat target is exactly `d`
    /// (alternating 1 +/- d).
    fn at_distance(d: f64) -> [f64; 12] {
        std::array::from_fn(|j| if j % 2 == 0 { 1.0 + d } else { 1.0 - d })
    }

    fn ds(records: Vec<CustomerRecord<f64>>) -> CustomerDataset<f64> {
        CustomerDataset::from_records(records).unwrap()
    }

    #[test]
    fn grouping() {
        let t = build_pairs(&ds(vec![
            rec("c", "A01", "L1", [1.0; 12]),
            rec("a", "A01", "L1", [2.0; 12]),
            rec("b", "A01", "L1", [3.0; 12]),
        ]));
        assert_eq!(t.len(), 1);
        assert_eq!(t.pairs()[0].member_ids, vec!["a", "b", "c"]);

        let t = build_pairs(&ds(vec![
            rec("a", "A01", "L1", [1.0; 12]),
            rec("b", "A01", "L2", [1.0; 12]),
        ]));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn pair_profile_of_identical_members() {
        let raw = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let dataset = ds(vec![rec("a", "A01", "L1", raw), rec("b", "A01", "L1", raw)]);
        let t = build_pairs(&dataset);
        let p = &t.pairs()[0];
        let single = dataset.get("a").unwrap().profile().unwrap();
        for (x, y) in p.pair_profile.values().iter().zip(single.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn ineligible_customers_skipped() {
        let t = build_pairs(&ds(vec![
            rec("a", "", "L1", [1.0; 12]),
            rec("b", "A01", "L1", [0.0; 12]),
        ]));
        assert!(t.is_empty());
    }

    #[test]
    fn kpis_perfect_pair() {
        let dataset = ds(vec![
            rec("a", "A01", "L1", [3.0; 12]),
            rec("b", "A02", "L1", at_distance(0.5)),
        ]);
        let mut t = build_pairs(&dataset);
        attach_kpis(
            &mut t,
            &dataset,
            &flat_target(),
            Distance::new(0.5).unwrap(),
        )
        .unwrap();
        let k = t.get(&PairKey::new("A01", "L1")).unwrap().kpis.unwrap();
        assert_eq!(k.distance.value(), 0.0);
        assert_eq!(k.metric.value(), 1.0);
        assert_eq!(k.indicator.value(), 1.0);
    }

    #[test]
    fn kpis_median_of_members() {
        let dataset = ds(vec![
            rec("a", "A01", "L1", at_distance(0.2)),
            rec("b", "A01", "L1", at_distance(0.8)),
            rec("c", "A01", "L1", at_distance(0.5)),
            rec("d", "A02", "L1", at_distance(0.5)),
        ]);
        let mut t = build_pairs(&dataset);
        attach_kpis(
            &mut t,
            &dataset,
            &flat_target(),
            Distance::new(0.5).unwrap(),
        )
        .unwrap();
        let k = t.get(&PairKey::new("A01", "L1")).unwrap().kpis.unwrap();
        assert!((k.distance.value() - 0.5).abs() < 1e-15);
        assert!(k.metric.value().abs() < 1e-14);
        assert!(k.indicator.value().abs() < 1e-14);
    }

    #[test]
    fn kpis_exp_branch() {
        let dataset = ds(vec![rec("a", "A01", "L1", at_distance(0.75))]);
        let mut t = build_pairs(&dataset);
        // d_k = 0.75 against d* = 0.25 gives e = -2
        attach_kpis(
            &mut t,
            &dataset,
            &flat_target(),
            Distance::new(0.25).unwrap(),
        )
        .unwrap();
        let k = t.pairs()[0].kpis.unwrap();
        assert!((k.metric.value() + 2.0).abs() < 1e-12);
        assert!((k.indicator.value() - ((-2.0f64).exp() - 1.0)).abs() < 1e-12);
        assert!((k.indicator.value() + 0.8647).abs() < 1e-4);
    }

    #[test]
    fn kpis_reject_zero_reference() {
        let dataset = ds(vec![rec("a", "A01", "L1", [1.0; 12])]);
        let mut t = build_pairs(&dataset);
        let err = attach_kpis(
            &mut t,
            &dataset,
            &flat_target(),
            Distance::new(0.0).unwrap(),
        );
        assert!(matches!(err, Err(Error::DegenerateReference)));
    }

    fn stats_of(sizes: &[usize]) -> IdentificationStats {
        let keys: Vec<PairKey> = (0..sizes.len())
            .map(|i| PairKey::new(format!("N{i}"), "L"))
            .collect();
        IdentificationStats::from_pairs(keys.iter().zip(sizes.iter().copied()))
    }

    #[test]
    fn identification_counts() {
        let s = stats_of(&[1, 1, 2]);
        assert_eq!(s.customers_in_sets_leq[&1], 2);
        assert_eq!(s.customers_in_sets_leq[&2], 4);
        assert_eq!(s.total_pair_space, 3);

        let s = stats_of(&[1, 1, 1, 1]);
        assert!(s.pair_ratio_leq.values().all(|r| *r == 1.0));

        // planted composition {1: 50, 2: 30, 11: 5}
        let mut sizes = vec![1; 50];
        sizes.extend(vec![2; 30]);
        sizes.extend(vec![11; 5]);
        let s = stats_of(&sizes);
        let oracle = |n: usize| sizes.iter().filter(|s| **s <= n).sum::<usize>();
        assert_eq!(s.customers_in_sets_leq[&10], 110);
        for (n, c) in &s.customers_in_sets_leq {
            assert_eq!(*c, oracle(*n));
        }
        assert_eq!(s.customers_in_sets_leq[&11], 165);
        assert_eq!(s.customers_leq(5), 110);
        let w: Vec<usize> = s.customers_in_sets_leq.values().copied().collect();
        assert!(w.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn code_map_defaults() {
        let p = CodeMap::default_province();
        assert_eq!(p.lookup("P36-0012").as_deref(), Some("P36"));
        assert_eq!(p.lookup("-x"), None);
        let d = CodeMap::default_division();
        assert_eq!(d.lookup("C1011").as_deref(), Some("C10"));
        assert_eq!(d.lookup("C1").as_deref(), Some("C1"));
        let e = CodeMap::Explicit([("L1".to_string(), "P".to_string())].into());
        assert_eq!(e.lookup("L1").as_deref(), Some("P"));
        assert_eq!(e.lookup("L2"), None);
    }

    fn matrix_of(dataset: &CustomerDataset<f64>, d_star: f64) -> IndicatorMatrix<f64> {
        let t = build_pairs(dataset);
        aggregate_matrix(
            &t,
            dataset,
            &CodeMap::default_province(),
            &CodeMap::default_division(),
            &flat_target(),
            Distance::new(d_star).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn matrix_cells() {
        let dataset = ds(vec![
            rec("a", "A011", "P1-1", [1.0; 12]),
            rec("b", "B021", "P2-1", at_distance(0.2)),
            rec("c", "B022", "P2-2", at_distance(0.6)),
        ]);
        let m = matrix_of(&dataset, 0.4);
        assert_eq!(m.cell("P1", "A01").unwrap().indicator.value(), 1.0);
        assert!(m.cell("P1", "B02").is_none());
        assert!(m.cell("P2", "A01").is_none());
        // two pairs pooled into one group: median of {0.2, 0.6} = 0.4 = d*
        let pooled = m.cell("P2", "B02").unwrap();
        assert_eq!(pooled.customers, 2);
        assert!(pooled.indicator.value().abs() < 1e-14);
    }

    #[test]
    fn matrix_pools_raw_distances_not_pair_medians() {
        // pair X: {0.1, 0.2, 0.3}; pair Y: {0.9}. Median of pair medians = 0.55,
        // pooled median of {0.1, 0.2, 0.3, 0.9} = 0.25.
        let dataset = ds(vec![
            rec("a", "A011", "P1-1", at_distance(0.1)),
            rec("b", "A011", "P1-1", at_distance(0.2)),
            rec("c", "A011", "P1-1", at_distance(0.3)),
            rec("d", "A012", "P1-1", at_distance(0.9)),
        ]);
        let m = matrix_of(&dataset, 0.5);
        let cell = m.cell("P1", "A01").unwrap();
        let expected = 1.0 - 0.25 / 0.5;
        assert!((cell.indicator.value() - expected).abs() < 1e-12);
        assert!((cell.indicator.value() - (1.0 - 0.55 / 0.5)).abs() > 0.1);
    }

    #[test]
    fn matrix_reports_unmapped() {
        let dataset = ds(vec![
            rec("a", "A011", "P1-1", [1.0; 12]),
            rec("b", "A011", "P9-1", [1.0; 12]),
        ]);
        let t = build_pairs(&dataset);
        let provinces = CodeMap::Explicit([("P1-1".to_string(), "P1".to_string())].into());
        let m = aggregate_matrix(
            &t,
            &dataset,
            &provinces,
            &CodeMap::default_division(),
            &flat_target(),
            Distance::new(0.3).unwrap(),
        )
        .unwrap();
        assert_eq!(m.provinces, vec!["P1"]);
        assert_eq!(m.unmapped, vec![("location P9-1".to_string(), 1)]);
    }

    #[test]
    fn row_slices() {
        let dataset = ds(vec![
            rec("a", "A011", "P1-1", at_distance(0.28)),
            rec("b", "B011", "P1-1", at_distance(0.12)),
        ]);
        let m = matrix_of(&dataset, 0.4);
        let row = slice_row(&m, "P1").unwrap();
        let divisions: Vec<&str> = row.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(divisions, vec!["B01", "A01"]);
        assert!((row[0].1.indicator.value() - 0.7).abs() < 1e-12);
        assert!((row[1].1.indicator.value() - 0.3).abs() < 1e-12);
        assert!(matches!(
            slice_row(&m, "P7"),
            Err(Error::UnknownProvince(_))
        ));

        let single = matrix_of(&ds(vec![rec("a", "A011", "P1-1", [1.0; 12])]), 0.4);
        assert_eq!(slice_row(&single, "P1").unwrap().len(), 1);
    }

    #[test]
    fn pair_table_csv_round_trip_and_join() {
        let dataset = ds(vec![
            rec("a", "A01", "L1", at_distance(0.2)),
            rec("b", "A01", "L1", at_distance(0.4)),
            rec("c", "A02", "L2", [1.0; 12]),
        ]);
        let mut t = build_pairs(&dataset);
        attach_kpis(
            &mut t,
            &dataset,
            &flat_target(),
            Distance::new(0.3).unwrap(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        save_pair_table(&path, &t).unwrap();
        let rows = load_pair_table::<f64>(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].n_k, 2);
        let joined = join_pair_table(&rows, &dataset).unwrap();
        for (a, b) in joined.pairs().iter().zip(t.pairs()) {
            assert_eq!(a.kpis, b.kpis);
            assert_eq!(a.member_ids, b.member_ids);
        }
        let fewer = ds(vec![
            rec("a", "A01", "L1", [1.0; 12]),
            rec("c", "A02", "L2", [1.0; 12]),
        ]);
        assert!(matches!(
            join_pair_table(&rows, &fewer),
            Err(Error::Inconsistent(_))
        ));
    }
}
