//! Reading indicator, polarity and income tables.
//!
//! All inputs are CSV. Indicator files carry one row per entity and one
//! column per indicator; empty or non-numeric cells are recorded as missing
//! rather than rejected, and a later [`apply_missing_policy`] call decides
//! what to drop. Every indicator needs an explicit polarity: there is no
//! default direction.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Direction of an indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    HigherIsBetter,
    LowerIsBetter,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::HigherIsBetter => 1.0,
            Polarity::LowerIsBetter => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::HigherIsBetter => Polarity::LowerIsBetter,
            Polarity::LowerIsBetter => Polarity::HigherIsBetter,
        }
    }
}

impl FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "1" | "+1" | "1.0" | "+1.0" => Ok(Polarity::HigherIsBetter),
            "-1" | "-1.0" => Ok(Polarity::LowerIsBetter),
            other => Err(format!("polarity must be +1 or -1, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorTable {
    pub entities: Vec<String>,
    pub indicators: Vec<String>,
    /// entities x indicators; entries under a set `missing` flag are NaN.
    pub values: DMatrix<f64>,
    pub polarity: Vec<Polarity>,
    pub missing: DMatrix<bool>,
}

impl IndicatorTable {
    /// Builds a table from in-memory parts, checking the structural
    /// invariants. `None` cells are missing.
    pub fn new(
        entities: Vec<String>,
        indicators: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
        polarity: Vec<Polarity>,
    ) -> Result<Self> {
        let m = entities.len();
        let k = indicators.len();
        if rows.len() != m {
            return Err(invalid!("{} value rows for {} entities", rows.len(), m));
        }
        if polarity.len() != k {
            return Err(invalid!("{} polarities for {} indicators", polarity.len(), k));
        }
        let mut values = DMatrix::from_element(m, k, f64::NAN);
        let mut missing = DMatrix::from_element(m, k, true);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(invalid!(
                    "row for `{}` has {} cells, expected {}",
                    entities[i],
                    row.len(),
                    k
                ));
            }
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell.filter(|v| v.is_finite()) {
                    values[(i, j)] = v;
                    missing[(i, j)] = false;
                }
            }
        }
        let table = IndicatorTable {
            entities,
            indicators,
            values,
            polarity,
            missing,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_indicators(&self) -> usize {
        self.indicators.len()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, k) = (self.entities.len(), self.indicators.len());
        if m < 2 {
            return Err(invalid!("need at least 2 entities, have {m}"));
        }
        if k < 1 {
            return Err(invalid!("need at least 1 indicator"));
        }
        check_unique("entity", &self.entities)?;
        check_unique("indicator", &self.indicators)?;
        if self.polarity.len() != k {
            return Err(invalid!("{} polarities for {} indicators", self.polarity.len(), k));
        }
        if self.values.shape() != (m, k) || self.missing.shape() != (m, k) {
            return Err(invalid!("value matrix shape does not match {m} x {k}"));
        }
        Ok(())
    }

    /// Keeps the given rows and columns (in the given order).
    fn select(&self, rows: &[usize], cols: &[usize]) -> IndicatorTable {
        IndicatorTable {
            entities: rows.iter().map(|&i| self.entities[i].clone()).collect(),
            indicators: cols.iter().map(|&j| self.indicators[j].clone()).collect(),
            values: DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
                self.values[(rows[r], cols[c])]
            }),
            polarity: cols.iter().map(|&j| self.polarity[j]).collect(),
            missing: DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
                self.missing[(rows[r], cols[c])]
            }),
        }
    }

    fn entity_index(&self) -> HashMap<&str, usize> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i))
            .collect()
    }
}

fn check_unique(what: &str, names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for name in names {
        if !seen.insert(name.as_str()) {
            return Err(invalid!("duplicate {what} name `{name}`"));
        }
    }
    Ok(())
}

/// Income zone of an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Low,
    Middle,
    High,
}

impl FromStr for Zone {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Zone::Low),
            "middle" | "mid" => Ok(Zone::Middle),
            "high" => Ok(Zone::High),
            other => Err(format!("unknown income zone `{other}`")),
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Zone::Low => "low",
            Zone::Middle => "middle",
            Zone::High => "high",
        })
    }
}

/// Two cut points on income used when the income file gives no zone.
/// Incomes below `low_max` are low, at or above `high_min` high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds {
    pub low_max: f64,
    pub high_min: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        ZoneThresholds {
            low_max: 100_000.0,
            high_min: 250_000.0,
        }
    }
}

impl ZoneThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_max > 0.0 && self.low_max <= self.high_min) {
            return Err(invalid!(
                "zone thresholds need 0 < low_max <= high_min, got {} and {}",
                self.low_max,
                self.high_min
            ));
        }
        Ok(())
    }

    pub fn zone_of(&self, income: f64) -> Zone {
        if income < self.low_max {
            Zone::Low
        } else if income >= self.high_min {
            Zone::High
        } else {
            Zone::Middle
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncomeTable {
    pub entities: Vec<String>,
    pub income: Vec<f64>,
    pub zone: Vec<Zone>,
}

impl IncomeTable {
    pub fn new(entities: Vec<String>, income: Vec<f64>, zone: Vec<Zone>) -> Result<Self> {
        if entities.len() != income.len() || entities.len() != zone.len() {
            return Err(invalid!("income table columns have different lengths"));
        }
        check_unique("entity", &entities)?;
        for (e, &p) in entities.iter().zip(&income) {
            if !(p.is_finite() && p > 0.0) {
                return Err(invalid!("income for `{e}` must be positive, got {p}"));
            }
        }
        Ok(IncomeTable {
            entities,
            income,
            zone,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// The rows for `entities`, in that order.
    pub fn restrict_to(&self, entities: &[String]) -> Result<IncomeTable> {
        let rows = entities
            .iter()
            .map(|e| {
                self.entities
                    .iter()
                    .position(|x| x == e)
                    .ok_or_else(|| invalid!("entity `{e}` has no income entry"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select(&rows))
    }

    fn select(&self, rows: &[usize]) -> IncomeTable {
        IncomeTable {
            entities: rows.iter().map(|&i| self.entities[i].clone()).collect(),
            income: rows.iter().map(|&i| self.income[i]).collect(),
            zone: rows.iter().map(|&i| self.zone[i]).collect(),
        }
    }
}

/// Parses a number written in plain decimal, allowing thousands separators
/// (`1,27,550` and `127,550` both read as the same value).
pub fn parse_number(cell: &str) -> Option<f64> {
    let cleaned: String = cell
        .trim()
        .chars()
        .filter(|c| !matches!(c, ',' | '_' | ' '))
        .collect();
    if cleaned.is_empty() {
        return None;
    }
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// Reads `indicator,polarity` rows.
pub fn load_polarity(path: &Path) -> Result<HashMap<String, Polarity>> {
    let mut reader = csv_reader(path)?;
    let mut out = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() < 2 {
            return Err(Error::parse(path, format!("row {} needs indicator,polarity", line + 2)));
        }
        let name = record[0].to_string();
        let polarity = record[1]
            .parse::<Polarity>()
            .map_err(|e| Error::parse(path, format!("indicator `{name}`: {e}")))?;
        if out.insert(name.clone(), polarity).is_some() {
            return Err(Error::parse(path, format!("indicator `{name}` listed twice")));
        }
    }
    Ok(out)
}

/// Reads an indicator sheet and its polarity file.
pub fn load_indicators(path: &Path, polarity_path: &Path) -> Result<IndicatorTable> {
    let polarity_map = load_polarity(polarity_path)?;
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::parse(path, "header needs an entity column and at least one indicator"));
    }
    let indicators: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    check_unique("indicator", &indicators)?;
    let polarity = indicators
        .iter()
        .map(|name| {
            polarity_map
                .get(name)
                .copied()
                .ok_or_else(|| Error::MissingPolarity(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entities = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        entities.push(record[0].to_string());
        rows.push(record.iter().skip(1).map(parse_number).collect());
    }
    IndicatorTable::new(entities, indicators, rows, polarity)
}

/// Reads `entity,income[,zone]` rows. Rows without a zone get one from
/// `thresholds`.
pub fn load_income(path: &Path, thresholds: &ZoneThresholds) -> Result<IncomeTable> {
    thresholds.validate()?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut entities = Vec::new();
    let mut income = Vec::new();
    let mut zone = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = line + 2;
        if record.len() < 2 {
            return Err(Error::parse(path, format!("row {row} needs entity,income")));
        }
        let name = record[0].to_string();
        let p = parse_number(&record[1])
            .ok_or_else(|| Error::parse(path, format!("row {row}: income `{}` is not a number", &record[1])))?;
        if p <= 0.0 {
            return Err(invalid!("income for `{name}` must be positive, got {p}"));
        }
        let z = match record.get(2).filter(|s| !s.is_empty()) {
            Some(label) => label
                .parse::<Zone>()
                .map_err(|e| Error::parse(path, format!("row {row}: {e}")))?,
            None => thresholds.zone_of(p),
        };
        entities.push(name);
        income.push(p);
        zone.push(z);
    }
    IncomeTable::new(entities, income, zone)
}

/// Restricts both tables to the entities present in the income file, in
/// indicator-file order. Returns the aligned tables and the indicator rows
/// that were dropped for lack of income data.
pub fn align(
    ind: &IndicatorTable,
    inc: &IncomeTable,
) -> Result<(IndicatorTable, IncomeTable, Vec<String>)> {
    let ind_index = ind.entity_index();
    if let Some(stray) = inc.entities.iter().find(|e| !ind_index.contains_key(e.as_str())) {
        return Err(invalid!(
            "entity `{stray}` in the income file is absent from the indicator table"
        ));
    }
    let inc_index: HashMap<&str, usize> = inc
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.as_str(), i))
        .collect();
    let mut keep = Vec::new();
    let mut inc_rows = Vec::new();
    let mut dropped = Vec::new();
    for (i, name) in ind.entities.iter().enumerate() {
        match inc_index.get(name.as_str()) {
            Some(&r) => {
                keep.push(i);
                inc_rows.push(r);
            }
            None => dropped.push(name.clone()),
        }
    }
    let all_cols: Vec<usize> = (0..ind.n_indicators()).collect();
    let aligned = ind.select(&keep, &all_cols);
    aligned.validate()?;
    Ok((aligned, inc.select(&inc_rows), dropped))
}

/// What to do about missing indicator cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Drop every indicator with any missing cell.
    DropIndicators,
    /// Drop the named entities, then any indicator still incomplete.
    DropEntities(Vec<String>),
}

pub fn apply_missing_policy(table: &IndicatorTable, policy: &MissingPolicy) -> Result<IndicatorTable> {
    let rows: Vec<usize> = match policy {
        MissingPolicy::DropIndicators => (0..table.n_entities()).collect(),
        MissingPolicy::DropEntities(names) => {
            let index = table.entity_index();
            let mut drop = HashSet::new();
            for name in names {
                let i = index
                    .get(name.as_str())
                    .ok_or_else(|| invalid!("cannot drop unknown entity `{name}`"))?;
                drop.insert(*i);
            }
            (0..table.n_entities()).filter(|i| !drop.contains(i)).collect()
        }
    };
    let cols: Vec<usize> = (0..table.n_indicators())
        .filter(|&j| rows.iter().all(|&i| !table.missing[(i, j)]))
        .collect();
    if rows.len() < 2 {
        return Err(invalid!("missing-data policy leaves {} entities (need 2)", rows.len()));
    }
    if cols.is_empty() {
        return Err(invalid!("missing-data policy leaves no complete indicator"));
    }
    Ok(table.select(&rows, &cols))
}

/// Restricts aligned tables to entities whose zone is in `zones`, keeping
/// their relative order.
pub fn subset_by_zone(
    ind: &IndicatorTable,
    inc: &IncomeTable,
    zones: &BTreeSet<Zone>,
) -> Result<(IndicatorTable, IncomeTable)> {
    if zones.is_empty() {
        return Err(invalid!("zone filter is empty"));
    }
    if ind.entities != inc.entities {
        return Err(invalid!("indicator and income tables are not aligned"));
    }
    let rows: Vec<usize> = (0..inc.len()).filter(|&i| zones.contains(&inc.zone[i])).collect();
    if rows.len() < 2 {
        return Err(invalid!(
            "{} entities fall in the selected zones (need at least 2)",
            rows.len()
        ));
    }
    let cols: Vec<usize> = (0..ind.n_indicators()).collect();
    Ok((ind.select(&rows, &cols), inc.select(&rows)))
}
