//! Pairwise win counts from a complete indicator table.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data_ingest::IndicatorTable;
use crate::error::{invalid, Error, Result};

/// How an exact tie on an indicator is counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Half a win to each side; the comparison still counts.
    #[default]
    Split,
    /// The comparison is not counted at all.
    Drop,
}

impl std::str::FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "split" => Ok(TiePolicy::Split),
            "drop" => Ok(TiePolicy::Drop),
            other => Err(format!("tie policy must be `split` or `drop`, got `{other}`")),
        }
    }
}

/// `wins[(i, j)]` is how often entity `i` beat entity `j`;
/// `comparisons[(i, j)]` how many comparisons the pair had.
#[derive(Debug, Clone, PartialEq)]
pub struct WinMatrix {
    pub entities: Vec<String>,
    pub wins: DMatrix<f64>,
    pub comparisons: DMatrix<u64>,
}

impl WinMatrix {
    /// Builds a win matrix from explicit counts, deriving per-pair
    /// comparison totals as `wins[i][j] + wins[j][i]`.
    pub fn from_wins(entities: Vec<String>, wins: DMatrix<f64>) -> Result<Self> {
        let m = entities.len();
        if wins.shape() != (m, m) {
            return Err(invalid!("win matrix is {:?}, expected {m} x {m}", wins.shape()));
        }
        let mut comparisons = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                let total = wins[(i, j)] + wins[(j, i)];
                if total.fract() != 0.0 {
                    return Err(invalid!(
                        "pair ({i}, {j}) has a non-integer comparison total {total}"
                    ));
                }
                comparisons[(i, j)] = total as u64;
            }
        }
        let w = WinMatrix {
            entities,
            wins,
            comparisons,
        };
        w.validate()?;
        Ok(w)
    }

    /// A win matrix with no comparisons at all.
    pub fn empty(entities: Vec<String>) -> Self {
        let m = entities.len();
        WinMatrix {
            entities,
            wins: DMatrix::zeros(m, m),
            comparisons: DMatrix::zeros(m, m),
        }
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.entities.len();
        if self.wins.shape() != (m, m) || self.comparisons.shape() != (m, m) {
            return Err(invalid!("win matrix shape does not match {m} entities"));
        }
        for i in 0..m {
            if self.wins[(i, i)] != 0.0 || self.comparisons[(i, i)] != 0 {
                return Err(invalid!("entity `{}` is compared with itself", self.entities[i]));
            }
            for j in 0..m {
                if i == j {
                    continue;
                }
                let (x, k) = (self.wins[(i, j)], self.comparisons[(i, j)]);
                if !(x >= 0.0 && x <= k as f64) {
                    return Err(invalid!("wins[{i}][{j}] = {x} outside [0, {k}]"));
                }
                if self.comparisons[(j, i)] != k || x + self.wins[(j, i)] != k as f64 {
                    return Err(invalid!("pair ({i}, {j}) is not symmetric"));
                }
            }
        }
        Ok(())
    }

    /// Writes `entity_i,entity_j,wins,comparisons` for every ordered pair.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        out.write_record(["entity_i", "entity_j", "wins", "comparisons"])
            .map_err(io)?;
        let m = self.n_entities();
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    out.write_record([
                        self.entities[i].as_str(),
                        self.entities[j].as_str(),
                        &self.wins[(i, j)].to_string(),
                        &self.comparisons[(i, j)].to_string(),
                    ])
                    .map_err(io)?;
                }
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Counts, for every indicator and pair, which entity has the better
/// polarity-adjusted value.
pub fn build_win_matrix(table: &IndicatorTable, tie_policy: TiePolicy) -> Result<WinMatrix> {
    table.validate()?;
    if table.has_missing() {
        return Err(invalid!(
            "indicator table has missing cells; apply a missing-data policy first"
        ));
    }
    let m = table.n_entities();
    let mut wins = DMatrix::<f64>::zeros(m, m);
    let mut comparisons = DMatrix::<u64>::zeros(m, m);
    for (k, polarity) in table.polarity.iter().enumerate() {
        let sign = polarity.sign();
        for i in 0..m {
            let a = sign * table.values[(i, k)];
            for j in (i + 1)..m {
                let b = sign * table.values[(j, k)];
                if a > b {
                    wins[(i, j)] += 1.0;
                } else if b > a {
                    wins[(j, i)] += 1.0;
                } else {
                    match tie_policy {
                        TiePolicy::Split => {
                            wins[(i, j)] += 0.5;
                            wins[(j, i)] += 0.5;
                        }
                        TiePolicy::Drop => continue,
                    }
                }
                comparisons[(i, j)] += 1;
                comparisons[(j, i)] += 1;
            }
        }
    }
    Ok(WinMatrix {
        entities: table.entities.clone(),
        wins,
        comparisons,
    })
}

/// Number of comparisons over unordered pairs.
pub fn total_comparisons(w: &WinMatrix) -> u64 {
    let m = w.n_entities();
    (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .map(|(i, j)| w.comparisons[(i, j)])
        .sum()
}
