//! Rankings with uncertainty from posterior draws.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bt_model::MeritVector;
use crate::diagnostics::{discordant_pairs, kendall_tau_distance, rank_descending, write_lines};
use crate::error::{invalid, Error, Result};
use crate::mcmc::ChainSamples;

/// Fewest kept draws `summarize` accepts.
pub const MIN_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub entities: Vec<String>,
    pub level: f64,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// 1 is the highest posterior mean.
    pub rank: Vec<usize>,
    /// `outrank[i][j]` estimates `P(mu_i > mu_j)`; ties count one half.
    pub outrank: Vec<Vec<f64>>,
    pub mle_rank: Option<Vec<usize>>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior summaries and pairwise outrank probabilities at credible
/// level `level`.
pub fn summarize(samples: &ChainSamples, level: f64) -> Result<RankingReport> {
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid!("credible level must lie in (0, 1), got {level}"));
    }
    let n = samples.n_kept();
    if n < MIN_DRAWS {
        return Err(invalid!("need at least {MIN_DRAWS} kept draws to summarise, have {n}"));
    }
    let m = samples.n_entities();
    let draws = &samples.mu_draws;
    let tail = (1.0 - level) / 2.0;
    let mut mean = Vec::with_capacity(m);
    let mut sd = Vec::with_capacity(m);
    let mut ci_low = Vec::with_capacity(m);
    let mut ci_high = Vec::with_capacity(m);
    for j in 0..m {
        let mut col: Vec<f64> = draws.column(j).iter().copied().collect();
        let mu = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        col.sort_by(f64::total_cmp);
        mean.push(mu);
        sd.push(var.sqrt());
        ci_low.push(quantile(&col, tail));
        ci_high.push(quantile(&col, 1.0 - tail));
    }

    let mut outrank = vec![vec![0.5; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let mut score = 0.0;
            for t in 0..n {
                let (a, b) = (draws[(t, i)], draws[(t, j)]);
                if a > b {
                    score += 1.0;
                } else if a == b {
                    score += 0.5;
                }
            }
            outrank[i][j] = score / n as f64;
            outrank[j][i] = 1.0 - outrank[i][j];
        }
    }

    Ok(RankingReport {
        rank: rank_descending(&mean, &samples.entities),
        entities: samples.entities.clone(),
        level,
        mean,
        sd,
        ci_low,
        ci_high,
        outrank,
        mle_rank: None,
    })
}

impl RankingReport {
    /// Attaches the ranking implied by point estimates in the same entity
    /// order.
    pub fn with_mle(mut self, mle: &MeritVector) -> Result<Self> {
        if mle.len() != self.entities.len() {
            return Err(invalid!(
                "MLE has {} merits for {} entities",
                mle.len(),
                self.entities.len()
            ));
        }
        self.mle_rank = Some(rank_descending(mle.as_slice(), &self.entities));
        Ok(self)
    }

    pub fn ranking(&self) -> NamedRanking {
        NamedRanking {
            entities: self.entities.clone(),
            rank: self.rank.clone(),
        }
    }

    pub fn mle_ranking(&self) -> Option<NamedRanking> {
        self.mle_rank.as_ref().map(|r| NamedRanking {
            entities: self.entities.clone(),
            rank: r.clone(),
        })
    }

    /// Entities from best to worst.
    pub fn ordered(&self) -> Vec<&str> {
        ordered(&self.entities, &self.rank)
    }
}

fn ordered<'a>(entities: &'a [String], rank: &[usize]) -> Vec<&'a str> {
    let mut idx: Vec<usize> = (0..rank.len()).collect();
    idx.sort_by_key(|&i| rank[i]);
    idx.into_iter().map(|i| entities[i].as_str()).collect()
}

/// A rank vector keyed by entity name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedRanking {
    pub entities: Vec<String>,
    pub rank: Vec<usize>,
}

impl NamedRanking {
    pub fn from_merits(entities: &[String], merits: &[f64]) -> Self {
        NamedRanking {
            entities: entities.to_vec(),
            rank: rank_descending(merits, entities),
        }
    }

    pub fn ordered(&self) -> Vec<&str> {
        ordered(&self.entities, &self.rank)
    }

    /// Relative ranking among `keep` only, preserving this ranking's order.
    pub fn restricted(&self, keep: &[String]) -> Result<NamedRanking> {
        let mut chosen: Vec<usize> = keep
            .iter()
            .map(|k| {
                self.entities
                    .iter()
                    .position(|e| e == k)
                    .ok_or_else(|| invalid!("entity `{k}` is not in the ranking"))
            })
            .collect::<Result<_>>()?;
        chosen.sort_by_key(|&i| self.rank[i]);
        let mut rank = vec![0; keep.len()];
        for (pos, &i) in chosen.iter().enumerate() {
            let slot = keep.iter().position(|k| k == &self.entities[i]).unwrap();
            rank[slot] = pos + 1;
        }
        Ok(NamedRanking {
            entities: keep.to_vec(),
            rank,
        })
    }
}

/// Kendall distance and the discordant entity pairs between two rankings of
/// the same entity set. Pairs are reported in `a`'s entity order.
pub fn compare_rankings(a: &NamedRanking, b: &NamedRanking) -> Result<(u64, Vec<(String, String)>)> {
    if a.entities.len() != b.entities.len() {
        return Err(invalid!(
            "rankings cover {} and {} entities",
            a.entities.len(),
            b.entities.len()
        ));
    }
    let b_aligned: Vec<usize> = a
        .entities
        .iter()
        .map(|e| {
            b.entities
                .iter()
                .position(|x| x == e)
                .map(|p| b.rank[p])
                .ok_or_else(|| invalid!("entity `{e}` is missing from the second ranking"))
        })
        .collect::<Result<_>>()?;
    let distance = kendall_tau_distance(&a.rank, &b_aligned)?;
    let swaps = discordant_pairs(&a.rank, &b_aligned)?
        .into_iter()
        .map(|(i, j)| (a.entities[i].clone(), a.entities[j].clone()))
        .collect();
    Ok((distance, swaps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn export_report(report: &RankingReport, format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(report).expect("report serialises");
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            let rows = (0..report.entities.len()).map(|i| {
                let mle = report
                    .mle_rank
                    .as_ref()
                    .map(|r| r[i].to_string())
                    .unwrap_or_default();
                format!(
                    "{},{},{},{},{},{},{}",
                    csv_field(&report.entities[i]),
                    fmt_f64(report.mean[i]),
                    fmt_f64(report.sd[i]),
                    fmt_f64(report.ci_low[i]),
                    fmt_f64(report.ci_high[i]),
                    report.rank[i],
                    mle
                )
            });
            write_lines(path, "entity,mean,sd,ci_low,ci_high,rank,mle_rank", rows)
        }
    }
}

/// Writes `entity,merit,rank` for point estimates.
pub fn write_mle_ranking(entities: &[String], merits: &MeritVector, path: &Path) -> Result<()> {
    let rank = rank_descending(merits.as_slice(), entities);
    let rows = entities
        .iter()
        .zip(merits.as_slice())
        .zip(&rank)
        .map(|((e, m), r)| format!("{},{},{r}", csv_field(e), fmt_f64(*m)));
    write_lines(path, "entity,merit,rank", rows)
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
