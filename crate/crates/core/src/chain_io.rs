//! Plain-text chain dumps.
//!
//! The first line is `# ` followed by a JSON metadata object; the rest is a
//! CSV table `iteration,alpha2,loglik,quad_form,<entity...>` with one row
//! per kept draw. Floats use the shortest representation that parses back
//! to the same value, so a dump reloads bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{ChainSamples, SamplerConfig};

const FIXED_COLUMNS: [&str; 4] = ["iteration", "alpha2", "loglik", "quad_form"];

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    entities: Vec<String>,
    config: SamplerConfig,
    n_kept: usize,
    accepted: usize,
    proposed: usize,
    jitter_applied: bool,
    /// `1` accepted, `0` rejected, one character per post-burn-in iteration.
    accept_flags: String,
}

pub fn write_chain(samples: &ChainSamples, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let meta = Metadata {
        entities: samples.entities.clone(),
        config: samples.config.clone(),
        n_kept: samples.n_kept(),
        accepted: samples.accepted,
        proposed: samples.proposed,
        jitter_applied: samples.jitter_applied,
        accept_flags: samples.accept_flags.iter().map(|&a| if a { '1' } else { '0' }).collect(),
    };
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# {}", serde_json::to_string(&meta).expect("metadata serialises")).map_err(io)?;
    let header: Vec<String> = FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(samples.entities.iter().map(|e| crate::report::csv_field(e)))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for (k, iteration) in samples.iterations().into_iter().enumerate() {
        line.clear();
        write!(
            line,
            "{iteration},{},{},{}",
            samples.alpha2_draws[k], samples.loglik_draws[k], samples.quad_draws[k]
        )
        .unwrap();
        for v in samples.mu_draws.row(k).iter() {
            write!(line, ",{v}").unwrap();
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_chain(path: &Path) -> Result<ChainSamples> {
    let bad = |msg: String| Error::parse(path, msg);
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = |what: &str| -> Result<String> {
        match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e)),
            None => Err(bad(format!("file ends before the {what}"))),
        }
    };

    let first = next("metadata line")?;
    let json = first
        .strip_prefix("# ")
        .ok_or_else(|| bad("first line is not a `# {...}` metadata line".into()))?;
    let meta: Metadata = serde_json::from_str(json).map_err(|e| bad(format!("metadata: {e}")))?;
    let m = meta.entities.len();

    let header_line = next("header")?;
    let header = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(header_line.as_bytes())
        .into_records()
        .next()
        .and_then(|r| r.ok())
        .ok_or_else(|| bad("unreadable header".into()))?;
    let expected: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(meta.entities.iter().map(String::as_str)).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(bad("header does not match the metadata entities".into()));
    }

    let n = meta.n_kept;
    let mut mu = Vec::with_capacity(n * m);
    let mut alpha2 = Vec::with_capacity(n);
    let mut loglik = Vec::with_capacity(n);
    let mut quad = Vec::with_capacity(n);
    for k in 0..n {
        let row = next(&format!("draw {} of {n}", k + 1))?;
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != m + 4 {
            return Err(bad(format!("draw {} has {} fields, expected {}", k + 1, fields.len(), m + 4)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| bad(format!("draw {}: `{s}` is not a number", k + 1)))
        };
        let iteration: usize = fields[0]
            .parse()
            .map_err(|_| bad(format!("draw {}: bad iteration `{}`", k + 1, fields[0])))?;
        if iteration != meta.config.kept_iteration(k) {
            return Err(bad(format!("draw {} has iteration {iteration}", k + 1)));
        }
        alpha2.push(num(fields[1])?);
        loglik.push(num(fields[2])?);
        quad.push(num(fields[3])?);
        for f in &fields[4..] {
            mu.push(num(f)?);
        }
    }
    if let Some(extra) = lines.next() {
        if !extra.map_err(|e| Error::io(path, e))?.trim().is_empty() {
            return Err(bad(format!("more than {n} draws")));
        }
    }

    let accept_flags: Vec<bool> = meta
        .accept_flags
        .chars()
        .map(|c| match c {
            '1' => Ok(true),
            '0' => Ok(false),
            _ => Err(bad(format!("bad acceptance flag `{c}`"))),
        })
        .collect::<Result<_>>()?;
    if accept_flags.len() != meta.proposed || accept_flags.iter().filter(|&&a| a).count() != meta.accepted {
        return Err(bad("acceptance flags disagree with the recorded counts".into()));
    }
    if meta.config.n_kept() != n {
        return Err(bad("kept-draw count disagrees with the sampler config".into()));
    }

    Ok(ChainSamples {
        entities: meta.entities,
        mu_draws: DMatrix::from_row_slice(n, m, &mu),
        alpha2_draws: alpha2,
        loglik_draws: loglik,
        quad_draws: quad,
        accept_flags,
        accepted: meta.accepted,
        proposed: meta.proposed,
        config: meta.config,
        jitter_applied: meta.jitter_applied,
    })
}
