use std::path::{Path, PathBuf};

use bayesbt::bt_model::{mle_newman, NewmanOptions};
use bayesbt::chain_io::{read_chain, write_chain};
use bayesbt::data_ingest::{align, apply_missing_policy, load_income, load_indicators, subset_by_zone};
use bayesbt::diagnostics::{all_trace_params, diagnose, trace_export, DiagnosticsOptions, DiagnosticsReport, TraceParam};
use bayesbt::mcmc::{run_chains, ChainSamples, SamplerConfig};
use bayesbt::prior_cov::{constrain, kernel_matrix, log_income_distance};
use bayesbt::report::{export_report, summarize, write_mle_ranking, ReportFormat};
use bayesbt::sim::{run_recovery_study, SimStudySpec};
use bayesbt::win_matrix::{build_win_matrix, total_comparisons, WinMatrix};
use bayesbt::{Error, Result};

use crate::config::RunConfig;

/// Acceptance rates outside this band trigger a warning.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.15, 0.45);

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

struct Prepared {
    w: WinMatrix,
    income: bayesbt::data_ingest::IncomeTable,
    n_indicators: usize,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let ind_path = cfg.require(&cfg.indicators, "indicators")?;
    let pol_path = cfg.require(&cfg.polarity, "polarity")?;
    let inc_path = cfg.require(&cfg.income, "income")?;
    let ind = load_indicators(&ind_path, &pol_path)?;
    let inc = load_income(&inc_path, &cfg.thresholds())?;
    let (ind, inc, dropped) = align(&ind, &inc)?;
    if !dropped.is_empty() {
        eprintln!("note: no income data for {}; left out", dropped.join(", "));
    }
    let ind = apply_missing_policy(&ind, &cfg.missing())?;
    let inc = inc.restrict_to(&ind.entities)?;
    let (ind, inc) = match cfg.zone_set()? {
        Some(zones) => subset_by_zone(&ind, &inc, &zones)?,
        None => (ind, inc),
    };
    let w = build_win_matrix(&ind, cfg.tie_policy)?;
    Ok(Prepared {
        n_indicators: ind.n_indicators(),
        w,
        income: inc,
    })
}

fn suffix(name: &str, chain: Option<usize>) -> String {
    match chain {
        None => name.to_string(),
        Some(c) => {
            let (stem, ext) = name.rsplit_once('.').unwrap();
            format!("{stem}_{c}.{ext}")
        }
    }
}

fn trace_params(cfg_traces: &[String], entities: &[String]) -> Result<Vec<TraceParam>> {
    let mut out = Vec::new();
    for t in cfg_traces {
        if t == "all" {
            out.extend(all_trace_params(entities.len()));
        } else {
            out.extend(TraceParam::parse(t, entities)?);
        }
    }
    Ok(out)
}

/// Diagnostics plus trace tables for one chain.
pub fn write_diagnostics(
    samples: &ChainSamples,
    opts: &DiagnosticsOptions,
    traces: &[String],
    trace_stride: usize,
    out: &Path,
    chain: Option<usize>,
) -> Result<DiagnosticsReport> {
    let report = diagnose(samples, opts)?;
    report.write_json(&out.join(suffix("diagnostics.json", chain)))?;
    report.write_kendall_csv(&out.join(suffix("kendall.csv", chain)))?;
    let params = trace_params(traces, &samples.entities)?;
    let mut ex = trace_export(samples, &params, report.bandwidth);
    if trace_stride > 1 {
        let first = samples.config.kept_iteration(0);
        let step = samples.config.thin * trace_stride;
        ex.traces.retain(|r| (r.iteration - first) % step == 0);
    }
    ex.write_csv(&out.join(suffix("traces.csv", chain)), &out.join(suffix("acf.csv", chain)))?;
    if report.flags.ess_capped {
        eprintln!("warning: ESS estimate exceeded 1.5 N and was capped; the chain may be too short");
    }
    if report.flags.eigen_floor_hit {
        eprintln!("warning: long-run covariance had negative eigenvalues, floored at zero");
    }
    Ok(report)
}

fn warn_acceptance(rate: f64, label: &str) {
    let (lo, hi) = ACCEPTANCE_BAND;
    if rate < lo || rate > hi {
        eprintln!(
            "warning: {label}acceptance rate {:.1}% is outside [{:.0}%, {:.0}%]; \
             multivariate chains mix best around 20-30%, so adjust beta",
            rate * 100.0,
            lo * 100.0,
            hi * 100.0
        );
    }
}

fn print_extremes(ordered: &[&str], means: impl Fn(&str) -> f64) {
    let n = ordered.len().min(5);
    println!("top {n}:");
    for (i, e) in ordered.iter().take(n).enumerate() {
        println!("  {:>3}  {:<32} {:+.4}", i + 1, e, means(e));
    }
    println!("bottom {n}:");
    let m = ordered.len();
    for (i, e) in ordered.iter().enumerate().skip(m - n) {
        println!("  {:>3}  {:<32} {:+.4}", i + 1, e, means(e));
    }
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let p = prepare(cfg)?;
    let out = &cfg.out;
    ensure_dir(out)?;
    let w = &p.w;
    if cfg.write_win_matrix {
        w.write_csv(&out.join("win_matrix.csv"))?;
    }
    let sigma = kernel_matrix(&log_income_distance(&p.income), &cfg.kernel_spec());
    let cov = constrain(&sigma, cfg.jitter)?;
    if cov.jitter_applied {
        eprintln!("note: kernel matrix was near-singular; added {:e} to its diagonal", cfg.jitter);
    }
    cov.write_csv(&out.join("prior_covariance.csv"), &w.entities)?;

    let sampler = cfg.sampler();
    let chains = run_chains(w, &cov, &sampler, cfg.chains)?;
    let multi = cfg.chains > 1;
    let opts = cfg.diagnostics();
    let mut reports = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        let tag = multi.then_some(c);
        write_chain(chain, &out.join(suffix("chain.csv", tag)))?;
        reports.push(write_diagnostics(chain, &opts, &cfg.traces, cfg.trace_stride, out, tag)?);
    }
    let pooled = ChainSamples::pooled(&chains)?;
    let mut report = summarize(&pooled, cfg.level)?;
    match mle_newman(w, NewmanOptions::default()) {
        Ok(mle) => report = report.with_mle(&mle.merits)?,
        Err(e) => eprintln!("note: no MLE baseline ({e})"),
    }
    export_report(&report, ReportFormat::Csv, &out.join("ranking.csv"))?;
    export_report(&report, ReportFormat::Json, &out.join("ranking.json"))?;

    println!(
        "{} entities, {} indicators, {} comparisons",
        w.n_entities(),
        p.n_indicators,
        total_comparisons(w)
    );
    for (c, r) in reports.iter().enumerate() {
        let label = if multi { format!("chain {c}: ") } else { String::new() };
        println!(
            "{label}acceptance {:.1}%, multivariate ESS {:.0} (rank {}, bandwidth {}) from {} draws",
            r.acceptance_rate * 100.0,
            r.ess,
            r.rank_est,
            r.bandwidth,
            r.n_kept
        );
        warn_acceptance(r.acceptance_rate, &label);
    }
    let ordered = report.ordered();
    let mean_of = |e: &str| report.mean[report.entities.iter().position(|x| x == e).unwrap()];
    print_extremes(&ordered, mean_of);
    println!("outputs in {}", out.display());
    Ok(())
}

pub fn cmd_mle(cfg: &RunConfig) -> Result<()> {
    let p = prepare(cfg)?;
    ensure_dir(&cfg.out)?;
    let est = mle_newman(&p.w, NewmanOptions::default())?;
    let path = cfg.out.join("mle_ranking.csv");
    write_mle_ranking(&p.w.entities, &est.merits, &path)?;
    let ranking = bayesbt::report::NamedRanking::from_merits(&p.w.entities, est.merits.as_slice());
    let ordered = ranking.ordered();
    println!("Newman iteration converged in {} sweeps", est.sweeps);
    let merit_of = |e: &str| est.merits.as_slice()[p.w.entities.iter().position(|x| x == e).unwrap()];
    print_extremes(&ordered, merit_of);
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_diagnose(chain: &Path, cfg: &RunConfig, out: Option<&PathBuf>) -> Result<()> {
    let samples = read_chain(chain)?;
    let out = out
        .cloned()
        .unwrap_or_else(|| chain.parent().map(Path::to_path_buf).unwrap_or_default());
    ensure_dir(&out)?;
    let r = write_diagnostics(&samples, &cfg.diagnostics(), &cfg.traces, cfg.trace_stride, &out, None)?;
    println!(
        "acceptance {:.1}%, multivariate ESS {:.0} (rank {}, bandwidth {}) from {} draws",
        r.acceptance_rate * 100.0,
        r.ess,
        r.rank_est,
        r.bandwidth,
        r.n_kept
    );
    warn_acceptance(r.acceptance_rate, "");
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
struct SimFile {
    #[serde(default)]
    sampler: Option<toml::Table>,
    #[serde(flatten)]
    study: toml::Table,
}

/// Sampler settings for recovery studies when the spec gives none. The
/// step size suits ten entities with 100 comparisons per pair (about a
/// quarter of proposals accepted).
pub fn default_sim_sampler() -> SamplerConfig {
    SamplerConfig {
        beta: 0.05,
        iterations: 100_000,
        burn_in: SamplerConfig::default_burn_in(100_000),
        ..SamplerConfig::default()
    }
}

pub fn load_sim_spec(path: &Path) -> Result<(SimStudySpec, SamplerConfig)> {
    let file: SimFile = crate::config::read_toml(path)?;
    let parse_err = |e: toml::de::Error| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let study: SimStudySpec = file.study.try_into().map_err(parse_err)?;
    let sampler = match file.sampler {
        None => default_sim_sampler(),
        Some(table) => {
            let has_burn_in = table.contains_key("burn_in");
            let mut merged = toml::Table::try_from(default_sim_sampler()).expect("sampler serialises");
            merged.extend(table);
            let mut s: SamplerConfig = merged.try_into().map_err(parse_err)?;
            if !has_burn_in {
                s.burn_in = SamplerConfig::default_burn_in(s.iterations);
            }
            s
        }
    };
    Ok((study, sampler))
}

pub fn cmd_simulate(spec_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let (mut spec, sampler) = load_sim_spec(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    ensure_dir(out)?;
    let results = run_recovery_study(&spec, &sampler)?;
    let study = out.join("study.csv");
    results.write_csv(&study, &out.join("study_estimates.csv"))?;
    let mut methods: Vec<&str> = results.rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_unstable();
    methods.dedup();
    for m in methods {
        let rows = results.method(m);
        let mut rho: Vec<f64> = rows.iter().filter_map(|r| r.spearman).collect();
        let failed = rows.len() - rho.len();
        rho.sort_by(f64::total_cmp);
        let median = if rho.is_empty() { f64::NAN } else { bayesbt::report::quantile(&rho, 0.5) };
        println!("{m:<12} median Spearman {median:.4} over {} fits ({failed} failed)", rows.len());
    }
    println!("wrote {}", study.display());
    Ok(())
}
