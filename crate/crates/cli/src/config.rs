//! Run configuration: a flat TOML file plus command-line overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bayesbt::data_ingest::{MissingPolicy, Zone, ZoneThresholds};
use bayesbt::diagnostics::{DiagnosticsOptions, DEFAULT_THRESHOLD};
use bayesbt::mcmc::SamplerConfig;
use bayesbt::prior_cov::{KernelKind, KernelSpec, DEFAULT_JITTER};
use bayesbt::win_matrix::TiePolicy;
use bayesbt::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicyName {
    DropIndicators,
    DropEntities,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub indicators: Option<PathBuf>,
    pub polarity: Option<PathBuf>,
    pub income: Option<PathBuf>,
    pub out: PathBuf,

    pub missing_policy: MissingPolicyName,
    pub drop_entities: Vec<String>,
    pub tie_policy: TiePolicy,
    /// Empty means every zone.
    pub zones: Vec<String>,
    pub low_max: f64,
    pub high_min: f64,

    pub kernel: KernelKind,
    pub length_scale: f64,
    pub mixture: f64,
    pub jitter: f64,

    pub beta: f64,
    pub chi: f64,
    pub omega: f64,
    pub iterations: usize,
    /// Defaults to a third of `iterations`.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub seed: u64,
    pub rank_adjusted_shape: bool,
    pub half_quadratic_scale: bool,
    pub fixed_alpha2: Option<f64>,
    pub chains: usize,

    pub bandwidth: Option<usize>,
    pub threshold: f64,
    pub window: usize,
    /// Trace selection: `alpha2`, `quad_form`, `loglik`, `mu:<entity>`,
    /// `mu:*`, or `all`.
    pub traces: Vec<String>,
    /// Keep every n-th kept draw in traces.csv.
    pub trace_stride: usize,

    pub level: f64,
    pub write_win_matrix: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SamplerConfig::default();
        let z = ZoneThresholds::default();
        let k = KernelSpec::default();
        let d = DiagnosticsOptions::default();
        RunConfig {
            indicators: None,
            polarity: None,
            income: None,
            out: PathBuf::from("out"),
            missing_policy: MissingPolicyName::DropIndicators,
            drop_entities: Vec::new(),
            tie_policy: TiePolicy::default(),
            zones: Vec::new(),
            low_max: z.low_max,
            high_min: z.high_min,
            kernel: k.kind,
            length_scale: k.length_scale,
            mixture: k.mixture,
            jitter: DEFAULT_JITTER,
            beta: s.beta,
            chi: s.chi,
            omega: s.omega,
            iterations: s.iterations,
            burn_in: None,
            thin: s.thin,
            seed: s.seed,
            rank_adjusted_shape: s.rank_adjusted_shape,
            half_quadratic_scale: s.half_quadratic_scale,
            fixed_alpha2: None,
            chains: 1,
            bandwidth: None,
            threshold: DEFAULT_THRESHOLD,
            window: d.window,
            traces: vec!["all".into()],
            trace_stride: 1,
            level: 0.95,
            write_win_matrix: true,
        }
    }
}

/// Values given on the command line; each replaces the config entry.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub beta: Option<f64>,
    pub zones: Option<Vec<String>>,
    pub tie_policy: Option<TiePolicy>,
    pub out: Option<PathBuf>,
    pub indicators: Option<PathBuf>,
    pub polarity: Option<PathBuf>,
    pub income: Option<PathBuf>,
    pub bandwidth: Option<usize>,
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl RunConfig {
    /// Reads `path` (when given) and applies `over`. Relative paths in the
    /// file resolve against the file's directory.
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let mut cfg: RunConfig = read_toml(p)?;
                let base = p.parent().unwrap_or(Path::new(""));
                for slot in [&mut cfg.indicators, &mut cfg.polarity, &mut cfg.income] {
                    if let Some(rel) = slot.as_ref().filter(|r| r.is_relative()) {
                        *slot = Some(base.join(rel));
                    }
                }
                if cfg.out.is_relative() {
                    cfg.out = base.join(&cfg.out);
                }
                cfg
            }
            None => RunConfig::default(),
        };
        cfg.apply(over);
        Ok(cfg)
    }

    fn apply(&mut self, over: &Overrides) {
        if let Some(v) = over.seed {
            self.seed = v;
        }
        if let Some(v) = over.iterations {
            self.iterations = v;
        }
        if let Some(v) = over.beta {
            self.beta = v;
        }
        if let Some(v) = &over.zones {
            self.zones = v.clone();
        }
        if let Some(v) = over.tie_policy {
            self.tie_policy = v;
        }
        if let Some(v) = &over.out {
            self.out = v.clone();
        }
        if let Some(v) = &over.indicators {
            self.indicators = Some(v.clone());
        }
        if let Some(v) = &over.polarity {
            self.polarity = Some(v.clone());
        }
        if let Some(v) = &over.income {
            self.income = Some(v.clone());
        }
        if over.bandwidth.is_some() {
            self.bandwidth = over.bandwidth;
        }
    }

    pub fn require(&self, slot: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        slot.clone()
            .ok_or_else(|| Error::Validation(format!("no {what} file given (set `{what}` in the config or pass --{what})")))
    }

    pub fn thresholds(&self) -> ZoneThresholds {
        ZoneThresholds {
            low_max: self.low_max,
            high_min: self.high_min,
        }
    }

    pub fn missing(&self) -> MissingPolicy {
        match self.missing_policy {
            MissingPolicyName::DropIndicators => MissingPolicy::DropIndicators,
            MissingPolicyName::DropEntities => MissingPolicy::DropEntities(self.drop_entities.clone()),
        }
    }

    pub fn zone_set(&self) -> Result<Option<BTreeSet<Zone>>> {
        if self.zones.is_empty() {
            return Ok(None);
        }
        self.zones
            .iter()
            .map(|z| z.parse::<Zone>().map_err(Error::Validation))
            .collect::<Result<BTreeSet<_>>>()
            .map(Some)
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            kind: self.kernel,
            length_scale: self.length_scale,
            mixture: self.mixture,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            beta: self.beta,
            chi: self.chi,
            omega: self.omega,
            iterations: self.iterations,
            burn_in: self
                .burn_in
                .unwrap_or_else(|| SamplerConfig::default_burn_in(self.iterations)),
            thin: self.thin,
            seed: self.seed,
            kernel: self.kernel_spec(),
            rank_adjusted_shape: self.rank_adjusted_shape,
            half_quadratic_scale: self.half_quadratic_scale,
            fixed_alpha2: self.fixed_alpha2,
        }
    }

    pub fn diagnostics(&self) -> DiagnosticsOptions {
        DiagnosticsOptions {
            bandwidth: self.bandwidth,
            threshold: self.threshold,
            window: self.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds().validate()?;
        self.kernel_spec().validate()?;
        self.sampler().validate()?;
        self.zone_set()?;
        let bad = |m: String| Err(Error::Validation(m));
        if self.chains == 0 {
            return bad("chains must be at least 1".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.window == 0 || self.trace_stride == 0 {
            return bad("window and trace_stride must be at least 1".into());
        }
        if self.bandwidth == Some(0) {
            return bad("bandwidth must be at least 1".into());
        }
        if self.missing_policy == MissingPolicyName::DropEntities && self.drop_entities.is_empty() {
            return bad("missing_policy = \"drop_entities\" needs a drop_entities list".into());
        }
        Ok(())
    }
}
