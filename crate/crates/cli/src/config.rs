//! Run configuration: defaults, TOML config files, `VIEWRANK_*` environment
//! variables, and command-line flags, in that order of precedence
//! (flag > env > file > default). The effective configuration is echoed
//! verbatim into every report header.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use viewrank_core::types::{
    LrMode, NegativePool, SamplerConfig, SamplerKind, TrainConfig, WeightingConfig,
};

/// Every recognized configuration key, in echo order.
pub const KEYS: &[&str] = &[
    "raw_log",
    "snapshot",
    "model",
    "report",
    "metrics",
    "out_dir",
    "min_user_purchases",
    "min_item_purchases",
    "lenient_parse",
    "day_granular",
    "sampler",
    "gamma",
    "omega",
    "dns_x",
    "negative_pool",
    "quad_fallback",
    "weighting",
    "alpha",
    "beta",
    "session_gap",
    "lr",
    "lr_mode",
    "reg",
    "factors",
    "epochs",
    "patience",
    "steps_per_epoch",
    "init_scale",
    "seed",
    "k",
    "baseline",
    "wall_clock",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingMode {
    Global,
    PerUser,
}

/// Flat configuration for one experiment run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw_log: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,

    pub min_user_purchases: usize,
    pub min_item_purchases: usize,
    pub lenient_parse: bool,
    pub day_granular: bool,

    pub sampler: SamplerKind,
    pub gamma: f64,
    pub omega: [f64; 3],
    pub dns_x: usize,
    pub negative_pool: Option<NegativePool>,
    pub quad_fallback: bool,

    pub weighting: WeightingMode,
    pub alpha: f64,
    pub beta: f64,
    pub session_gap: i64,

    pub lr: f64,
    pub lr_mode: LrMode,
    pub reg: f64,
    pub factors: usize,
    pub epochs: usize,
    pub patience: usize,
    pub steps_per_epoch: Option<usize>,
    pub init_scale: f64,
    pub seed: u64,
    /// True once any source set `seed`; `evaluate` falls back to the
    /// checkpoint's stored seed otherwise.
    pub seed_explicit: bool,

    pub k: usize,
    pub baseline: Option<String>,
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            raw_log: None,
            snapshot: None,
            model: None,
            report: None,
            metrics: None,
            out_dir: None,
            min_user_purchases: 12,
            min_item_purchases: 16,
            lenient_parse: false,
            day_granular: false,
            sampler: SamplerKind::Uniform,
            gamma: 1.0,
            omega: [0.3, 0.3, 0.4],
            dns_x: 10,
            negative_pool: None,
            quad_fallback: false,
            weighting: WeightingMode::Global,
            alpha: 0.7,
            beta: 0.5,
            session_gap: 3600,
            lr: 0.05,
            lr_mode: LrMode::Fixed,
            reg: 0.01,
            factors: 32,
            epochs: 50,
            patience: 0,
            steps_per_epoch: None,
            init_scale: 0.01,
            seed: 42,
            seed_explicit: false,
            k: 100,
            baseline: None,
            wall_clock: false,
        }
    }
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => bail!("{key}: expected a boolean, got `{other}`"),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| anyhow!("{key}: invalid value `{raw}`: {e}"))
}

fn parse_omega(raw: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("omega: expected three comma-separated values, got `{raw}`");
    }
    let mut omega = [0.0; 3];
    for (slot, part) in omega.iter_mut().zip(parts) {
        *slot = parse_num("omega", part)?;
    }
    Ok(omega)
}

impl RunConfig {
    /// Applies one `key = raw` assignment from a flag or environment
    /// variable. Unknown keys are rejected.
    pub fn apply_str(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "raw_log" => self.raw_log = Some(PathBuf::from(raw)),
            "snapshot" => self.snapshot = Some(PathBuf::from(raw)),
            "model" => self.model = Some(PathBuf::from(raw)),
            "report" => self.report = Some(PathBuf::from(raw)),
            "metrics" => self.metrics = Some(PathBuf::from(raw)),
            "out_dir" => self.out_dir = Some(PathBuf::from(raw)),
            "min_user_purchases" => self.min_user_purchases = parse_num(key, raw)?,
            "min_item_purchases" => self.min_item_purchases = parse_num(key, raw)?,
            "lenient_parse" => self.lenient_parse = parse_bool(key, raw)?,
            "day_granular" => self.day_granular = parse_bool(key, raw)?,
            "sampler" => {
                self.sampler = match raw.trim().to_ascii_lowercase().as_str() {
                    "uniform" => SamplerKind::Uniform,
                    "reduced" => SamplerKind::ReducedSpace,
                    "dns" => SamplerKind::Dns,
                    "biased" => SamplerKind::BiasedView,
                    "triple" => SamplerKind::TripleView,
                    other => bail!(
                        "sampler: `{other}` is not one of uniform, reduced, dns, biased, triple"
                    ),
                }
            }
            "gamma" => self.gamma = parse_num(key, raw)?,
            "omega" => self.omega = parse_omega(raw)?,
            "dns_x" => self.dns_x = parse_num(key, raw)?,
            "negative_pool" => {
                self.negative_pool = match raw.trim().to_ascii_lowercase().as_str() {
                    "default" | "" => None,
                    "exclude-purchased" => Some(NegativePool::ExcludePurchased),
                    "exclude-observed" => Some(NegativePool::ExcludeObserved),
                    other => bail!(
                        "negative_pool: `{other}` is not one of default, exclude-purchased, exclude-observed"
                    ),
                }
            }
            "quad_fallback" => self.quad_fallback = parse_bool(key, raw)?,
            "weighting" => {
                self.weighting = match raw.trim().to_ascii_lowercase().as_str() {
                    "global" => WeightingMode::Global,
                    "per-user" | "per_user" => WeightingMode::PerUser,
                    other => bail!("weighting: `{other}` is not one of global, per-user"),
                }
            }
            "alpha" => self.alpha = parse_num(key, raw)?,
            "beta" => self.beta = parse_num(key, raw)?,
            "session_gap" => self.session_gap = parse_num(key, raw)?,
            "lr" => self.lr = parse_num(key, raw)?,
            "lr_mode" => {
                self.lr_mode = match raw.trim().to_ascii_lowercase().as_str() {
                    "fixed" => LrMode::Fixed,
                    "adagrad" => LrMode::Adagrad,
                    other => bail!("lr_mode: `{other}` is not one of fixed, adagrad"),
                }
            }
            "reg" => self.reg = parse_num(key, raw)?,
            "factors" => self.factors = parse_num(key, raw)?,
            "epochs" => self.epochs = parse_num(key, raw)?,
            "patience" => self.patience = parse_num(key, raw)?,
            "steps_per_epoch" => {
                self.steps_per_epoch = match raw.trim().to_ascii_lowercase().as_str() {
                    "auto" | "" => None,
                    n => Some(parse_num(key, n)?),
                }
            }
            "init_scale" => self.init_scale = parse_num(key, raw)?,
            "seed" => {
                self.seed = parse_num(key, raw)?;
                self.seed_explicit = true;
            }
            "k" => self.k = parse_num(key, raw)?,
            "baseline" => {
                self.baseline = match raw.trim().to_ascii_lowercase().as_str() {
                    "none" | "" => None,
                    "popularity" => Some("popularity".to_string()),
                    other => bail!("baseline: `{other}` is not one of none, popularity"),
                }
            }
            "wall_clock" => self.wall_clock = parse_bool(key, raw)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Applies one TOML assignment, lowering scalars and the omega triple to
    /// the string form shared with flags and env vars.
    pub fn apply_toml(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let raw = toml_scalar_to_string(key, value)?;
        self.apply_str(key, &raw)
    }

    /// Effective configuration as `(key, value)` pairs in canonical order.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref().map_or(String::new(), |p| p.display().to_string())
        };
        let pool = match self.negative_pool {
            None => "default".to_string(),
            Some(NegativePool::ExcludePurchased) => "exclude-purchased".to_string(),
            Some(NegativePool::ExcludeObserved) => "exclude-observed".to_string(),
        };
        vec![
            ("raw_log", path(&self.raw_log)),
            ("snapshot", path(&self.snapshot)),
            ("model", path(&self.model)),
            ("report", path(&self.report)),
            ("metrics", path(&self.metrics)),
            ("out_dir", path(&self.out_dir)),
            ("min_user_purchases", self.min_user_purchases.to_string()),
            ("min_item_purchases", self.min_item_purchases.to_string()),
            ("lenient_parse", self.lenient_parse.to_string()),
            ("day_granular", self.day_granular.to_string()),
            ("sampler", self.sampler.to_string()),
            ("gamma", self.gamma.to_string()),
            (
                "omega",
                format!("{},{},{}", self.omega[0], self.omega[1], self.omega[2]),
            ),
            ("dns_x", self.dns_x.to_string()),
            ("negative_pool", pool),
            ("quad_fallback", self.quad_fallback.to_string()),
            (
                "weighting",
                match self.weighting {
                    WeightingMode::Global => "global".to_string(),
                    WeightingMode::PerUser => "per-user".to_string(),
                },
            ),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("session_gap", self.session_gap.to_string()),
            ("lr", self.lr.to_string()),
            (
                "lr_mode",
                match self.lr_mode {
                    LrMode::Fixed => "fixed".to_string(),
                    LrMode::Adagrad => "adagrad".to_string(),
                },
            ),
            ("reg", self.reg.to_string()),
            ("factors", self.factors.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            (
                "steps_per_epoch",
                self.steps_per_epoch.map_or("auto".to_string(), |s| s.to_string()),
            ),
            ("init_scale", self.init_scale.to_string()),
            ("seed", self.seed.to_string()),
            ("k", self.k.to_string()),
            ("baseline", self.baseline.clone().unwrap_or_else(|| "none".to_string())),
            ("wall_clock", self.wall_clock.to_string()),
        ]
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            kind: self.sampler,
            gamma: self.gamma,
            omega: self.omega,
            dns_candidates: self.dns_x,
            pool: self.negative_pool,
            quad_fallback_pairs: self.quad_fallback,
        }
    }

    pub fn weighting_config(&self) -> WeightingConfig {
        match self.weighting {
            WeightingMode::Global => WeightingConfig::Global { alpha: self.alpha },
            WeightingMode::PerUser => WeightingConfig::PerUser {
                beta: self.beta,
                session_gap_seconds: self.session_gap,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            lr_mode: self.lr_mode,
            regularization: self.reg,
            factors: self.factors,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            steps_per_epoch: self.steps_per_epoch,
            init_scale: self.init_scale,
            eval_k: self.k,
        }
    }

    pub fn require(&self, key: &str) -> Result<&PathBuf> {
        let slot = match key {
            "raw_log" => &self.raw_log,
            "snapshot" => &self.snapshot,
            "model" => &self.model,
            "report" => &self.report,
            "metrics" => &self.metrics,
            "out_dir" => &self.out_dir,
            other => bail!("internal error: `{other}` is not a path key"),
        };
        slot.as_ref()
            .ok_or_else(|| anyhow!("missing required path `{key}` (flag or config)"))
    }

    /// Builds the effective config: defaults, then the TOML table, then
    /// `VIEWRANK_*` environment variables, then flag overrides.
    pub fn from_sources(
        table: Option<&toml::Table>,
        env: &dyn Fn(&str) -> Option<String>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(table) = table {
            for (key, value) in table {
                cfg.apply_toml(key, value)
                    .with_context(|| format!("config file key `{key}`"))?;
            }
        }
        for key in KEYS {
            if let Some(raw) = env(&format!("VIEWRANK_{}", key.to_ascii_uppercase())) {
                cfg.apply_str(key, &raw)
                    .with_context(|| format!("environment override for `{key}`"))?;
            }
        }
        for (key, raw) in overrides {
            cfg.apply_str(key, raw).with_context(|| format!("flag `--{key}`"))?;
        }
        Ok(cfg)
    }

    /// Convenience loader: optional config file plus process environment
    /// plus flag overrides.
    pub fn load(
        config_path: Option<&std::path::Path>,
        overrides: &[(String, String)],
    ) -> Result<RunConfig> {
        let table = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                Some(text.parse::<toml::Table>().with_context(|| {
                    format!("parsing config file {}", path.display())
                })?)
            }
            None => None,
        };
        let env = |name: &str| std::env::var(name).ok();
        RunConfig::from_sources(table.as_ref(), &env, overrides)
    }
}

/// Lowers a TOML scalar (or the three-element omega array) to the string
/// form understood by [`RunConfig::apply_str`]. Other arrays are reserved
/// for the sweep runner.
pub fn toml_scalar_to_string(key: &str, value: &toml::Value) -> Result<String> {
    match value {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        toml::Value::Array(items) if key == "omega" && is_scalar_triple(items) => {
            let parts: Result<Vec<String>> = items
                .iter()
                .map(|v| toml_scalar_to_string("omega", v))
                .collect();
            Ok(parts?.join(","))
        }
        toml::Value::Array(_) => bail!(
            "`{key}` has a list value; lists drive the `sweep` command, not single runs"
        ),
        other => bail!("`{key}`: unsupported TOML value type {}", other.type_str()),
    }
}

fn is_scalar_triple(items: &[toml::Value]) -> bool {
    items.len() == 3
        && items
            .iter()
            .all(|v| matches!(v, toml::Value::Float(_) | toml::Value::Integer(_)))
}
