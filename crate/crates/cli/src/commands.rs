//! The five commands behind the binary: preprocess, train, evaluate, stats,
//! sweep. Each is a pure function of (inputs, config, seed) and reproduces
//! its output files bit-for-bit on re-execution.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use viewrank_core::eval::{evaluate, popularity_baseline, skewness_curve, split_leave_one_out};
use viewrank_core::ingest::{
    build_dataset, dedup_purchases, filter_activity, parse_interactions, remove_leaked_views,
    ParsePolicy,
};
use viewrank_core::train::run_training;
use viewrank_core::types::{validate_dataset, Behavior};

use crate::checkpoint::{load_model, save_model};
use crate::config::{toml_scalar_to_string, RunConfig};
use crate::report::{write_metrics, write_report, write_skew, skew_grid, MetricsRow};
use crate::snapshot::{load_snapshot, save_snapshot};

// Stream 3 of the run seed drives the leave-one-out split; training itself
// uses streams 0-2. Train and evaluate must agree on this to see the same
// split.
fn split_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    rng
}

/// Dataset statistics printed after preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub purchases: usize,
    pub views: usize,
    pub users: usize,
    pub items: usize,
    pub purchase_sparsity: f64,
    pub view_sparsity: f64,
    pub skipped_lines: usize,
}

impl fmt::Display for PreprocessSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "purchase#\tview#\tuser#\titem#\tsparsity(p/v)")?;
        write!(
            f,
            "{}\t{}\t{}\t{}\t{:.4}%/{:.4}%",
            self.purchases,
            self.views,
            self.users,
            self.items,
            100.0 * self.purchase_sparsity,
            100.0 * self.view_sparsity,
        )?;
        if self.skipped_lines > 0 {
            write!(f, "\n({} malformed lines skipped)", self.skipped_lines)?;
        }
        Ok(())
    }
}

/// Parses the raw log, runs dedup → leak filter → activity filter, and
/// writes the dense snapshot.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessSummary> {
    let raw_path = cfg.require("raw_log")?;
    let text = std::fs::read_to_string(raw_path)
        .with_context(|| format!("reading raw log {}", raw_path.display()))?;
    let policy = if cfg.lenient_parse { ParsePolicy::Lenient } else { ParsePolicy::Strict };
    let log = parse_interactions(&text, policy)
        .map_err(|e| anyhow!("{e}").context(format!("parsing {}", raw_path.display())))?;

    let deduped = dedup_purchases(&log.events);
    let filtered_views = remove_leaked_views(&deduped);
    let active = filter_activity(
        &filtered_views,
        cfg.min_user_purchases,
        cfg.min_item_purchases,
    )
    .map_err(|e| anyhow!("{e}"))?;
    let (data, maps) = build_dataset(&active, cfg.day_granular);

    let violations = validate_dataset(&data);
    if !violations.is_empty() {
        bail!("preprocessing produced an invalid dataset: {}", violations[0]);
    }

    save_snapshot(cfg.require("snapshot")?, &data, &maps)?;

    Ok(PreprocessSummary {
        purchases: data.total_purchases(),
        views: data.total_views(),
        users: data.num_users,
        items: data.num_items,
        purchase_sparsity: data.sparsity(Behavior::Purchase),
        view_sparsity: data.sparsity(Behavior::View),
        skipped_lines: log.skipped.len(),
    })
}

/// Final state of a training run; the full row log lives in the report file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_hr: f64,
    pub best_ndcg: f64,
}

impl fmt::Display for TrainOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} epoch(s); best epoch {} (val_loss {:.6}, hr {:.4}, ndcg {:.4})",
            self.epochs_run, self.best_epoch, self.best_val_loss, self.best_hr, self.best_ndcg
        )
    }
}

/// Splits the snapshot, trains with the configured sampler and weighting,
/// and writes the best checkpoint plus the epoch report.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (data, _maps) = load_snapshot(cfg.require("snapshot")?)?;
    let splits = split_leave_one_out(&data, &mut split_rng(cfg.seed))
        .map_err(|e| anyhow!("{e}").context("leave-one-out split"))?;

    let sampler = cfg.sampler_config();
    let weighting = cfg.weighting_config();
    let train_cfg = cfg.train_config();

    let started = Instant::now();
    let mut real_clock = move || started.elapsed().as_secs_f64();
    let clock: Option<&mut dyn FnMut() -> f64> =
        if cfg.wall_clock { Some(&mut real_clock) } else { None };

    let (model, report) = run_training(&splits, &sampler, &weighting, &train_cfg, clock)
        .map_err(|e| anyhow!("{e}"))?;

    save_model(cfg.require("model")?, &model, cfg.seed)?;
    write_report(cfg.require("report")?, &cfg.echo(), &report)?;

    let best = &report.rows[report.best_epoch - 1];
    Ok(TrainOutcome {
        epochs_run: report.rows.len(),
        best_epoch: report.best_epoch,
        best_val_loss: best.val_loss,
        best_hr: best.hr,
        best_ndcg: best.ndcg,
    })
}

/// Evaluates a checkpoint (and optionally the popularity baseline) on the
/// snapshot's leave-one-out split.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<MetricsRow>> {
    let (data, _maps) = load_snapshot(cfg.require("snapshot")?)?;
    let (model, checkpoint_seed) = load_model(cfg.require("model")?)?;

    if model.num_users != data.num_users || model.num_items != data.num_items {
        bail!(
            "dimension mismatch: checkpoint is {}x{}, snapshot is {}x{}",
            model.num_users,
            model.num_items,
            data.num_users,
            data.num_items
        );
    }

    // The checkpoint's seed reproduces the training-time split unless the
    // caller explicitly picks another.
    let seed = if cfg.seed_explicit { cfg.seed } else { checkpoint_seed };
    let splits = split_leave_one_out(&data, &mut split_rng(seed))
        .map_err(|e| anyhow!("{e}").context("leave-one-out split"))?;

    let mut rows = Vec::new();
    let (hr, ndcg) = evaluate(&model, &splits, cfg.k);
    rows.push(MetricsRow { label: "factor".to_string(), k: cfg.k, hr, ndcg });

    if cfg.baseline.as_deref() == Some("popularity") {
        let pop = popularity_baseline(&splits.train);
        let (hr, ndcg) = evaluate(&pop, &splits, cfg.k);
        rows.push(MetricsRow { label: "popularity".to_string(), k: cfg.k, hr, ndcg });
    }

    if let Some(path) = &cfg.metrics {
        write_metrics(path, &rows)?;
    }
    Ok(rows)
}

/// Writes the purchase and view popularity-skewness curves.
pub fn cmd_stats(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let (data, _maps) = load_snapshot(cfg.require("snapshot")?)?;
    let out_dir = cfg.require("out_dir")?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let purchase_path = out_dir.join("purchase_skew.tsv");
    let view_path = out_dir.join("view_skew.tsv");
    let purchase_curve = skew_grid(&skewness_curve(&data, Behavior::Purchase));
    let view_curve = skew_grid(&skewness_curve(&data, Behavior::View));
    write_skew(&purchase_path, "purchase", &purchase_curve)?;
    write_skew(&view_path, "view", &view_curve)?;
    Ok((purchase_path, view_path))
}

/// Expands list-valued config keys into one concrete TOML table per
/// combination (cartesian product), named `key=value__key2=value2`.
pub fn expand_sweep(table: &toml::Table) -> Result<Vec<(String, toml::Table)>> {
    let mut swept: Vec<(String, Vec<toml::Value>)> = Vec::new();
    for (key, value) in table {
        if let toml::Value::Array(items) = value {
            // A plain numeric triple is a single omega value, not a sweep.
            let is_single_omega = key == "omega"
                && items.len() == 3
                && items
                    .iter()
                    .all(|v| matches!(v, toml::Value::Float(_) | toml::Value::Integer(_)));
            if is_single_omega {
                continue;
            }
            if items.is_empty() {
                bail!("sweep list for `{key}` is empty");
            }
            swept.push((key.clone(), items.clone()));
        }
    }

    if swept.is_empty() {
        return Ok(vec![("single".to_string(), table.clone())]);
    }

    let mut combos: Vec<(String, toml::Table)> = vec![(String::new(), table.clone())];
    for (key, values) in &swept {
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for (name, base) in &combos {
            for value in values {
                let mut expanded = base.clone();
                expanded.insert(key.clone(), value.clone());
                let value_label = toml_scalar_to_string(key, value)
                    .with_context(|| format!("sweep value for `{key}`"))?;
                let label = format!("{key}={value_label}");
                let name = if name.is_empty() {
                    label
                } else {
                    format!("{name}__{label}")
                };
                next.push((name, expanded));
            }
        }
        combos = next;
    }
    Ok(combos)
}

/// Runs one training per sweep combination, each in its own subdirectory of
/// `out_dir` with its model, report, and echoed config.
pub fn cmd_sweep(
    config_path: &Path,
    overrides: &[(String, String)],
    out_dir: &Path,
) -> Result<Vec<(String, TrainOutcome)>> {
    let text = std::fs::read_to_string(config_path)
        .with_context(|| format!("reading config file {}", config_path.display()))?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing config file {}", config_path.display()))?;

    let combos = expand_sweep(&table)?;
    let env = |name: &str| std::env::var(name).ok();

    let mut outcomes = Vec::with_capacity(combos.len());
    for (name, combo) in combos {
        let run_dir = out_dir.join(sanitize(&name));
        std::fs::create_dir_all(&run_dir)
            .with_context(|| format!("creating {}", run_dir.display()))?;

        let mut cfg = RunConfig::from_sources(Some(&combo), &env, overrides)
            .with_context(|| format!("sweep run `{name}`"))?;
        cfg.model = Some(run_dir.join("model.bin"));
        cfg.report = Some(run_dir.join("report.tsv"));

        let outcome = cmd_train(&cfg).with_context(|| format!("sweep run `{name}`"))?;
        outcomes.push((name, outcome));
    }
    Ok(outcomes)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=_.,-".contains(c) { c } else { '_' })
        .collect()
}
