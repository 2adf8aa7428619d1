//! Domain types shared by every other module.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Feedback channel of a raw interaction event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    Purchase,
    View,
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Purchase => write!(f, "purchase"),
            Behavior::View => write!(f, "view"),
        }
    }
}

/// One raw `(user, item, behavior, timestamp)` event as it appears in a log.
///
/// Identifiers are opaque strings until [`crate::ingest::build_dataset`]
/// assigns dense indices. Timestamps are seconds since the epoch and must be
/// non-negative; day-granular logs are permitted but flagged on the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub behavior: Behavior,
    pub timestamp: i64,
}

/// Dense-indexed implicit-feedback dataset.
///
/// Per user `u` the purchased set `S_u` and the viewed set `V_u` are stored
/// as strictly increasing item-index vectors (O(log n) membership tests,
/// deterministic iteration). The unobserved set is implicit: everything not
/// in `S_u ∪ V_u`. Timestamp vectors are aligned index-for-index with their
/// item vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub purchases: Vec<Vec<u32>>,
    pub purchase_timestamps: Vec<Vec<i64>>,
    pub views: Vec<Vec<u32>>,
    pub view_timestamps: Vec<Vec<i64>>,
    /// Set when timestamps only carry date information; session extraction
    /// refuses to run on such data.
    pub timestamps_day_granular: bool,
}

impl FeedbackDataset {
    /// Empty dataset with `num_users` users and `num_items` items.
    pub fn empty(num_users: usize, num_items: usize) -> Self {
        FeedbackDataset {
            num_users,
            num_items,
            purchases: alloc::vec![Vec::new(); num_users],
            purchase_timestamps: alloc::vec![Vec::new(); num_users],
            views: alloc::vec![Vec::new(); num_users],
            view_timestamps: alloc::vec![Vec::new(); num_users],
            timestamps_day_granular: false,
        }
    }

    pub fn purchased(&self, user: usize) -> &[u32] {
        &self.purchases[user]
    }

    pub fn viewed(&self, user: usize) -> &[u32] {
        &self.views[user]
    }

    pub fn has_purchased(&self, user: usize, item: u32) -> bool {
        self.purchases[user].binary_search(&item).is_ok()
    }

    pub fn has_viewed(&self, user: usize, item: u32) -> bool {
        self.views[user].binary_search(&item).is_ok()
    }

    /// Membership in the implicit unobserved set `R_u`.
    pub fn is_unobserved(&self, user: usize, item: u32) -> bool {
        !self.has_purchased(user, item) && !self.has_viewed(user, item)
    }

    pub fn total_purchases(&self) -> usize {
        self.purchases.iter().map(Vec::len).sum()
    }

    pub fn total_views(&self) -> usize {
        self.views.iter().map(Vec::len).sum()
    }

    /// `1 - interactions / (users * items)` for one feedback type.
    pub fn sparsity(&self, behavior: Behavior) -> f64 {
        let cells = (self.num_users as f64) * (self.num_items as f64);
        if cells == 0.0 {
            return 0.0;
        }
        let observed = match behavior {
            Behavior::Purchase => self.total_purchases(),
            Behavior::View => self.total_views(),
        };
        1.0 - observed as f64 / cells
    }
}

/// A violated [`FeedbackDataset`] invariant, naming the offending indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Per-user vector count does not match `num_users`.
    RowCountMismatch { field: &'static str, expected: usize, actual: usize },
    /// Item index outside `[0, num_items)`.
    ItemOutOfRange { user: usize, item: u32, behavior: Behavior },
    /// Item vector is not strictly increasing (unsorted or duplicated entry).
    NotStrictlyIncreasing { user: usize, item: u32, behavior: Behavior },
    /// Item present in both `S_u` and `V_u`.
    PurchaseViewOverlap { user: usize, item: u32 },
    /// User with no purchases.
    EmptyPurchases { user: usize },
    /// Timestamp vector length differs from its item vector.
    TimestampMismatch { user: usize, behavior: Behavior },
    /// Negative timestamp.
    NegativeTimestamp { user: usize, item: u32, behavior: Behavior },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowCountMismatch { field, expected, actual } => {
                write!(f, "{field}: expected {expected} per-user rows, found {actual}")
            }
            Violation::ItemOutOfRange { user, item, behavior } => {
                write!(f, "user {user}: {behavior} item {item} out of range")
            }
            Violation::NotStrictlyIncreasing { user, item, behavior } => {
                write!(f, "user {user}: {behavior} set not strictly increasing at item {item}")
            }
            Violation::PurchaseViewOverlap { user, item } => {
                write!(f, "user {user}: item {item} in both purchased and viewed sets")
            }
            Violation::EmptyPurchases { user } => {
                write!(f, "user {user}: empty purchase set")
            }
            Violation::TimestampMismatch { user, behavior } => {
                write!(f, "user {user}: {behavior} timestamps misaligned with items")
            }
            Violation::NegativeTimestamp { user, item, behavior } => {
                write!(f, "user {user}: {behavior} item {item} has negative timestamp")
            }
        }
    }
}

/// Checks every dataset invariant and returns one entry per violation.
///
/// Side-effect free and idempotent; an empty result means the dataset is
/// structurally sound. Datasets produced by the ingest pipeline always pass.
pub fn validate_dataset(data: &FeedbackDataset) -> Vec<Violation> {
    let mut out = Vec::new();

    let rows: [(&'static str, usize); 4] = [
        ("purchases", data.purchases.len()),
        ("purchase_timestamps", data.purchase_timestamps.len()),
        ("views", data.views.len()),
        ("view_timestamps", data.view_timestamps.len()),
    ];
    for (field, actual) in rows {
        if actual != data.num_users {
            out.push(Violation::RowCountMismatch { field, expected: data.num_users, actual });
        }
    }
    if !out.is_empty() {
        // Row structure is broken; per-user checks below would index out of bounds.
        return out;
    }

    for user in 0..data.num_users {
        for (behavior, items, stamps) in [
            (Behavior::Purchase, &data.purchases[user], &data.purchase_timestamps[user]),
            (Behavior::View, &data.views[user], &data.view_timestamps[user]),
        ] {
            if items.len() != stamps.len() {
                out.push(Violation::TimestampMismatch { user, behavior });
            }
            let mut prev: Option<u32> = None;
            for &item in items.iter() {
                if item as usize >= data.num_items {
                    out.push(Violation::ItemOutOfRange { user, item, behavior });
                }
                if let Some(p) = prev {
                    if item <= p {
                        out.push(Violation::NotStrictlyIncreasing { user, item, behavior });
                    }
                }
                prev = Some(item);
            }
            for (&item, &ts) in items.iter().zip(stamps.iter()) {
                if ts < 0 {
                    out.push(Violation::NegativeTimestamp { user, item, behavior });
                }
            }
        }

        for &item in &data.purchases[user] {
            if data.views[user].binary_search(&item).is_ok() {
                out.push(Violation::PurchaseViewOverlap { user, item });
            }
        }

        if data.purchases[user].is_empty() {
            out.push(Violation::EmptyPurchases { user });
        }
    }

    out
}

/// User and item latent factor matrices, row-major.
///
/// Entries are kept finite by the training loop; `is_finite` is the
/// checkpoint-time guard.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub num_users: usize,
    pub num_items: usize,
    pub factors: usize,
    /// `num_users * factors` user matrix, row-major.
    pub user_factors: Vec<f64>,
    /// `num_items * factors` item matrix, row-major.
    pub item_factors: Vec<f64>,
}

impl FactorModel {
    pub fn zeros(num_users: usize, num_items: usize, factors: usize) -> Self {
        FactorModel {
            num_users,
            num_items,
            factors,
            user_factors: alloc::vec![0.0; num_users * factors],
            item_factors: alloc::vec![0.0; num_items * factors],
        }
    }

    #[inline]
    pub fn user_row(&self, user: usize) -> &[f64] {
        let k = self.factors;
        &self.user_factors[user * k..(user + 1) * k]
    }

    #[inline]
    pub fn user_row_mut(&mut self, user: usize) -> &mut [f64] {
        let k = self.factors;
        &mut self.user_factors[user * k..(user + 1) * k]
    }

    #[inline]
    pub fn item_row(&self, item: usize) -> &[f64] {
        let k = self.factors;
        &self.item_factors[item * k..(item + 1) * k]
    }

    #[inline]
    pub fn item_row_mut(&mut self, item: usize) -> &mut [f64] {
        let k = self.factors;
        &mut self.item_factors[item * k..(item + 1) * k]
    }

    pub fn is_finite(&self) -> bool {
        self.user_factors.iter().chain(self.item_factors.iter()).all(|v| v.is_finite())
    }
}

/// Which items are eligible as the negative `j` of a training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativePool {
    /// `j ∉ S_u` — views stay eligible. Pool of the purchase-only samplers.
    ExcludePurchased,
    /// `j ∉ S_u ∪ V_u` — pool of the view-aware samplers.
    ExcludeObserved,
}

/// Training-example generator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Uniform,
    ReducedSpace,
    Dns,
    BiasedView,
    TripleView,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::ReducedSpace => "reduced",
            SamplerKind::Dns => "dns",
            SamplerKind::BiasedView => "biased",
            SamplerKind::TripleView => "triple",
        };
        write!(f, "{name}")
    }
}

/// Sampler settings. Fields irrelevant to the selected `kind` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Reduced-space size ratio, in `(0, 1]`.
    pub gamma: f64,
    /// Pair-kind probabilities `(purchased vs viewed, purchased vs
    /// unobserved, viewed vs unobserved)`; must sum to 1.
    pub omega: [f64; 3],
    /// Candidate count `X` of the dynamic sampler.
    pub dns_candidates: usize,
    /// Negative pool override; `None` keeps the per-kind default
    /// (purchase-only samplers exclude purchases, view-aware samplers
    /// exclude all observed items).
    pub pool: Option<NegativePool>,
    /// With the triple sampler, let view-less users contribute plain
    /// purchased-vs-unobserved pair updates instead of being skipped.
    pub quad_fallback_pairs: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Uniform,
            gamma: 1.0,
            omega: [0.3, 0.3, 0.4],
            dns_candidates: 10,
            pool: None,
            quad_fallback_pairs: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ConfigError::new(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.omega.iter().any(|&w| w < 0.0) {
            return Err(ConfigError::new(format!(
                "omega components must be non-negative, got {:?}",
                self.omega
            )));
        }
        let sum: f64 = self.omega.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new(format!(
                "omega must sum to 1 (got {sum})"
            )));
        }
        if self.dns_candidates == 0 {
            return Err(ConfigError::new("dns_candidates must be at least 1"));
        }
        Ok(())
    }

    /// Effective negative pool for this sampler kind.
    pub fn negative_pool(&self) -> NegativePool {
        self.pool.unwrap_or(match self.kind {
            SamplerKind::Uniform | SamplerKind::ReducedSpace | SamplerKind::Dns => {
                NegativePool::ExcludePurchased
            }
            SamplerKind::BiasedView | SamplerKind::TripleView => NegativePool::ExcludeObserved,
        })
    }
}

/// How the viewed-item weight of the triple loss is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingConfig {
    /// One `alpha` in `[0, 1]` shared by all users.
    Global { alpha: f64 },
    /// Per-user `alpha_u` from session view/purchase ratios:
    /// `alpha_u = A_u^beta / (A_u^beta + 1)`.
    PerUser { beta: f64, session_gap_seconds: i64 },
}

impl Default for WeightingConfig {
    fn default() -> Self {
        WeightingConfig::Global { alpha: 0.7 }
    }
}

impl WeightingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match *self {
            WeightingConfig::Global { alpha } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(ConfigError::new(format!(
                        "alpha must be in [0, 1], got {alpha}"
                    )));
                }
            }
            WeightingConfig::PerUser { beta, session_gap_seconds } => {
                if !(beta > 0.0) {
                    return Err(ConfigError::new(format!("beta must be positive, got {beta}")));
                }
                if session_gap_seconds <= 0 {
                    return Err(ConfigError::new(format!(
                        "session gap must be positive, got {session_gap_seconds}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrMode {
    Fixed,
    Adagrad,
}

/// Optimization settings for [`crate::train::run_training`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_mode: LrMode,
    pub regularization: f64,
    pub factors: usize,
    pub max_epochs: usize,
    /// Consecutive validation-loss increases tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Updates per epoch; `None` means one sweep in expectation (the number
    /// of training purchases).
    pub steps_per_epoch: Option<usize>,
    /// Standard deviation of the Gaussian factor initialization.
    pub init_scale: f64,
    /// Cutoff for the per-epoch HR/NDCG columns of the report.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            lr_mode: LrMode::Fixed,
            regularization: 0.01,
            factors: 32,
            max_epochs: 50,
            patience: 0,
            seed: 42,
            steps_per_epoch: None,
            init_scale: 0.01,
            eval_k: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate > 0.0) {
            return Err(ConfigError::new(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.regularization < 0.0 {
            return Err(ConfigError::new(format!(
                "regularization must be non-negative, got {}",
                self.regularization
            )));
        }
        if self.factors == 0 {
            return Err(ConfigError::new("factor count must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(ConfigError::new("max_epochs must be at least 1"));
        }
        if self.eval_k == 0 {
            return Err(ConfigError::new("eval_k must be at least 1"));
        }
        if !(self.init_scale > 0.0) {
            return Err(ConfigError::new(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// An invalid configuration value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError { message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.message)
    }
}

impl core::error::Error for ConfigError {}
