//! Training-example generators.
//!
//! Five strategies share the same seeded-RNG contract (fixed seed ⇒ an
//! identical example sequence):
//!
//! - uniform pairs over the whole negative space,
//! - pairs from a per-user reduced space drawn once up front,
//! - dynamic pairs picking the hardest of `X` random negatives,
//! - biased view pairs choosing among three pair kinds by probability,
//! - `(user, purchased, viewed, unobserved)` quadruples for the weighted
//!   triple loss.
//!
//! The purchase-only samplers exclude only `S_u` from the negative pool, so
//! viewed items stay eligible as negatives; the view-aware samplers exclude
//! `S_u ∪ V_u`. Both pools are explicit so experiments can toggle them.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::model::predict;
use crate::types::{FactorModel, FeedbackDataset, NegativePool};

/// Attempts of rejection sampling before falling back to an eligible-item
/// scan; guards degenerate users whose observed sets cover most items.
const REJECTION_CAP: usize = 100;

/// Which pairwise relation a [`PairExample`] encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    /// `(i, v)`: purchased over viewed.
    PurchasedVsViewed,
    /// `(i, j)`: purchased over unobserved.
    PurchasedVsUnobserved,
    /// `(v, j)`: viewed over unobserved.
    ViewedVsUnobserved,
}

/// One pairwise training example: `pos` should outrank `neg` for `user`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairExample {
    pub user: usize,
    pub pos: u32,
    pub neg: u32,
    pub kind: PairKind,
}

/// One triple-relation training example: purchased over viewed over
/// unobserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadExample {
    pub user: usize,
    pub purchased: u32,
    pub viewed: u32,
    pub unobserved: u32,
}

/// Per-user fixed negative candidate lists, built once per run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedSpaces {
    spaces: Vec<Vec<u32>>,
}

impl ReducedSpaces {
    pub fn space(&self, user: usize) -> &[u32] {
        &self.spaces[user]
    }

    pub fn num_users(&self) -> usize {
        self.spaces.len()
    }
}

/// Sampler construction failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SamplerError {
    /// `floor(gamma * N)` exceeds the user's non-purchased item count.
    InfeasibleRatio { user: usize, requested: usize, available: usize },
    /// A user has no eligible negative item under the configured pool.
    NoNegativeCandidates { user: usize },
    /// The quad sampler needs at least one user with both purchases and views.
    NoUsersWithViews,
}

impl fmt::Display for SamplerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerError::InfeasibleRatio { user, requested, available } => write!(
                f,
                "reduced space for user {user} needs {requested} items but only {available} are non-purchased"
            ),
            SamplerError::NoNegativeCandidates { user } => {
                write!(f, "user {user} has no eligible negative item")
            }
            SamplerError::NoUsersWithViews => {
                write!(f, "no user has both purchases and views")
            }
        }
    }
}

impl core::error::Error for SamplerError {}

#[inline]
fn is_excluded(data: &FeedbackDataset, user: usize, item: u32, pool: NegativePool) -> bool {
    match pool {
        NegativePool::ExcludePurchased => data.has_purchased(user, item),
        NegativePool::ExcludeObserved => !data.is_unobserved(user, item),
    }
}

/// Verifies every user keeps at least one eligible negative under `pool`.
/// Run once at load; the per-draw samplers rely on it.
pub fn check_negative_pool(
    data: &FeedbackDataset,
    pool: NegativePool,
) -> Result<(), SamplerError> {
    for user in 0..data.num_users {
        let observed = match pool {
            NegativePool::ExcludePurchased => data.purchases[user].len(),
            NegativePool::ExcludeObserved => {
                data.purchases[user].len() + data.views[user].len()
            }
        };
        if observed >= data.num_items {
            return Err(SamplerError::NoNegativeCandidates { user });
        }
    }
    Ok(())
}

/// The quad sampler requires some user with a non-empty viewed set.
pub fn check_quad_feasible(data: &FeedbackDataset) -> Result<(), SamplerError> {
    if (0..data.num_users).any(|u| !data.views[u].is_empty() && !data.purchases[u].is_empty()) {
        Ok(())
    } else {
        Err(SamplerError::NoUsersWithViews)
    }
}

/// Uniform negative draw from the pool via rejection sampling, falling back
/// to a full scan after [`REJECTION_CAP`] misses.
pub(crate) fn draw_negative<R: Rng>(
    data: &FeedbackDataset,
    user: usize,
    pool: NegativePool,
    rng: &mut R,
) -> u32 {
    let n = data.num_items as u32;
    for _ in 0..REJECTION_CAP {
        let item = rng.random_range(0..n);
        if !is_excluded(data, user, item, pool) {
            return item;
        }
    }
    let eligible: Vec<u32> =
        (0..n).filter(|&i| !is_excluded(data, user, i, pool)).collect();
    assert!(
        !eligible.is_empty(),
        "user {user} has no eligible negative item; check_negative_pool was skipped"
    );
    eligible[rng.random_range(0..eligible.len())]
}

#[inline]
pub(crate) fn draw_from<R: Rng>(set: &[u32], rng: &mut R) -> u32 {
    set[rng.random_range(0..set.len())]
}

/// Vanilla pairwise sampling: uniform user, uniform purchased item, uniform
/// negative from the pool.
pub fn sample_uniform_triple<R: Rng>(
    data: &FeedbackDataset,
    pool: NegativePool,
    rng: &mut R,
) -> (usize, u32, u32) {
    let user = rng.random_range(0..data.num_users);
    let pos = draw_from(&data.purchases[user], rng);
    let neg = draw_negative(data, user, pool, rng);
    (user, pos, neg)
}

/// Draws each user's fixed negative space: `max(1, floor(gamma * N))`
/// distinct non-purchased items, uniformly without replacement. `gamma = 1`
/// means no reduction and yields the full non-purchased set.
pub fn build_reduced_spaces<R: Rng>(
    data: &FeedbackDataset,
    gamma: f64,
    rng: &mut R,
) -> Result<ReducedSpaces, SamplerError> {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must be in (0, 1]");
    let n = data.num_items;

    let mut spaces = Vec::with_capacity(data.num_users);
    for user in 0..data.num_users {
        let available = n - data.purchases[user].len();
        let requested = if gamma == 1.0 {
            available
        } else {
            (libm::floor(gamma * n as f64) as usize).max(1)
        };
        if requested > available {
            return Err(SamplerError::InfeasibleRatio { user, requested, available });
        }

        let mut space: Vec<u32> = if requested * 2 >= available {
            // Dense draw: shuffle the complement and take a prefix.
            let mut complement: Vec<u32> =
                (0..n as u32).filter(|&i| !data.has_purchased(user, i)).collect();
            for idx in 0..requested {
                let swap = rng.random_range(idx..complement.len());
                complement.swap(idx, swap);
            }
            complement.truncate(requested);
            complement
        } else {
            // Sparse draw: rejection into a set.
            let mut chosen = BTreeSet::new();
            while chosen.len() < requested {
                let item = rng.random_range(0..n as u32);
                if !data.has_purchased(user, item) {
                    chosen.insert(item);
                }
            }
            chosen.into_iter().collect()
        };
        space.sort_unstable();
        spaces.push(space);
    }
    Ok(ReducedSpaces { spaces })
}

/// Pairwise sampling with the negative drawn from the user's fixed reduced
/// space.
pub fn sample_reduced_triple<R: Rng>(
    data: &FeedbackDataset,
    spaces: &ReducedSpaces,
    rng: &mut R,
) -> (usize, u32, u32) {
    let user = rng.random_range(0..data.num_users);
    let pos = draw_from(&data.purchases[user], rng);
    let neg = draw_from(spaces.space(user), rng);
    (user, pos, neg)
}

/// Dynamic negative sampling: of `x` uniformly drawn candidates, keep the
/// one the current model scores highest (ties to the lowest item index).
pub fn sample_dns_triple<R: Rng>(
    data: &FeedbackDataset,
    model: &FactorModel,
    x: usize,
    pool: NegativePool,
    rng: &mut R,
) -> (usize, u32, u32) {
    let user = rng.random_range(0..data.num_users);
    let pos = draw_from(&data.purchases[user], rng);
    let neg = dns_negative(data, model, user, x, pool, rng);
    (user, pos, neg)
}

/// The hardest-of-`x` negative selection behind [`sample_dns_triple`].
pub(crate) fn dns_negative<R: Rng>(
    data: &FeedbackDataset,
    model: &FactorModel,
    user: usize,
    x: usize,
    pool: NegativePool,
    rng: &mut R,
) -> u32 {
    assert!(x >= 1, "dns candidate count must be at least 1");
    let mut best: Option<(u32, f64)> = None;
    for _ in 0..x {
        let cand = draw_negative(data, user, pool, rng);
        let score = predict(model, user, cand as usize);
        let replace = match best {
            None => true,
            Some((b_item, b_score)) => {
                score > b_score || (score == b_score && cand < b_item)
            }
        };
        if replace {
            best = Some((cand, score));
        }
    }
    best.expect("x >= 1 guarantees a candidate").0
}

const PAIR_KINDS: [PairKind; 3] = [
    PairKind::PurchasedVsViewed,
    PairKind::PurchasedVsUnobserved,
    PairKind::ViewedVsUnobserved,
];

/// Biased view-pair sampling: uniform user, then a pair kind drawn with the
/// `omega` probabilities renormalized over the kinds feasible for that user
/// (the two view kinds need a non-empty `V_u`), then uniform members.
///
/// When every feasible kind has zero weight the choice degrades to uniform
/// over the feasible kinds, keeping the user marginal uniform.
pub fn sample_biased_pair<R: Rng>(
    data: &FeedbackDataset,
    omega: &[f64; 3],
    rng: &mut R,
) -> PairExample {
    let user = rng.random_range(0..data.num_users);
    let has_views = !data.views[user].is_empty();

    let feasible = [has_views, true, has_views];
    let mass: f64 = PAIR_KINDS
        .iter()
        .zip(feasible)
        .filter(|&(_, ok)| ok)
        .map(|(k, _)| omega[kind_index(*k)])
        .sum();

    let kind = if mass > 0.0 {
        let mut t = rng.random::<f64>() * mass;
        let mut selected = PairKind::PurchasedVsUnobserved;
        for (k, ok) in PAIR_KINDS.iter().zip(feasible) {
            if !ok {
                continue;
            }
            let w = omega[kind_index(*k)];
            if t < w {
                selected = *k;
                break;
            }
            t -= w;
        }
        selected
    } else {
        let options: Vec<PairKind> = PAIR_KINDS
            .iter()
            .zip(feasible)
            .filter(|&(_, ok)| ok)
            .map(|(k, _)| *k)
            .collect();
        options[rng.random_range(0..options.len())]
    };

    let (pos, neg) = match kind {
        PairKind::PurchasedVsViewed => {
            (draw_from(&data.purchases[user], rng), draw_from(&data.views[user], rng))
        }
        PairKind::PurchasedVsUnobserved => (
            draw_from(&data.purchases[user], rng),
            draw_negative(data, user, NegativePool::ExcludeObserved, rng),
        ),
        PairKind::ViewedVsUnobserved => (
            draw_from(&data.views[user], rng),
            draw_negative(data, user, NegativePool::ExcludeObserved, rng),
        ),
    };
    PairExample { user, pos, neg, kind }
}

#[inline]
fn kind_index(kind: PairKind) -> usize {
    match kind {
        PairKind::PurchasedVsViewed => 0,
        PairKind::PurchasedVsUnobserved => 1,
        PairKind::ViewedVsUnobserved => 2,
    }
}

/// Draws `(user, purchased, viewed, unobserved)` with the user uniform over
/// users that have at least one view.
pub fn sample_quad<R: Rng>(data: &FeedbackDataset, rng: &mut R) -> QuadExample {
    let mut user = None;
    for _ in 0..REJECTION_CAP {
        let u = rng.random_range(0..data.num_users);
        if !data.views[u].is_empty() {
            user = Some(u);
            break;
        }
    }
    let user = user.unwrap_or_else(|| {
        let candidates: Vec<usize> =
            (0..data.num_users).filter(|&u| !data.views[u].is_empty()).collect();
        assert!(
            !candidates.is_empty(),
            "no user has views; check_quad_feasible was skipped"
        );
        candidates[rng.random_range(0..candidates.len())]
    });

    QuadExample {
        user,
        purchased: draw_from(&data.purchases[user], rng),
        viewed: draw_from(&data.views[user], rng),
        unobserved: draw_negative(data, user, NegativePool::ExcludeObserved, rng),
    }
}
