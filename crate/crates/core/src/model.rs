//! Matrix-factorization predictor: init, scoring, top-k ranking.

use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::types::FactorModel;

/// Anything that can score `(user, item)` pairs over a fixed item universe.
///
/// Implemented by [`FactorModel`] (dot product) and by the popularity
/// baseline, so ranking and evaluation share one code path.
pub trait Scorer {
    fn num_items(&self) -> usize;
    fn score(&self, user: usize, item: u32) -> f64;
}

impl Scorer for FactorModel {
    fn num_items(&self) -> usize {
        self.num_items
    }

    fn score(&self, user: usize, item: u32) -> f64 {
        predict(self, user, item as usize)
    }
}

/// Draws all factor entries from a zero-mean Gaussian with standard
/// deviation `scale`. Deterministic for fixed arguments.
pub fn init_model(
    num_users: usize,
    num_items: usize,
    factors: usize,
    seed: u64,
    scale: f64,
) -> FactorModel {
    assert!(num_users >= 1 && num_items >= 1 && factors >= 1);
    assert!(scale > 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, scale).expect("valid std dev");
    let mut model = FactorModel::zeros(num_users, num_items, factors);
    for v in model.user_factors.iter_mut() {
        *v = normal.sample(&mut rng);
    }
    for v in model.item_factors.iter_mut() {
        *v = normal.sample(&mut rng);
    }
    model
}

/// Predicted preference of `user` for `item`: the latent-factor dot product.
#[inline]
pub fn predict(model: &FactorModel, user: usize, item: usize) -> f64 {
    assert!(user < model.num_users, "user index {user} out of range");
    assert!(item < model.num_items, "item index {item} out of range");
    dot(model.user_row(user), model.item_row(item))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Heap entry ordered so the binary max-heap keeps the WORST kept candidate
// on top: lower score is greater, and on equal scores the higher item index
// is greater (it loses the tie).
#[derive(PartialEq)]
struct Worst {
    score: f64,
    item: u32,
}

impl Eq for Worst {}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.item.cmp(&other.item))
    }
}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` highest-scoring items for `user`, skipping `excluded`
/// (sorted ascending), in descending score order with ties broken by
/// ascending item index. Returns fewer than `k` entries when the candidate
/// set is smaller.
///
/// Selection runs over a bounded heap, so the cost is `O(N log k)` rather
/// than a full sort of all items.
pub fn rank_items<S: Scorer>(
    scorer: &S,
    user: usize,
    excluded: &[u32],
    k: usize,
) -> Vec<(u32, f64)> {
    assert!(k >= 1, "k must be at least 1");
    debug_assert!(excluded.windows(2).all(|w| w[0] < w[1]), "excluded must be sorted");

    let mut heap: alloc::collections::BinaryHeap<Worst> =
        alloc::collections::BinaryHeap::with_capacity(k + 1);
    for item in 0..scorer.num_items() as u32 {
        if excluded.binary_search(&item).is_ok() {
            continue;
        }
        let score = scorer.score(user, item);
        if heap.len() < k {
            heap.push(Worst { score, item });
        } else {
            let worst = heap.peek().expect("heap non-empty");
            let better = match score.total_cmp(&worst.score) {
                Ordering::Greater => true,
                Ordering::Equal => item < worst.item,
                Ordering::Less => false,
            };
            if better {
                heap.pop();
                heap.push(Worst { score, item });
            }
        }
    }

    let mut out: Vec<(u32, f64)> = heap.into_iter().map(|w| (w.item, w.score)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::TrainConfig;

    #[test]
    fn init_is_deterministic() {
        let a = init_model(5, 7, 4, 99, 0.01);
        let b = init_model(5, 7, 4, 99, 0.01);
        assert_eq!(a.user_factors, b.user_factors);
        assert_eq!(a.item_factors, b.item_factors);
        let c = init_model(5, 7, 4, 100, 0.01);
        assert_ne!(a.user_factors, c.user_factors);
    }

    #[test]
    fn default_factor_count_is_32() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.factors, 32);
        let m = init_model(2, 3, cfg.factors, cfg.seed, cfg.init_scale);
        assert_eq!(m.user_factors.len(), 2 * 32);
        assert_eq!(m.item_factors.len(), 3 * 32);
    }

    #[test]
    fn init_sample_mean_is_near_zero() {
        let scale = 0.01;
        let m = init_model(500, 500, 100, 7, scale);
        let n = m.user_factors.len() + m.item_factors.len();
        assert_eq!(n, 100_000);
        let mean: f64 =
            m.user_factors.iter().chain(&m.item_factors).sum::<f64>() / n as f64;
        let std_err = scale / (n as f64).sqrt();
        assert!(
            mean.abs() <= 5.0 * std_err,
            "sample mean {mean} beyond 5 standard errors ({std_err})"
        );
    }

    #[test]
    fn predict_is_the_dot_product() {
        let mut m = FactorModel::zeros(1, 1, 2);
        m.user_factors = alloc::vec![1.0, 0.0];
        m.item_factors = alloc::vec![0.5, 2.0];
        assert_eq!(predict(&m, 0, 0), 0.5);
    }

    #[test]
    fn zero_item_vector_scores_zero_for_all_users() {
        let mut m = FactorModel::zeros(3, 1, 4);
        for v in m.user_factors.iter_mut() {
            *v = 1.25;
        }
        for u in 0..3 {
            assert_eq!(predict(&m, u, 0), 0.0);
        }
    }

    #[test]
    fn predict_matches_naive_summation_oracle() {
        let mut rng_state = 0xDEADBEEFu64;
        let mut next_f = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state % 2000) as f64 / 1000.0 - 1.0
        };
        for _ in 0..100 {
            let k = 8;
            let mut m = FactorModel::zeros(1, 1, k);
            for v in m.user_factors.iter_mut() {
                *v = next_f();
            }
            for v in m.item_factors.iter_mut() {
                *v = next_f();
            }
            let mut expected = 0.0;
            for f in 0..k {
                expected += m.user_factors[f] * m.item_factors[f];
            }
            let got = predict(&m, 0, 0);
            let denom = expected.abs().max(1e-30);
            assert!(((got - expected) / denom).abs() <= 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn predict_panics_out_of_range() {
        let m = FactorModel::zeros(1, 1, 2);
        predict(&m, 0, 5);
    }

    struct TableScorer(Vec<f64>);

    impl Scorer for TableScorer {
        fn num_items(&self) -> usize {
            self.0.len()
        }
        fn score(&self, _user: usize, item: u32) -> f64 {
            self.0[item as usize]
        }
    }

    #[test]
    fn rank_returns_top_k_descending() {
        let s = TableScorer(alloc::vec![0.1, 0.9, 0.5]);
        let top = rank_items(&s, 0, &[], 2);
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), alloc::vec![1, 2]);
    }

    #[test]
    fn rank_respects_exclusions() {
        let s = TableScorer(alloc::vec![0.1, 0.9, 0.5]);
        let top = rank_items(&s, 0, &[1], 2);
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), alloc::vec![2, 0]);
    }

    #[test]
    fn rank_breaks_ties_by_ascending_index() {
        let mut scores = alloc::vec![0.0; 10];
        scores[4] = 1.0;
        scores[7] = 1.0;
        let s = TableScorer(scores);
        let top = rank_items(&s, 0, &[], 3);
        assert_eq!(top[0].0, 4);
        assert_eq!(top[1].0, 7);
    }

    #[test]
    fn rank_returns_all_when_candidates_fall_short() {
        let s = TableScorer(alloc::vec![0.3, 0.2]);
        let top = rank_items(&s, 0, &[0], 5);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].0, 1);
    }
}
