//! Leave-one-out evaluation: splitting, HR@k / NDCG@k, popularity baseline,
//! and popularity-skewness analytics.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::model::{rank_items, Scorer};
use crate::types::{Behavior, FeedbackDataset};

/// Leave-one-out partition of a dataset's purchases.
///
/// The test item is each user's strictly latest purchase (timestamp ties go
/// to the highest item index); the validation item is drawn uniformly from
/// the remaining purchases; everything else, and all views, stay in `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: FeedbackDataset,
    /// Validation purchase per user, indexed by user.
    pub validation: Vec<u32>,
    /// Held-out test purchase per user, indexed by user.
    pub test: Vec<u32>,
}

/// Split failure: some user cannot give up two purchases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitError {
    pub user: usize,
    pub purchases: usize,
}

impl fmt::Display for SplitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "user {} has {} purchases; leave-one-out needs at least 3",
            self.user, self.purchases
        )
    }
}

impl core::error::Error for SplitError {}

/// Holds out the latest purchase of every user for testing and one random
/// purchase for validation. Deterministic for a fixed RNG state.
pub fn split_leave_one_out<R: Rng>(
    data: &FeedbackDataset,
    rng: &mut R,
) -> Result<Splits, SplitError> {
    let mut train = data.clone();
    let mut validation = Vec::with_capacity(data.num_users);
    let mut test = Vec::with_capacity(data.num_users);

    for user in 0..data.num_users {
        let items = &data.purchases[user];
        let stamps = &data.purchase_timestamps[user];
        if items.len() < 3 {
            return Err(SplitError { user, purchases: items.len() });
        }

        // Latest purchase; ties resolved toward the higher item index.
        let mut test_pos = 0;
        for idx in 1..items.len() {
            let later = stamps[idx] > stamps[test_pos]
                || (stamps[idx] == stamps[test_pos] && items[idx] > items[test_pos]);
            if later {
                test_pos = idx;
            }
        }

        let mut val_pos = rng.random_range(0..items.len() - 1);
        if val_pos >= test_pos {
            val_pos += 1;
        }

        test.push(items[test_pos]);
        validation.push(items[val_pos]);

        let (hi, lo) = (test_pos.max(val_pos), test_pos.min(val_pos));
        train.purchases[user].remove(hi);
        train.purchases[user].remove(lo);
        train.purchase_timestamps[user].remove(hi);
        train.purchase_timestamps[user].remove(lo);
    }

    Ok(Splits { train, validation, test })
}

/// 1 if the held-out item ranked at `position` (1-based) within the top `k`,
/// else 0. `None` is a miss.
pub fn hr_at_k(position: Option<usize>, k: usize) -> f64 {
    debug_assert!(k >= 1);
    match position {
        Some(p) => {
            debug_assert!(p >= 1);
            if p <= k {
                1.0
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

/// Discounted gain of a single relevant item at `position` (1-based):
/// `1 / log2(position + 1)` within the top `k`, else 0.
pub fn ndcg_at_k(position: Option<usize>, k: usize) -> f64 {
    debug_assert!(k >= 1);
    match position {
        Some(p) if p <= k => {
            debug_assert!(p >= 1);
            1.0 / libm::log2((p + 1) as f64)
        }
        _ => 0.0,
    }
}

/// Ranks every user's candidates (all items except the user's training and
/// validation purchases — viewed items stay in) and averages HR@k and
/// NDCG@k of the test item's position over all users.
pub fn evaluate<S: Scorer>(scorer: &S, splits: &Splits, k: usize) -> (f64, f64) {
    assert!(k >= 1);
    let data = &splits.train;
    let mut hr_sum = 0.0;
    let mut ndcg_sum = 0.0;

    for user in 0..data.num_users {
        let mut excluded: Vec<u32> = data.purchases[user].clone();
        let val = splits.validation[user];
        if let Err(pos) = excluded.binary_search(&val) {
            excluded.insert(pos, val);
        }

        let ranked = rank_items(scorer, user, &excluded, k);
        let position = ranked
            .iter()
            .position(|&(item, _)| item == splits.test[user])
            .map(|p| p + 1);

        hr_sum += hr_at_k(position, k);
        ndcg_sum += ndcg_at_k(position, k);
    }

    let m = data.num_users as f64;
    (hr_sum / m, ndcg_sum / m)
}

/// Non-personalized popularity scorer: an item's score is its training
/// purchase count, identical for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityModel {
    counts: Vec<f64>,
}

impl Scorer for PopularityModel {
    fn num_items(&self) -> usize {
        self.counts.len()
    }

    fn score(&self, _user: usize, item: u32) -> f64 {
        self.counts[item as usize]
    }
}

/// Builds the popularity baseline from training purchase counts; evaluation
/// goes through the same [`evaluate`] path as any factor model.
pub fn popularity_baseline(train: &FeedbackDataset) -> PopularityModel {
    let mut counts = alloc::vec![0.0; train.num_items];
    for user in 0..train.num_users {
        for &item in &train.purchases[user] {
            counts[item as usize] += 1.0;
        }
    }
    PopularityModel { counts }
}

/// Cumulative interaction-share curve over items sorted by decreasing
/// popularity: point `(x, y)` means the top `x` fraction of items carries a
/// `y` share of the interactions. One point per item rank; the curve is
/// non-decreasing, discretely concave, and ends at `(1, 1)`.
pub fn skewness_curve(data: &FeedbackDataset, behavior: Behavior) -> Vec<(f64, f64)> {
    let mut counts = alloc::vec![0u64; data.num_items];
    for user in 0..data.num_users {
        let items = match behavior {
            Behavior::Purchase => &data.purchases[user],
            Behavior::View => &data.views[user],
        };
        for &item in items {
            counts[item as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Vec::new();
    }

    counts.sort_unstable_by(|a, b| b.cmp(a));
    let n = counts.len() as f64;
    let mut cumulative = 0u64;
    counts
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            cumulative += c;
            ((idx + 1) as f64 / n, cumulative as f64 / total as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;
    use crate::types::FactorModel;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_with_timestamps(
        purchases: Vec<(Vec<u32>, Vec<i64>)>,
        views: Vec<Vec<u32>>,
        num_items: usize,
    ) -> FeedbackDataset {
        let num_users = purchases.len();
        let vts = views.iter().map(|s| vec![0; s.len()]).collect();
        FeedbackDataset {
            num_users,
            num_items,
            purchases: purchases.iter().map(|(i, _)| i.clone()).collect(),
            purchase_timestamps: purchases.iter().map(|(_, t)| t.clone()).collect(),
            views,
            view_timestamps: vts,
            timestamps_day_granular: false,
        }
    }

    #[test]
    fn split_holds_out_latest_purchase() {
        // Items a=0, b=1, c=2 at timestamps 5, 9, 1: test must be b.
        let data = dataset_with_timestamps(
            vec![(vec![0, 1, 2], vec![5, 9, 1])],
            vec![vec![]],
            4,
        );
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let splits = split_leave_one_out(&data, &mut rng).unwrap();
            assert_eq!(splits.test[0], 1);
            assert!(splits.validation[0] == 0 || splits.validation[0] == 2);
            assert_eq!(splits.train.purchases[0].len(), 1);
        }
    }

    #[test]
    fn split_breaks_timestamp_ties_by_item_index() {
        let data = dataset_with_timestamps(
            vec![(vec![0, 1, 2], vec![9, 9, 1])],
            vec![vec![]],
            4,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let splits = split_leave_one_out(&data, &mut rng).unwrap();
        assert_eq!(splits.test[0], 1);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let data = dataset_with_timestamps(
            vec![
                (vec![0, 1, 2, 3], vec![1, 2, 3, 4]),
                (vec![1, 2, 4], vec![7, 6, 5]),
            ],
            vec![vec![]; 2],
            6,
        );
        let s1 = split_leave_one_out(&data, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let s2 = split_leave_one_out(&data, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn split_partitions_purchases() {
        let data = dataset_with_timestamps(
            vec![
                (vec![0, 1, 2, 3, 4], vec![3, 1, 4, 1, 5]),
                (vec![2, 3, 5], vec![9, 2, 6]),
            ],
            vec![vec![5], vec![]],
            8,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let splits = split_leave_one_out(&data, &mut rng).unwrap();
        for user in 0..data.num_users {
            let mut rebuilt = splits.train.purchases[user].clone();
            rebuilt.push(splits.validation[user]);
            rebuilt.push(splits.test[user]);
            rebuilt.sort_unstable();
            assert_eq!(rebuilt, data.purchases[user]);
            assert_ne!(splits.validation[user], splits.test[user]);
        }
        // Views stay whole.
        assert_eq!(splits.train.views, data.views);
    }

    #[test]
    fn split_rejects_users_with_too_few_purchases() {
        let data = dataset_with_timestamps(
            vec![(vec![0, 1, 2], vec![1, 2, 3]), (vec![3, 4], vec![1, 2])],
            vec![vec![]; 2],
            6,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            split_leave_one_out(&data, &mut rng).unwrap_err(),
            SplitError { user: 1, purchases: 2 }
        );
    }

    #[test]
    fn hr_boundary_cases() {
        assert_eq!(hr_at_k(Some(1), 100), 1.0);
        assert_eq!(hr_at_k(None, 100), 0.0);
        assert_eq!(hr_at_k(Some(101), 100), 0.0);
        assert_eq!(hr_at_k(Some(100), 100), 1.0);
    }

    #[test]
    fn ndcg_known_positions() {
        assert_eq!(ndcg_at_k(Some(1), 100), 1.0);
        assert_eq!(ndcg_at_k(Some(3), 100), 0.5);
        assert_eq!(ndcg_at_k(None, 100), 0.0);
        assert_eq!(ndcg_at_k(Some(101), 100), 0.0);
    }

    #[test]
    fn hr_dominates_ndcg() {
        for p in 1..200 {
            for k in [1, 10, 100] {
                assert!(hr_at_k(Some(p), k) >= ndcg_at_k(Some(p), k));
            }
        }
    }

    fn simple_splits() -> Splits {
        let data = dataset_with_timestamps(
            vec![
                (vec![0, 1, 2], vec![1, 2, 3]),
                (vec![1, 3, 4], vec![1, 2, 3]),
            ],
            vec![vec![], vec![]],
            6,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        split_leave_one_out(&data, &mut rng).unwrap()
    }

    #[test]
    fn evaluate_averages_over_users() {
        let splits = simple_splits();
        // Score the first user's test item highest; bury the second user's.
        let mut model = FactorModel::zeros(2, 6, 1);
        model.user_factors = vec![1.0, 1.0];
        model.item_factors[splits.test[0] as usize] = 10.0;
        model.item_factors[splits.test[1] as usize] = -10.0;
        let (hr, ndcg) = evaluate(&model, &splits, 1);
        assert_eq!(hr, 0.5);
        assert_eq!(ndcg, 0.5);
    }

    #[test]
    fn evaluate_hits_when_test_item_maximal() {
        let splits = simple_splits();
        let mut model = FactorModel::zeros(2, 6, 2);
        for u in 0..2 {
            model.user_row_mut(u).copy_from_slice(&[1.0, u as f64]);
            let t = splits.test[u] as usize;
            model.item_row_mut(t).copy_from_slice(&[100.0, 0.0]);
        }
        let (hr, _) = evaluate(&model, &splits, 100);
        assert_eq!(hr, 1.0);
    }

    /// Full-table, full-sort reference evaluator.
    fn brute_force_evaluate<S: Scorer>(scorer: &S, splits: &Splits, k: usize) -> (f64, f64) {
        let data = &splits.train;
        let mut hr_sum = 0.0;
        let mut ndcg_sum = 0.0;
        for user in 0..data.num_users {
            let mut table: Vec<(u32, f64)> = (0..data.num_items as u32)
                .filter(|&i| {
                    i != splits.validation[user] && !data.has_purchased(user, i)
                })
                .map(|i| (i, scorer.score(user, i)))
                .collect();
            table.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let position = table
                .iter()
                .position(|&(item, _)| item == splits.test[user])
                .map(|p| p + 1)
                .filter(|&p| p <= k);
            hr_sum += hr_at_k(position, k);
            ndcg_sum += ndcg_at_k(position, k);
        }
        let m = data.num_users as f64;
        (hr_sum / m, ndcg_sum / m)
    }

    #[test]
    fn evaluate_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for round in 0..25 {
            let num_users = rng.random_range(2..=10usize);
            let num_items = rng.random_range(8..=30usize);
            let mut purchases = Vec::new();
            for _ in 0..num_users {
                let count = rng.random_range(3..=5usize);
                let mut items: Vec<u32> = Vec::new();
                while items.len() < count {
                    let item = rng.random_range(0..num_items as u32);
                    if let Err(pos) = items.binary_search(&item) {
                        items.insert(pos, item);
                    }
                }
                let stamps: Vec<i64> = (0..count as i64).map(|t| t * 7 + 1).collect();
                purchases.push((items, stamps));
            }
            let data = dataset_with_timestamps(purchases, vec![vec![]; num_users], num_items);
            let splits = split_leave_one_out(&data, &mut rng).unwrap();
            let model = init_model(num_users, num_items, 4, 1000 + round, 0.5);
            for k in [1, 5, num_items] {
                let fast = evaluate(&model, &splits, k);
                let slow = brute_force_evaluate(&model, &splits, k);
                assert_eq!(fast, slow, "k={k} round={round}");
            }
        }
    }

    #[test]
    fn evaluate_with_untruncated_k_always_hits() {
        let splits = simple_splits();
        let model = init_model(2, 6, 3, 5, 0.1);
        let (hr, _) = evaluate(&model, &splits, splits.train.num_items);
        assert_eq!(hr, 1.0);
    }

    #[test]
    fn evaluate_depends_only_on_score_order() {
        struct Shifted<'a>(&'a FactorModel, f64, f64);
        impl Scorer for Shifted<'_> {
            fn num_items(&self) -> usize {
                self.0.num_items
            }
            fn score(&self, user: usize, item: u32) -> f64 {
                self.1 * self.0.score(user, item) + self.2
            }
        }
        let splits = simple_splits();
        let model = init_model(2, 6, 3, 9, 0.3);
        let base = evaluate(&model, &splits, 3);
        let transformed = evaluate(&Shifted(&model, 4.0, 11.0), &splits, 3);
        assert_eq!(base, transformed);
    }

    #[test]
    fn popularity_ranks_by_purchase_count() {
        let data = dataset_with_timestamps(
            vec![
                (vec![0, 1], vec![1, 2]),
                (vec![0, 2], vec![1, 2]),
                (vec![0, 1], vec![1, 2]),
            ],
            vec![vec![]; 3],
            4,
        );
        let pop = popularity_baseline(&data);
        let top = rank_items(&pop, 0, &[], 4);
        // Counts: item0=3, item1=2, item2=1, item3=0.
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn popularity_equal_counts_tie_by_index() {
        let data = dataset_with_timestamps(
            vec![(vec![1, 3], vec![1, 2])],
            vec![vec![]],
            5,
        );
        let pop = popularity_baseline(&data);
        let top = rank_items(&pop, 0, &[], 5);
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 3, 0, 2, 4]);
    }

    #[test]
    fn popularity_hits_most_purchased_test_item() {
        // Item 7 is the top-purchased training item and user 0's held-out
        // test item; the baseline must rank it first for user 0.
        let train = dataset_with_timestamps(
            vec![
                (vec![0], vec![1]),
                (vec![1, 7], vec![1, 2]),
                (vec![2, 7], vec![1, 2]),
            ],
            vec![vec![]; 3],
            8,
        );
        let splits = Splits {
            train: train.clone(),
            validation: vec![3, 4, 5],
            test: vec![7, 6, 6],
        };
        let pop = popularity_baseline(&train);
        let ranked = rank_items(&pop, 0, &[0, 3], 1);
        assert_eq!(ranked[0].0, 7);
        let (hr, ndcg) = evaluate(&pop, &splits, 1);
        // Only user 0 hits at k=1.
        assert_eq!(hr, 1.0 / 3.0);
        assert_eq!(ndcg, 1.0 / 3.0);
    }

    fn dataset_with_counts(counts: &[usize]) -> FeedbackDataset {
        // One purchase per (synthetic user, item) occurrence.
        let num_items = counts.len();
        let num_users = *counts.iter().max().unwrap();
        let mut purchases = vec![Vec::new(); num_users];
        let mut stamps = vec![Vec::new(); num_users];
        for (item, &c) in counts.iter().enumerate() {
            for u in 0..c {
                purchases[u].push(item as u32);
                stamps[u].push(1);
            }
        }
        FeedbackDataset {
            num_users,
            num_items,
            purchases,
            purchase_timestamps: stamps,
            views: vec![Vec::new(); num_users],
            view_timestamps: vec![Vec::new(); num_users],
            timestamps_day_granular: false,
        }
    }

    #[test]
    fn skewness_top_third_of_items() {
        let data = dataset_with_counts(&[5, 3, 2]);
        let curve = skewness_curve(&data, Behavior::Purchase);
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0], (1.0 / 3.0, 0.5));
        assert_eq!(curve[2], (1.0, 1.0));
    }

    #[test]
    fn skewness_uniform_counts_follow_diagonal() {
        let data = dataset_with_counts(&[4, 4, 4, 4]);
        let curve = skewness_curve(&data, Behavior::Purchase);
        for (x, y) in curve {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn skewness_reconstructs_planted_concentration() {
        // 100 items; the single top item (top 1%) carries half of all
        // purchases.
        let mut counts = vec![0usize; 100];
        counts[0] = 50;
        for item in 1..=50 {
            counts[item] = 1;
        }
        let data = dataset_with_counts(&counts);
        let curve = skewness_curve(&data, Behavior::Purchase);
        let at_one_percent = curve.iter().find(|(x, _)| *x >= 0.01).unwrap();
        assert_eq!(at_one_percent.1, 0.5);
    }

    #[test]
    fn skewness_curve_is_monotone_and_concave() {
        let data = dataset_with_counts(&[9, 7, 7, 2, 1, 1, 0]);
        let curve = skewness_curve(&data, Behavior::Purchase);
        assert_eq!(curve.last().unwrap().1, 1.0);
        let mut prev_y = 0.0;
        let mut prev_gain = f64::INFINITY;
        for &(_, y) in &curve {
            let gain = y - prev_y;
            assert!(y >= prev_y);
            assert!(gain <= prev_gain + 1e-12, "discrete concavity violated");
            prev_gain = gain;
            prev_y = y;
        }
    }
}
