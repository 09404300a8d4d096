use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ItemId;

/// How the observation-window rank condition is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Rank by sales summed over all observation weeks.
    #[default]
    Aggregate,
    /// Rank each observation week separately; the item must miss the cutoff in every one.
    PerWeek,
}

/// Parameters of the rising-star rule for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRule {
    pub obs_weeks: usize,
    pub horizon_weeks: usize,
    pub q_lo: f64,
    pub q_hi: f64,
    pub rank_mode: RankMode,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelOutcome {
    /// Aligned with the input items.
    pub labels: Vec<bool>,
    pub warnings: Vec<String>,
}

impl LabelOutcome {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }
}

/// Size of the top-`q` slice of an `n`-item category, never below one.
pub fn top_cutoff(q: f64, n: usize) -> usize {
    // The tolerance keeps 0.003 * 1000 from rounding up to 4.
    ((q * n as f64 - 1e-9).ceil() as usize).max(1)
}

/// 1-based ranks, highest score first, ties by item id ascending.
fn ranks(members: &[usize], ids: &[ItemId], score: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..members.len()).collect();
    let scores: Vec<f64> = members.iter().map(|&i| score(i)).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids[members[a]].cmp(&ids[members[b]]),
        o => o,
    });
    let mut rank = vec![0; members.len()];
    for (r, &pos) in order.iter().enumerate() {
        rank[pos] = r + 1;
    }
    rank
}

/// Labels every item for the window whose observation weeks start at `start`.
///
/// `sales[i][w]` is item `i`'s sales in week `w`; `category[i]` its high-level
/// category. Items are ranked only against their own category.
pub fn label_rising_stars(
    ids: &[ItemId],
    category: &[usize],
    sales: &[Vec<f64>],
    start: usize,
    rule: &LabelRule,
) -> LabelOutcome {
    let obs = start..start + rule.obs_weeks;
    let horizon = obs.end..obs.end + rule.horizon_weeks;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in category.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let min_size = (1.0 / rule.q_hi - 1e-9).ceil() as usize;
    let mut out = LabelOutcome {
        labels: vec![false; ids.len()],
        warnings: Vec::new(),
    };
    for (c, members) in &groups {
        let n = members.len();
        if n < min_size {
            out.warnings.push(format!(
                "category {c} has {n} items, fewer than the {min_size} needed for q_hi={}",
                rule.q_hi
            ));
        }
        let lo = top_cutoff(rule.q_lo, n);
        let hi = top_cutoff(rule.q_hi, n);
        let mut low_everywhere = vec![true; n];
        match rule.rank_mode {
            RankMode::Aggregate => {
                let r = ranks(members, ids, |i| sales[i][obs.clone()].iter().sum());
                for (k, flag) in low_everywhere.iter_mut().enumerate() {
                    *flag = r[k] > lo;
                }
            }
            RankMode::PerWeek => {
                for w in obs.clone() {
                    let r = ranks(members, ids, |i| sales[i][w]);
                    for (k, flag) in low_everywhere.iter_mut().enumerate() {
                        *flag &= r[k] > lo;
                    }
                }
            }
        }
        let r = ranks(members, ids, |i| sales[i][horizon.clone()].iter().sum());
        for (k, &i) in members.iter().enumerate() {
            out.labels[i] = low_everywhere[k] && r[k] <= hi;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rule(q_lo: f64, q_hi: f64) -> LabelRule {
        LabelRule {
            obs_weeks: 4,
            horizon_weeks: 2,
            q_lo,
            q_hi,
            rank_mode: RankMode::Aggregate,
        }
    }

    /// Rank of `i` counted directly: one plus everyone strictly ahead of it.
    fn brute_rank(i: usize, ids: &[u64], score: &[f64]) -> usize {
        1 + (0..ids.len())
            .filter(|&j| score[j] > score[i] || (score[j] == score[i] && ids[j] < ids[i]))
            .count()
    }

    /// ceil(permille * n / 1000) with integers only, floored at one.
    fn brute_cutoff(permille: usize, n: usize) -> usize {
        (permille * n).div_ceil(1000).max(1)
    }

    fn brute_labels(ids: &[u64], sales: &[Vec<f64>], lo: usize, hi: usize, mode: RankMode) -> Vec<bool> {
        let n = ids.len();
        let obs_sum: Vec<f64> = sales.iter().map(|s| s[0..4].iter().sum()).collect();
        let hor_sum: Vec<f64> = sales.iter().map(|s| s[4..6].iter().sum()).collect();
        let (cl, ch) = (brute_cutoff(lo, n), brute_cutoff(hi, n));
        (0..n)
            .map(|i| {
                let low = match mode {
                    RankMode::Aggregate => brute_rank(i, ids, &obs_sum) > cl,
                    RankMode::PerWeek => (0..4).all(|w| {
                        let col: Vec<f64> = sales.iter().map(|s| s[w]).collect();
                        brute_rank(i, ids, &col) > cl
                    }),
                };
                low && brute_rank(i, ids, &hor_sum) <= ch
            })
            .collect()
    }

    #[test]
    fn cutoffs() {
        assert_eq!(top_cutoff(0.003, 1000), 3);
        assert_eq!(top_cutoff(0.001, 1000), 1);
        assert_eq!(top_cutoff(0.001, 10), 1);
        assert_eq!(top_cutoff(0.10, 100), 10);
        assert_eq!(top_cutoff(0.05, 100), 5);
        assert_eq!(top_cutoff(0.003, 1001), 4);
    }

    /// 100 items, sales descending with id, so item k sits at rank k + 1.
    fn ladder() -> (Vec<u64>, Vec<Vec<f64>>) {
        let ids: Vec<u64> = (0..100).collect();
        let sales = ids.iter().map(|&k| vec![(100 - k) as f64; 6]).collect();
        (ids, sales)
    }

    #[test]
    fn twentieth_in_obs_third_in_horizon_is_star() {
        let (ids, mut sales) = ladder();
        // item 19 ranks 20th while observed; boost it to 3rd in the horizon.
        sales[19][4] = 98.5;
        sales[19][5] = 98.5;
        let out = label_rising_stars(&ids, &[0; 100], &sales, 0, &rule(0.10, 0.05));
        assert!(out.labels[19]);
        assert_eq!(out.positives(), 1);
        assert_eq!(out.labels, brute_labels(&ids, &sales, 100, 50, RankMode::Aggregate));
    }

    #[test]
    fn fifth_in_obs_is_never_star() {
        let (ids, mut sales) = ladder();
        sales[4][4] = 1e6;
        sales[4][5] = 1e6;
        let out = label_rising_stars(&ids, &[0; 100], &sales, 0, &rule(0.10, 0.05));
        assert!(!out.labels[4]);
    }

    #[test]
    fn small_category_warns() {
        let (ids, sales) = ladder();
        let out = label_rising_stars(&ids, &[0; 100], &sales, 0, &rule(0.003, 0.001));
        assert_eq!(out.warnings.len(), 1);
        let out = label_rising_stars(&ids, &[0; 100], &sales, 0, &rule(0.10, 0.05));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn categories_rank_separately() {
        // Two categories; each has one riser that only wins inside its own category.
        let ids: Vec<u64> = (0..40).collect();
        let cat: Vec<usize> = (0..40).map(|i| i / 20).collect();
        let mut sales: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(20 - i % 20) as f64 * (1 + 10 * (i / 20)) as f64; 6])
            .collect();
        sales[10][4] = 1000.0;
        sales[30][4] = 1000.0;
        let out = label_rising_stars(&ids, &cat, &sales, 0, &rule(0.10, 0.05));
        assert!(out.labels[10] && out.labels[30]);
        assert_eq!(out.positives(), 2);
    }

    fn category() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..120).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec((0u32..8).prop_map(f64::from), 6), n)
        })
    }

    proptest! {
        #[test]
        fn matches_bruteforce_oracle(
            sales in category(),
            lo in 1usize..300,
            hi_frac in 1usize..100,
            per_week in any::<bool>(),
        ) {
            let hi = (lo * hi_frac / 100).max(1);
            let ids: Vec<u64> = (0..sales.len() as u64).map(|k| k * 7 % 1009).collect();
            let mode = if per_week { RankMode::PerWeek } else { RankMode::Aggregate };
            let r = LabelRule { rank_mode: mode, ..rule(lo as f64 / 1000.0, hi as f64 / 1000.0) };
            let out = label_rising_stars(&ids, &vec![0; sales.len()], &sales, 0, &r);
            prop_assert_eq!(out.labels, brute_labels(&ids, &sales, lo, hi, mode));
        }

        #[test]
        fn invariant_to_uniform_scaling(sales in category(), scale in 1u32..1000) {
            let ids: Vec<u64> = (0..sales.len() as u64).collect();
            let scaled: Vec<Vec<f64>> = sales.iter().map(|s| s.iter().map(|x| x * f64::from(scale)).collect()).collect();
            let cat = vec![0; sales.len()];
            let a = label_rising_stars(&ids, &cat, &sales, 0, &rule(0.1, 0.03));
            let b = label_rising_stars(&ids, &cat, &scaled, 0, &rule(0.1, 0.03));
            prop_assert_eq!(a.labels, b.labels);
        }

        #[test]
        fn cutoff_and_per_mille_agree(permille in 1usize..1000, n in 1usize..5000) {
            prop_assert_eq!(top_cutoff(permille as f64 / 1000.0, n), brute_cutoff(permille, n));
        }
    }
}
