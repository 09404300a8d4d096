use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{DiffusionRecord, ItemId, RecordStore, Span, UserId};

/// Width of a user feature row: share-out count, receive count, forward rate,
/// purchase count, mean turnover, purchase-after-receive rate.
pub const USER_FEATURES: usize = 6;

/// Per-user habit features, counts log-scaled and normalized into [0, 1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserFeatureTable {
    rows: HashMap<UserId, [f64; USER_FEATURES]>,
}

impl UserFeatureTable {
    pub fn from_store(store: &RecordStore) -> Self {
        #[derive(Default)]
        struct Acc {
            shares: u64,
            receives: u64,
            purchases: u64,
            turnover: f64,
        }
        let mut acc: HashMap<UserId, Acc> = HashMap::new();
        let mut first_receive: HashMap<(UserId, ItemId), i64> = HashMap::new();
        let mut sent: HashSet<(UserId, ItemId)> = HashSet::new();
        for r in &store.diffusion {
            acc.entry(r.sender_id).or_default().shares += 1;
            acc.entry(r.receiver_id).or_default().receives += 1;
            sent.insert((r.sender_id, r.item_id));
            first_receive
                .entry((r.receiver_id, r.item_id))
                .and_modify(|t| *t = (*t).min(r.timestamp))
                .or_insert(r.timestamp);
        }
        let mut bought_after: HashSet<(UserId, ItemId)> = HashSet::new();
        for p in &store.purchases {
            let a = acc.entry(p.buyer_id).or_default();
            a.purchases += 1;
            a.turnover += p.turnover;
            if let Some(&t) = first_receive.get(&(p.buyer_id, p.item_id)) {
                if p.timestamp >= t {
                    bought_after.insert((p.buyer_id, p.item_id));
                }
            }
        }
        let mut received_items: HashMap<UserId, (u64, u64, u64)> = HashMap::new();
        for &(user, item) in first_receive.keys() {
            let e = received_items.entry(user).or_default();
            e.0 += 1;
            if sent.contains(&(user, item)) {
                e.1 += 1;
            }
            if bought_after.contains(&(user, item)) {
                e.2 += 1;
            }
        }

        let log_max = |f: &dyn Fn(&Acc) -> f64| -> f64 {
            acc.values()
                .map(|a| f(a).ln_1p())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE)
        };
        let mean_turnover = |a: &Acc| {
            if a.purchases > 0 {
                a.turnover / a.purchases as f64
            } else {
                0.0
            }
        };
        let max_share = log_max(&|a| a.shares as f64);
        let max_recv = log_max(&|a| a.receives as f64);
        let max_buy = log_max(&|a| a.purchases as f64);
        let max_turn = log_max(&mean_turnover);

        let rows = acc
            .iter()
            .map(|(&user, a)| {
                let (recv_items, forwarded, converted) = received_items.get(&user).copied().unwrap_or_default();
                let rate = |n: u64| {
                    if recv_items > 0 {
                        n as f64 / recv_items as f64
                    } else {
                        0.0
                    }
                };
                let row = [
                    (a.shares as f64).ln_1p() / max_share,
                    (a.receives as f64).ln_1p() / max_recv,
                    rate(forwarded),
                    (a.purchases as f64).ln_1p() / max_buy,
                    mean_turnover(a).ln_1p() / max_turn,
                    rate(converted),
                ];
                (user, row)
            })
            .collect();
        UserFeatureTable { rows }
    }

    /// Unknown users get an all-zero row.
    pub fn row(&self, user: UserId) -> [f64; USER_FEATURES] {
        self.rows.get(&user).copied().unwrap_or([0.0; USER_FEATURES])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One item's diffusion graph for one week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSnapshot {
    pub week: usize,
    /// Sorted user ids.
    pub nodes: Vec<UserId>,
    /// `(sender, receiver)` as positions into `nodes`; parallel edges kept.
    pub edges: Vec<(usize, usize)>,
    /// `nodes.len() × USER_FEATURES`, row-major, aligned with `nodes`.
    pub user_features: Vec<f64>,
}

impl DiffusionSnapshot {
    pub const fn empty(week: usize) -> Self {
        DiffusionSnapshot {
            week,
            nodes: Vec::new(),
            edges: Vec::new(),
            user_features: Vec::new(),
        }
    }

    /// Number of distinct users involved this week.
    pub fn scale(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = (UserId, UserId)> + '_ {
        self.edges.iter().map(|&(s, r)| (self.nodes[s], self.nodes[r]))
    }

    pub fn feature_row(&self, node: usize) -> &[f64] {
        &self.user_features[node * USER_FEATURES..(node + 1) * USER_FEATURES]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicDiffusionGraph {
    pub item_id: ItemId,
    pub snapshots: Vec<DiffusionSnapshot>,
}

impl DynamicDiffusionGraph {
    pub fn scales(&self) -> Vec<usize> {
        self.snapshots.iter().map(DiffusionSnapshot::scale).collect()
    }
}

/// Bins one item's records into one snapshot per week of `span`.
///
/// Records of other items and out-of-span records are ignored.
pub fn build_snapshots(
    records: &[DiffusionRecord],
    item_id: ItemId,
    span: Span,
    features: &UserFeatureTable,
) -> DynamicDiffusionGraph {
    let mut weekly: Vec<Vec<&DiffusionRecord>> = vec![Vec::new(); span.weeks];
    for r in records.iter().filter(|r| r.item_id == item_id) {
        if let Some(w) = span.week_of(r.timestamp) {
            weekly[w].push(r);
        }
    }
    let snapshots = weekly
        .into_iter()
        .enumerate()
        .map(|(week, mut recs)| {
            recs.sort_by_key(|r| (r.timestamp, r.sender_id, r.receiver_id));
            let mut nodes: Vec<UserId> = recs.iter().flat_map(|r| [r.sender_id, r.receiver_id]).collect();
            nodes.sort_unstable();
            nodes.dedup();
            let pos = |u: UserId| nodes.binary_search(&u).expect("endpoint is a node");
            let edges = recs.iter().map(|r| (pos(r.sender_id), pos(r.receiver_id))).collect();
            let user_features = nodes.iter().flat_map(|&u| features.row(u)).collect();
            DiffusionSnapshot {
                week,
                nodes,
                edges,
                user_features,
            }
        })
        .collect();
    DynamicDiffusionGraph { item_id, snapshots }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::WEEK_SECONDS;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn rec(item: u64, s: u64, r: u64, t: i64) -> DiffusionRecord {
        DiffusionRecord {
            item_id: item,
            sender_id: s,
            receiver_id: r,
            timestamp: t,
        }
    }

    #[test]
    fn no_records_gives_empty_snapshots() {
        let g = build_snapshots(&[], 1, Span::new(0, 3), &UserFeatureTable::default());
        assert_eq!(g.snapshots.len(), 3);
        assert_eq!(g.scales(), vec![0, 0, 0]);
        assert!(g.snapshots.iter().all(DiffusionSnapshot::is_empty));
    }

    #[test]
    fn three_users_one_week() {
        // users a=1, b=2, c=3
        let recs = [rec(5, 1, 2, 10), rec(5, 2, 3, 20), rec(5, 1, 3, 30)];
        let g = build_snapshots(&recs, 5, Span::new(0, 2), &UserFeatureTable::default());
        assert_eq!(g.scales(), vec![3, 0]);
        assert_eq!(g.snapshots[0].nodes, vec![1, 2, 3]);
        assert_eq!(g.snapshots[0].user_features.len(), 3 * USER_FEATURES);
    }

    #[test]
    fn other_items_are_ignored() {
        let recs = [rec(5, 1, 2, 10), rec(6, 3, 4, 10)];
        let g = build_snapshots(&recs, 5, Span::new(0, 1), &UserFeatureTable::default());
        assert_eq!(g.scales(), vec![2]);
    }

    proptest! {
        /// Multiset of edges and set of users match a brute-force recount.
        #[test]
        fn snapshot_matches_bruteforce_recount(
            raw in proptest::collection::vec((0u64..6, 0u64..6, 0i64..3 * WEEK_SECONDS), 0..60)
        ) {
            let recs: Vec<_> = raw.iter().filter(|(s, r, _)| s != r).map(|&(s, r, t)| rec(9, s, r, t)).collect();
            let span = Span::new(0, 3);
            let g = build_snapshots(&recs, 9, span, &UserFeatureTable::default());
            for (w, snap) in g.snapshots.iter().enumerate() {
                let in_week: Vec<_> = recs.iter().filter(|r| (r.timestamp / WEEK_SECONDS) as usize == w).collect();
                let users: BTreeSet<u64> = in_week.iter().flat_map(|r| [r.sender_id, r.receiver_id]).collect();
                prop_assert_eq!(snap.scale(), users.len());
                let mut expected: Vec<(u64, u64)> = in_week.iter().map(|r| (r.sender_id, r.receiver_id)).collect();
                let mut got: Vec<(u64, u64)> = snap.edge_ids().collect();
                expected.sort();
                got.sort();
                prop_assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn duplicate_edges_kept_users_counted_once() {
        let recs = [rec(1, 10, 20, 5), rec(1, 10, 20, 6), rec(1, 10, 20, 7)];
        let g = build_snapshots(&recs, 1, Span::new(0, 1), &UserFeatureTable::default());
        assert_eq!(g.snapshots[0].edges, vec![(0, 1); 3]);
        assert_eq!(g.scales(), vec![2]);
    }

    #[test]
    fn user_features_are_normalized() {
        use crate::data::{Category, ItemInfo, PurchaseRecord};
        let items = vec![ItemInfo {
            item_id: 1,
            name: "x".into(),
            price: 10.0,
            category: Category {
                high: "a".into(),
                mid: "b".into(),
                low: "c".into(),
            },
        }];
        let diffusion = vec![rec(1, 10, 20, 5), rec(1, 20, 30, 6), rec(1, 10, 30, 7)];
        let purchases = vec![PurchaseRecord {
            buyer_id: 30,
            item_id: 1,
            turnover: 10.0,
            timestamp: 8,
        }];
        let (store, _) = RecordStore::from_records(items, diffusion, purchases, Span::new(0, 1)).unwrap();
        let table = UserFeatureTable::from_store(&store);
        assert_eq!(table.len(), 3);
        // 10 shared twice: the top sharer.
        assert_eq!(table.row(10)[0], 1.0);
        // 20 received and forwarded the item.
        assert_eq!(table.row(20)[2], 1.0);
        // 30 bought after receiving.
        assert_eq!(table.row(30)[5], 1.0);
        assert_eq!(table.row(30)[3], 1.0);
        assert_eq!(table.row(999), [0.0; USER_FEATURES]);
        for u in [10, 20, 30] {
            assert!(table.row(u).iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
