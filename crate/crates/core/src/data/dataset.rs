use std::collections::BTreeSet;

use serde::Serialize;

use super::{
    build_snapshots, label_rising_stars, temporal_split, DataConfig, DataError, DiffusionRecord, DiffusionSnapshot,
    DynamicDiffusionGraph, ItemId, ItemInfo, RecordStore, UserFeatureTable, Window, WindowSplit,
};

/// Full-span weekly series of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSeries {
    pub item_id: ItemId,
    /// Purchase count per week.
    pub sales: Vec<f64>,
    pub turnover: Vec<f64>,
    /// `weeks × feature_dim`, row-major.
    pub features: Vec<f64>,
}

impl ItemSeries {
    pub fn weeks(&self) -> usize {
        self.sales.len()
    }

    pub fn feature_row(&self, week: usize, dim: usize) -> &[f64] {
        &self.features[week * dim..(week + 1) * dim]
    }
}

/// One labeled (item, window) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    /// Position in `Dataset::items`.
    pub item: usize,
    pub window: Window,
    pub label: bool,
}

/// Model input for one sample: the `T` weeks right before the label horizon.
///
/// Weeks before the span start appear as `None` snapshots and zero feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemExample<'a> {
    pub item_id: ItemId,
    pub snapshots: Vec<Option<&'a DiffusionSnapshot>>,
    /// `T × feature_dim`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub label: bool,
}

impl ItemExample<'_> {
    pub fn steps(&self) -> usize {
        self.snapshots.len()
    }

    pub fn scales(&self) -> Vec<f64> {
        self.snapshots
            .iter()
            .map(|s| s.map_or(0.0, |s| s.scale() as f64))
            .collect()
    }

    pub fn feature_row(&self, t: usize) -> &[f64] {
        &self.features[t * self.feature_dim..(t + 1) * self.feature_dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub name: String,
    /// 1-based first observation week of each window.
    pub window_starts: Vec<usize>,
    pub samples: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub span_start: i64,
    pub weeks: usize,
    pub items: usize,
    pub users: usize,
    pub categories: Vec<String>,
    pub feature_dim: usize,
    pub splits: Vec<SplitSummary>,
    pub warnings: Vec<String>,
}

/// Everything the model, trainer and analytics need, built once from a record store.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DataConfig,
    /// Sorted by item id.
    pub items: Vec<ItemInfo>,
    /// Sorted high-level category names.
    pub categories: Vec<String>,
    pub category_of: Vec<usize>,
    pub series: Vec<ItemSeries>,
    pub graphs: Vec<DynamicDiffusionGraph>,
    pub feature_dim: usize,
    pub users: usize,
    pub split: WindowSplit,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn build(store: &RecordStore, config: &DataConfig) -> Result<Dataset, DataError> {
        config.validate()?;
        let span = config.span();
        let weeks = config.weeks;
        let split = temporal_split(weeks, config.obs_weeks, config.horizon_weeks)?;
        let items = store.items().to_vec();
        let categories: Vec<String> = items
            .iter()
            .map(|i| i.category.high.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let category_of: Vec<usize> = items
            .iter()
            .map(|i| categories.binary_search(&i.category.high).expect("category listed"))
            .collect();

        let mut by_item: Vec<Vec<DiffusionRecord>> = vec![Vec::new(); items.len()];
        let mut users: BTreeSet<u64> = BTreeSet::new();
        for r in &store.diffusion {
            let i = store.item_index(r.item_id).ok_or(DataError::UnknownItem {
                item_id: r.item_id,
                file: None,
                line: None,
            })?;
            by_item[i].push(*r);
            users.insert(r.sender_id);
            users.insert(r.receiver_id);
        }
        let mut sales = vec![vec![0.0; weeks]; items.len()];
        let mut turnover = vec![vec![0.0; weeks]; items.len()];
        for p in &store.purchases {
            users.insert(p.buyer_id);
            let (Some(i), Some(w)) = (store.item_index(p.item_id), span.week_of(p.timestamp)) else {
                continue;
            };
            sales[i][w] += 1.0;
            turnover[i][w] += p.turnover;
        }

        let user_features = UserFeatureTable::from_store(store);
        let graphs: Vec<DynamicDiffusionGraph> = items
            .iter()
            .zip(&by_item)
            .map(|(info, recs)| build_snapshots(recs, info.item_id, span, &user_features))
            .collect();

        let series = item_series(
            &items,
            &category_of,
            categories.len(),
            &sales,
            &turnover,
            &graphs,
            config,
        );
        let feature_dim = 3 + categories.len() + if config.diffusion_stats_in_features { 2 } else { 0 };

        let ids: Vec<ItemId> = items.iter().map(|i| i.item_id).collect();
        let rule = config.label_rule();
        let mut warnings = split.warnings.clone();
        let mut samples_for = |windows: &[Window]| -> Vec<Sample> {
            let mut out = Vec::new();
            for &window in windows {
                let labels = label_rising_stars(&ids, &category_of, &sales, window.start, &rule);
                for w in labels.warnings {
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
                out.extend(
                    labels
                        .labels
                        .iter()
                        .enumerate()
                        .map(|(item, &label)| Sample { item, window, label }),
                );
            }
            out
        };
        let train = samples_for(&split.train);
        let val = samples_for(&split.val);
        let test = samples_for(&split.test);

        Ok(Dataset {
            config: config.clone(),
            items,
            categories,
            category_of,
            series,
            graphs,
            feature_dim,
            users: users.len(),
            split,
            train,
            val,
            test,
            warnings,
        })
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|i| i.item_id).collect()
    }

    /// Model view of `sample` over the `steps` weeks preceding its horizon.
    pub fn example(&self, sample: &Sample, steps: usize) -> ItemExample<'_> {
        let end = sample.window.horizon_start();
        let series = &self.series[sample.item];
        let graph = &self.graphs[sample.item];
        let dim = self.feature_dim;
        let mut snapshots = Vec::with_capacity(steps);
        let mut features = Vec::with_capacity(steps * dim);
        for k in 0..steps {
            match (end + k).checked_sub(steps) {
                Some(w) => {
                    snapshots.push(Some(&graph.snapshots[w]));
                    features.extend_from_slice(series.feature_row(w, dim));
                }
                None => {
                    snapshots.push(None);
                    features.extend(std::iter::repeat_n(0.0, dim));
                }
            }
        }
        ItemExample {
            item_id: series.item_id,
            snapshots,
            features,
            feature_dim: dim,
            label: sample.label,
        }
    }

    /// Items labeled positive in any train, validation or test window.
    pub fn ever_positive(&self) -> Vec<bool> {
        let mut out = vec![false; self.items.len()];
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            out[s.item] |= s.label;
        }
        out
    }

    pub fn manifest(&self) -> DatasetManifest {
        let summary = |name: &str, windows: &[Window], samples: &[Sample]| SplitSummary {
            name: name.to_string(),
            window_starts: windows.iter().map(|w| w.start + 1).collect(),
            samples: samples.len(),
            positives: samples.iter().filter(|s| s.label).count(),
        };
        DatasetManifest {
            span_start: self.config.span_start,
            weeks: self.config.weeks,
            items: self.items.len(),
            users: self.users,
            categories: self.categories.clone(),
            feature_dim: self.feature_dim,
            splits: vec![
                summary("train", &self.split.train, &self.train),
                summary("val", &self.split.val, &self.val),
                summary("test", &self.split.test, &self.test),
            ],
            warnings: self.warnings.clone(),
        }
    }
}

/// Weekly item features: log price, log sales, log turnover (each scaled to
/// [0, 1] by its dataset maximum), category one-hot, then optional diffusion stats.
fn item_series(
    items: &[ItemInfo],
    category_of: &[usize],
    n_categories: usize,
    sales: &[Vec<f64>],
    turnover: &[Vec<f64>],
    graphs: &[DynamicDiffusionGraph],
    config: &DataConfig,
) -> Vec<ItemSeries> {
    let weeks = config.weeks;
    let max_of = |f: &dyn Fn(usize, usize) -> f64| {
        let mut m: f64 = 0.0;
        for i in 0..items.len() {
            for w in 0..weeks {
                m = m.max(f(i, w));
            }
        }
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let price = |i: usize, _: usize| items[i].price.ln_1p();
    let sale = |i: usize, w: usize| sales[i][w].ln_1p();
    let turn = |i: usize, w: usize| turnover[i][w].ln_1p();
    let scale = |i: usize, w: usize| (graphs[i].snapshots[w].scale() as f64).ln_1p();
    let edges = |i: usize, w: usize| (graphs[i].snapshots[w].edges.len() as f64).ln_1p();
    let (mp, ms, mt) = (max_of(&price), max_of(&sale), max_of(&turn));
    let (mscale, medges) = if config.diffusion_stats_in_features {
        (max_of(&scale), max_of(&edges))
    } else {
        (1.0, 1.0)
    };

    let dim = 3 + n_categories + if config.diffusion_stats_in_features { 2 } else { 0 };
    (0..items.len())
        .map(|i| {
            let mut features = Vec::with_capacity(weeks * dim);
            for w in 0..weeks {
                features.extend([price(i, w) / mp, sale(i, w) / ms, turn(i, w) / mt]);
                features.extend((0..n_categories).map(|c| if c == category_of[i] { 1.0 } else { 0.0 }));
                if config.diffusion_stats_in_features {
                    features.extend([scale(i, w) / mscale, edges(i, w) / medges]);
                }
            }
            ItemSeries {
                item_id: items[i].item_id,
                sales: sales[i].clone(),
                turnover: turnover[i].clone(),
                features,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Category, PurchaseRecord, Span, WEEK_SECONDS};

    const START: i64 = 1_588_291_200;

    fn item(id: u64, high: &str) -> ItemInfo {
        ItemInfo {
            item_id: id,
            name: format!("item{id}"),
            price: 10.0 + id as f64,
            category: Category {
                high: high.into(),
                mid: "m".into(),
                low: "l".into(),
            },
        }
    }

    fn small_store() -> RecordStore {
        let items = vec![item(1, "b"), item(2, "a"), item(3, "a")];
        let mut diffusion = Vec::new();
        let mut purchases = Vec::new();
        for w in 0..12i64 {
            let t = START + w * WEEK_SECONDS + 100;
            diffusion.push(DiffusionRecord {
                item_id: 2,
                sender_id: 1,
                receiver_id: 2 + w as u64,
                timestamp: t,
            });
            diffusion.push(DiffusionRecord {
                item_id: 2,
                sender_id: 1,
                receiver_id: 2 + w as u64,
                timestamp: t + 1,
            });
            for k in 0..(w as u64 % 3) {
                purchases.push(PurchaseRecord {
                    buyer_id: 50 + k,
                    item_id: 3,
                    turnover: 5.0,
                    timestamp: t,
                });
            }
        }
        let cfg = DataConfig::default();
        RecordStore::from_records(items, diffusion, purchases, Span::new(START, cfg.weeks))
            .unwrap()
            .0
    }

    #[test]
    fn shapes_and_manifest() {
        let store = small_store();
        let ds = Dataset::build(&store, &DataConfig::default()).unwrap();
        assert_eq!(ds.categories, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(ds.category_of, vec![1, 0, 0]);
        assert_eq!(ds.feature_dim, 5);
        for (s, g) in ds.series.iter().zip(&ds.graphs) {
            assert_eq!(s.weeks(), g.snapshots.len());
            assert_eq!(s.features.len(), s.weeks() * ds.feature_dim);
        }
        assert_eq!(ds.graphs[1].scales(), vec![2; 12]);
        assert_eq!(ds.series[2].sales[0..3], [0.0, 1.0, 2.0]);
        let m = ds.manifest();
        assert_eq!(m.splits[0].window_starts, vec![1, 2, 3]);
        assert_eq!(m.splits[0].samples, 9);
        assert_eq!(m.splits[2].samples, 3);
        // 1 sender, 12 receivers, and buyers 50 and 51.
        assert_eq!(m.users, 15);
    }

    #[test]
    fn scales_sum_to_distinct_participations() {
        let store = small_store();
        let ds = Dataset::build(&store, &DataConfig::default()).unwrap();
        let span = ds.config.span();
        let distinct: BTreeSet<(u64, u64, usize)> = store
            .diffusion
            .iter()
            .flat_map(|r| {
                let w = span.week_of(r.timestamp).unwrap();
                [(r.item_id, r.sender_id, w), (r.item_id, r.receiver_id, w)]
            })
            .collect();
        let total: usize = ds.graphs.iter().flat_map(|g| g.scales()).sum();
        assert_eq!(total, distinct.len());
    }

    #[test]
    fn example_pads_before_span() {
        let store = small_store();
        let ds = Dataset::build(&store, &DataConfig::default()).unwrap();
        let sample = ds.train[1];
        assert_eq!(sample.window.start, 0);
        let ex = ds.example(&sample, 6);
        assert_eq!(ex.steps(), 6);
        assert_eq!(ex.snapshots[0], None);
        assert_eq!(ex.snapshots[1], None);
        assert!(ex.feature_row(0).iter().all(|&x| x == 0.0));
        assert_eq!(ex.snapshots[2].unwrap().week, 0);
        assert_eq!(ex.snapshots[5].unwrap().week, 3);
        let short = ds.example(&ds.test[1], 2);
        let weeks: Vec<usize> = short.snapshots.iter().map(|s| s.unwrap().week).collect();
        assert_eq!(weeks, vec![8, 9]);
        assert_eq!(short.scales(), vec![2.0, 2.0]);
    }

    #[test]
    fn diffusion_stats_are_opt_in() {
        let store = small_store();
        let cfg = DataConfig {
            diffusion_stats_in_features: true,
            ..DataConfig::default()
        };
        let ds = Dataset::build(&store, &cfg).unwrap();
        assert_eq!(ds.feature_dim, 7);
        assert_eq!(ds.series[1].feature_row(0, 7)[5], 1.0);
        let plain = Dataset::build(&store, &DataConfig::default()).unwrap();
        assert_eq!(plain.series[0].feature_row(0, 5).len(), 5);
    }

    #[test]
    fn rebuild_is_identical() {
        let store = small_store();
        let a = Dataset::build(&store, &DataConfig::default()).unwrap();
        let b = Dataset::build(&store, &DataConfig::default()).unwrap();
        assert_eq!(a.graphs, b.graphs);
        assert_eq!(a.series, b.series);
        assert_eq!(a.train, b.train);
    }
}
