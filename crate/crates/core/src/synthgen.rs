//! Synthetic worlds: a user roster with hub accounts, items with latent
//! popularity, branching share cascades, purchases, and planted rising stars
//! whose demand bursts after a visible build-up in sharing.

use std::collections::VecDeque;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    label_rising_stars, write_csvs, Category, DataConfig, DataError, DiffusionRecord, IngestPaths, ItemId, ItemInfo,
    PurchaseRecord, RecordStore, Span, UserId, WEEK_SECONDS,
};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub weeks: usize,
    pub span_start: i64,
    pub hub_fraction: f64,
    pub hub_activity_multiplier: f64,
    /// Expected seed shares per user per week, before activity weighting.
    pub base_share_rate: f64,
    pub forward_probability: f64,
    /// Mean number of receivers beyond the first in one share event.
    pub extra_receivers_mean: f64,
    /// The same for share events sent by hub accounts.
    pub hub_extra_receivers_mean: f64,
    pub max_depth: usize,
    /// Chance that a receiver buys the item.
    pub purchase_conversion: f64,
    /// Mean weekly purchases of an average item not driven by shares.
    pub organic_sales_mean: f64,
    /// Log-space spread of item popularity and share affinity.
    pub popularity_sigma: f64,
    pub planted_star_fraction: f64,
    /// 1-based inclusive week range for burst weeks.
    pub burst_week_range: [usize; 2],
    pub burst_multiplier: f64,
    /// Hub accounts that seed a planted star in each build-up and burst week.
    pub burst_hubs: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_users: 20_000,
            n_items: 2_000,
            n_categories: 4,
            weeks: 12,
            span_start: 1_588_291_200,
            hub_fraction: 0.01,
            hub_activity_multiplier: 10.0,
            base_share_rate: 0.3,
            forward_probability: 0.2,
            extra_receivers_mean: 1.0,
            hub_extra_receivers_mean: 6.0,
            max_depth: 6,
            purchase_conversion: 0.05,
            organic_sales_mean: 8.0,
            popularity_sigma: 0.6,
            planted_star_fraction: 0.02,
            burst_week_range: [5, 12],
            burst_multiplier: 20.0,
            burst_hubs: 5,
        }
    }
}

impl GenConfig {
    pub fn span(&self) -> Span {
        Span::new(self.span_start, self.weeks)
    }

    pub fn planted_count(&self) -> usize {
        (self.planted_star_fraction * self.n_items as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let unit = [
            ("hub_fraction", self.hub_fraction),
            ("base_share_rate", self.base_share_rate),
            ("forward_probability", self.forward_probability),
            ("purchase_conversion", self.purchase_conversion),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(GenError::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("hub_activity_multiplier", self.hub_activity_multiplier),
            ("burst_multiplier", self.burst_multiplier),
        ] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(GenError::Config(format!("{name} must be at least 1, got {v}")));
            }
        }
        if !(self.planted_star_fraction > 0.0 && self.planted_star_fraction < 0.5) {
            return Err(GenError::Config(format!(
                "planted_star_fraction must lie in (0, 0.5), got {}",
                self.planted_star_fraction
            )));
        }
        for (name, v) in [
            ("extra_receivers_mean", self.extra_receivers_mean),
            ("hub_extra_receivers_mean", self.hub_extra_receivers_mean),
            ("organic_sales_mean", self.organic_sales_mean),
            ("popularity_sigma", self.popularity_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GenError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.n_users < 2 {
            return Err(GenError::Config("n_users must be at least 2".into()));
        }
        if self.n_categories == 0 || self.weeks == 0 || self.max_depth == 0 {
            return Err(GenError::Config(
                "n_categories, weeks and max_depth must be at least 1".into(),
            ));
        }
        let [lo, hi] = self.burst_week_range;
        if lo == 0 || lo > hi || hi > self.weeks {
            return Err(GenError::Config(format!(
                "burst_week_range [{lo}, {hi}] must satisfy 1 <= lo <= hi <= weeks ({})",
                self.weeks
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthUser {
    pub user_id: UserId,
    pub hub: bool,
    pub activity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub info: ItemInfo,
    pub popularity: f64,
    pub share_affinity: f64,
    pub planted: bool,
    /// 0-based burst week of a planted star.
    pub burst_week: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: GenConfig,
    pub users: Vec<SynthUser>,
    pub items: Vec<SynthItem>,
    pub diffusion: Vec<DiffusionRecord>,
    pub purchases: Vec<PurchaseRecord>,
    /// Deepest share event in any cascade; seed shares have depth 1.
    pub max_cascade_depth: usize,
}

/// Multipliers on share and purchase intensity for a planted star `offset`
/// weeks after its burst week. Shares build up two weeks ahead; purchases do not.
fn burst_profile(offset: i64, m: f64) -> (f64, f64) {
    match offset {
        -2 => (m.sqrt(), 1.0),
        -1 => (m.powf(0.75), 1.0),
        0 => (m, m),
        1 => (m.sqrt(), m.sqrt()),
        _ => (1.0, 1.0),
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive finite rate").sample(rng) as u64
}

/// Mean-one lognormal draw.
fn lognormal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    LogNormal::new(-sigma * sigma / 2.0, sigma)
        .expect("valid sigma")
        .sample(rng)
}

/// Builds a world; a pure function of `config`.
pub fn generate(config: &GenConfig) -> Result<World, GenError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config;

    let n_hubs = (c.hub_fraction * c.n_users as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut hub_flag = vec![false; c.n_users];
    for i in index::sample(&mut rng, c.n_users, n_hubs.min(c.n_users)) {
        hub_flag[i] = true;
    }
    let users: Vec<SynthUser> = (0..c.n_users)
        .map(|i| {
            let base = lognormal(&mut rng, 0.5);
            SynthUser {
                user_id: i as UserId + 1,
                hub: hub_flag[i],
                activity: if hub_flag[i] {
                    base * c.hub_activity_multiplier
                } else {
                    base
                },
            }
        })
        .collect();
    let hubs: Vec<usize> = (0..c.n_users).filter(|&i| hub_flag[i]).collect();
    let total_activity: f64 = users.iter().map(|u| u.activity).sum();
    let sharer = WeightedIndex::new(users.iter().map(|u| u.activity)).expect("positive activity");

    let mut planted = vec![false; c.n_items];
    for i in index::sample(&mut rng, c.n_items, c.planted_count().min(c.n_items)) {
        planted[i] = true;
    }
    let [lo, hi] = c.burst_week_range;
    let items: Vec<SynthItem> = (0..c.n_items)
        .map(|i| {
            let cat = i % c.n_categories;
            let price = 50.0 * lognormal(&mut rng, 0.8);
            let popularity = lognormal(&mut rng, c.popularity_sigma);
            let share_affinity = lognormal(&mut rng, c.popularity_sigma);
            let burst_week = planted[i].then(|| rng.random_range(lo - 1..hi));
            SynthItem {
                info: ItemInfo {
                    item_id: i as ItemId + 1,
                    name: format!("item-{:05}", i + 1),
                    price: (price * 100.0).round() / 100.0 + 0.01,
                    category: Category {
                        high: format!("c{cat}"),
                        mid: format!("c{cat}.{}", i % 3),
                        low: format!("c{cat}.{}.{}", i % 3, i % 5),
                    },
                },
                popularity,
                share_affinity,
                planted: planted[i],
                burst_week,
            }
        })
        .collect();

    let weekly: Vec<f64> = (0..c.weeks).map(|_| rng.random_range(0.7..1.3)).collect();
    let seeds_per_item = c.base_share_rate * total_activity / c.n_items.max(1) as f64;

    let mut diffusion = Vec::new();
    let mut purchases = Vec::new();
    let mut max_depth = 0;
    let mut queue: VecDeque<(usize, i64, usize)> = VecDeque::new();
    let lag = |rng: &mut ChaCha8Rng| rng.random_range(60..6 * 3600);

    for (w, &g) in weekly.iter().enumerate() {
        let week_start = c.span_start + w as i64 * WEEK_SECONDS;
        let week_end = week_start + WEEK_SECONDS - 1;
        for item in &items {
            let id = item.info.item_id;
            let (share_boost, buy_boost) = match item.burst_week {
                Some(b) => burst_profile(w as i64 - b as i64, c.burst_multiplier),
                None => (1.0, 1.0),
            };
            let n_seeds = poisson(&mut rng, seeds_per_item * item.share_affinity * share_boost * g);
            let extra_hubs = match item.burst_week {
                Some(b) if !hubs.is_empty() && (w + 2 >= b && w <= b) => c.burst_hubs,
                _ => 0,
            };
            for k in 0..n_seeds as usize + extra_hubs {
                let user = if k < n_seeds as usize {
                    sharer.sample(&mut rng)
                } else {
                    hubs[rng.random_range(0..hubs.len())]
                };
                queue.push_back((user, rng.random_range(week_start..week_end), 1));
            }
            while let Some((sender, t, depth)) = queue.pop_front() {
                max_depth = max_depth.max(depth);
                let extra = if users[sender].hub {
                    c.hub_extra_receivers_mean
                } else {
                    c.extra_receivers_mean
                };
                let fanout = 1 + poisson(&mut rng, extra);
                for _ in 0..fanout {
                    let mut receiver = rng.random_range(0..c.n_users - 1);
                    if receiver >= sender {
                        receiver += 1;
                    }
                    let at = (t + lag(&mut rng)).min(week_end);
                    diffusion.push(DiffusionRecord {
                        item_id: id,
                        sender_id: users[sender].user_id,
                        receiver_id: users[receiver].user_id,
                        timestamp: at,
                    });
                    if rng.random_bool(c.purchase_conversion) {
                        purchases.push(PurchaseRecord {
                            buyer_id: users[receiver].user_id,
                            item_id: id,
                            turnover: item.info.price,
                            timestamp: (at + lag(&mut rng)).min(week_end),
                        });
                    }
                    if depth < c.max_depth && rng.random_bool(c.forward_probability) {
                        queue.push_back((receiver, at, depth + 1));
                    }
                }
            }
            let organic = poisson(&mut rng, c.organic_sales_mean * item.popularity * buy_boost * g);
            for _ in 0..organic {
                let qty = 1 + poisson(&mut rng, 0.2);
                purchases.push(PurchaseRecord {
                    buyer_id: users[rng.random_range(0..c.n_users)].user_id,
                    item_id: id,
                    turnover: item.info.price * qty as f64,
                    timestamp: rng.random_range(week_start..week_end),
                });
            }
        }
    }
    diffusion.sort_by_key(|r| r.timestamp);
    purchases.sort_by_key(|r| r.timestamp);

    Ok(World {
        config: config.clone(),
        users,
        items,
        diffusion,
        purchases,
        max_cascade_depth: max_depth,
    })
}

impl World {
    pub fn item_infos(&self) -> Vec<ItemInfo> {
        self.items.iter().map(|i| i.info.clone()).collect()
    }

    pub fn planted(&self) -> Vec<bool> {
        self.items.iter().map(|i| i.planted).collect()
    }

    pub fn store(&self) -> Result<RecordStore, DataError> {
        RecordStore::from_records(
            self.item_infos(),
            self.diffusion.clone(),
            self.purchases.clone(),
            self.config.span(),
        )
        .map(|(store, _)| store)
    }

    /// Writes the three record files plus `planted.csv`.
    pub fn write(&self, dir: &Path) -> Result<IngestPaths, DataError> {
        let paths = write_csvs(dir, &self.item_infos(), &self.diffusion, &self.purchases)?;
        let path = dir.join("planted.csv");
        let err = |e: csv::Error| DataError::Parse {
            file: path.clone(),
            line: 0,
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(["item_id", "planted_flag"]).map_err(err)?;
        for item in &self.items {
            w.write_record([item.info.item_id.to_string(), u8::from(item.planted).to_string()])
                .map_err(err)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(paths)
    }

    /// Rule labels OR-ed over every sliding window of the span.
    pub fn rule_labels(&self, data: &DataConfig) -> Vec<bool> {
        let span = self.config.span();
        let mut sales = vec![vec![0.0; span.weeks]; self.items.len()];
        for p in &self.purchases {
            if let Some(w) = span.week_of(p.timestamp) {
                sales[(p.item_id - 1) as usize][w] += 1.0;
            }
        }
        let ids: Vec<ItemId> = self.items.iter().map(|i| i.info.item_id).collect();
        let cats: Vec<usize> = (0..self.items.len()).map(|i| i % self.config.n_categories).collect();
        let rule = data.label_rule();
        let mut out = vec![false; self.items.len()];
        let len = rule.obs_weeks + rule.horizon_weeks;
        for start in (0..span.weeks + 1).take_while(|s| s + len <= span.weeks) {
            let labels = label_rising_stars(&ids, &cats, &sales, start, &rule);
            for (o, l) in out.iter_mut().zip(labels.labels) {
                *o |= l;
            }
        }
        out
    }
}

/// Confusion between planted flags (truth) and rule labels (prediction).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub items: usize,
    pub planted: usize,
    pub rule_positive: usize,
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl OracleReport {
    /// Share of planted stars the rule recovers; 0 with nothing planted.
    pub fn recall(&self) -> f64 {
        if self.planted == 0 {
            0.0
        } else {
            self.true_positive as f64 / self.planted as f64
        }
    }

    /// Share of rule positives that were planted; 0 with no positives.
    pub fn precision(&self) -> f64 {
        if self.rule_positive == 0 {
            0.0
        } else {
            self.true_positive as f64 / self.rule_positive as f64
        }
    }
}

pub fn oracle_check(world: &World, labels: &[bool]) -> OracleReport {
    let mut r = OracleReport {
        items: world.items.len(),
        ..OracleReport::default()
    };
    for (item, &y) in world.items.iter().zip(labels) {
        match (item.planted, y) {
            (true, true) => r.true_positive += 1,
            (false, true) => r.false_positive += 1,
            (true, false) => r.false_negative += 1,
            (false, false) => r.true_negative += 1,
        }
    }
    r.planted = r.true_positive + r.false_negative;
    r.rule_positive = r.true_positive + r.false_positive;
    r
}
