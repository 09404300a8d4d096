//! Exploratory statistics over a built dataset: weekly-scale volatility,
//! hub users, and the scale/sales relationships, written as CSV tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::data::{Dataset, UserId};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error("{path}: {message}")]
    Output { path: String, message: String },
}

/// Largest week-over-week increase; `None` below two weeks.
pub fn mdsw(series: &[f64]) -> Option<f64> {
    series.windows(2).map(|w| w[1] - w[0]).reduce(f64::max)
}

/// The `⌈U/100⌉` top sharers among the `U` users with at least one share.
/// Ties go to the lower user id.
pub fn hub_nodes(share_counts: &BTreeMap<UserId, usize>) -> BTreeSet<UserId> {
    let mut ranked: Vec<(UserId, usize)> = share_counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&u, &c)| (u, c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let k = ranked.len().div_ceil(100);
    ranked.into_iter().take(k).map(|(u, _)| u).collect()
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// `(value, count)` rows in ascending value order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Distribution(pub Vec<(f64, usize)>);

impl Distribution {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        v.sort_by(f64::total_cmp);
        let mut rows: Vec<(f64, usize)> = Vec::new();
        for x in v {
            match rows.last_mut() {
                Some((last, c)) if *last == x => *c += 1,
                _ => rows.push((x, 1)),
            }
        }
        Distribution(rows)
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|r| r.1).sum()
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.0.iter().map(|&(x, c)| x * c as f64).sum::<f64>() / n as f64)
    }
}

/// A statistic computed separately for positive and negative items.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ByLabel<T> {
    pub positive: T,
    pub negative: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeeklyMeans {
    pub mean_scale: Vec<f64>,
    pub mean_sales: Vec<f64>,
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HubSales {
    pub category: String,
    pub hub_items: usize,
    pub hub_mean_sales: Option<f64>,
    pub other_items: usize,
    pub other_mean_sales: Option<f64>,
}

/// Items sharing one reference value in `week`, followed one step further.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedGroup<T> {
    pub week: usize,
    pub value: f64,
    pub items: ByLabel<usize>,
    pub outcome: ByLabel<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticsReport {
    pub mdsw_scale: Vec<Option<f64>>,
    pub mdsw_sales: Vec<Option<f64>>,
    /// Hub users per high-level category.
    pub hubs: BTreeMap<String, BTreeSet<UserId>>,
    /// Distinct hub users appearing in each item's graph over the span.
    pub hub_count: Vec<usize>,
    pub fig2a_scale: Option<ByLabel<Distribution>>,
    pub fig2a_sales: Option<ByLabel<Distribution>>,
    pub fig2b: Option<ByLabel<Distribution>>,
    pub fig2c: WeeklyMeans,
    pub fig2d: Vec<HubSales>,
    pub fig3a: Option<MatchedGroup<Distribution>>,
    /// Mean weekly scale difference over the weeks leading up to the reference week.
    pub fig3b: Option<MatchedGroup<Vec<f64>>>,
    pub warnings: Vec<String>,
}

/// Weeks of scale differences averaged for the matched-scale comparison.
pub const LOOKBACK_WEEKS: usize = 6;

fn split_by_label<T: Clone>(values: &[Option<T>], labels: &[bool]) -> Option<ByLabel<Vec<T>>> {
    let mut out = ByLabel {
        positive: Vec::new(),
        negative: Vec::new(),
    };
    for (v, &y) in values.iter().zip(labels) {
        if let Some(v) = v {
            if y { &mut out.positive } else { &mut out.negative }.push(v.clone());
        }
    }
    (!out.positive.is_empty() && !out.negative.is_empty()).then_some(out)
}

fn distributions(values: &[Option<f64>], labels: &[bool]) -> Option<ByLabel<Distribution>> {
    split_by_label(values, labels).map(|g| ByLabel {
        positive: Distribution::of(g.positive),
        negative: Distribution::of(g.negative),
    })
}

/// Present value closest to the mean of `values`; ties go to the smaller value.
fn reference_value(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values
        .iter()
        .copied()
        .min_by(|a, b| (a - mean).abs().total_cmp(&(b - mean).abs()).then(a.total_cmp(b)))
}

pub fn observation_suite(ds: &Dataset, labels: &[bool]) -> Result<AnalyticsReport, AnalyticsError> {
    let n = ds.items.len();
    if labels.len() != n {
        return Err(AnalyticsError::LabelCount {
            expected: n,
            got: labels.len(),
        });
    }
    let weeks = ds.config.weeks;
    let mut warnings = Vec::new();
    let scales: Vec<Vec<f64>> = ds
        .graphs
        .iter()
        .map(|g| g.scales().into_iter().map(|s| s as f64).collect())
        .collect();
    let sales: Vec<&[f64]> = ds.series.iter().map(|s| s.sales.as_slice()).collect();

    let mdsw_scale: Vec<Option<f64>> = scales.iter().map(|s| mdsw(s)).collect();
    let mdsw_sales: Vec<Option<f64>> = sales.iter().map(|s| mdsw(s)).collect();
    let skipped = mdsw_scale.iter().filter(|m| m.is_none()).count();
    if skipped > 0 {
        warnings.push(format!("{skipped} items have fewer than two weeks; MDSW skipped"));
    }

    let mut shares: Vec<BTreeMap<UserId, usize>> = vec![BTreeMap::new(); ds.categories.len()];
    for (g, &c) in ds.graphs.iter().zip(&ds.category_of) {
        for (sender, _) in g.snapshots.iter().flat_map(|s| s.edge_ids()) {
            *shares[c].entry(sender).or_default() += 1;
        }
    }
    let hub_sets: Vec<BTreeSet<UserId>> = shares.iter().map(hub_nodes).collect();
    let mut hub_count = Vec::with_capacity(n);
    let mut hub_sent = Vec::with_capacity(n);
    for (g, &c) in ds.graphs.iter().zip(&ds.category_of) {
        let present: BTreeSet<UserId> = g.snapshots.iter().flat_map(|s| s.nodes.iter().copied()).collect();
        hub_count.push(present.intersection(&hub_sets[c]).count());
        hub_sent.push(
            g.snapshots
                .iter()
                .flat_map(|s| s.edge_ids())
                .any(|(s, _)| hub_sets[c].contains(&s)),
        );
    }

    let fig2a_scale = distributions(&mdsw_scale, labels);
    let fig2a_sales = distributions(&mdsw_sales, labels);
    let hub_values: Vec<Option<f64>> = hub_count.iter().map(|&h| Some(h as f64)).collect();
    let fig2b = distributions(&hub_values, labels);
    if fig2b.is_none() {
        warnings.push("one label group is empty; label-split sections unavailable".into());
    }

    let column_mean = |rows: &[&[f64]]| -> Vec<f64> {
        (0..weeks)
            .map(|w| {
                if n == 0 {
                    0.0
                } else {
                    rows.iter().map(|r| r[w]).sum::<f64>() / n as f64
                }
            })
            .collect()
    };
    let mean_scale = column_mean(&scales.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let mean_sales = column_mean(&sales);
    let fig2c = WeeklyMeans {
        pearson: pearson(&mean_scale, &mean_sales),
        mean_scale,
        mean_sales,
    };

    let fig2d = ds
        .categories
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let total = |hub: bool| -> (usize, Option<f64>) {
                let v: Vec<f64> = (0..n)
                    .filter(|&i| ds.category_of[i] == c && hub_sent[i] == hub)
                    .map(|i| sales[i].iter().sum())
                    .collect();
                (v.len(), (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
            };
            let (hub_items, hub_mean_sales) = total(true);
            let (other_items, other_mean_sales) = total(false);
            HubSales {
                category: name.clone(),
                hub_items,
                hub_mean_sales,
                other_items,
                other_mean_sales,
            }
        })
        .collect();

    // Reference week: the last observed week before the final horizon.
    let horizon = ds.config.horizon_weeks;
    let week = weeks.checked_sub(horizon + 1).filter(|&w| w + 1 < weeks);
    let fig3a = week.and_then(|w| {
        let value = reference_value(&sales.iter().map(|s| s[w]).collect::<Vec<_>>())?;
        let matched: Vec<Option<f64>> = (0..n)
            .map(|i| (sales[i][w] == value).then(|| sales[i][w + 1]))
            .collect();
        let g = distributions(&matched, labels)?;
        Some(MatchedGroup {
            week: w,
            value,
            items: ByLabel {
                positive: g.positive.total(),
                negative: g.negative.total(),
            },
            outcome: g,
        })
    });
    let fig3b = week.filter(|&w| w >= 1).and_then(|w| {
        let value = reference_value(&scales.iter().map(|s| s[w]).collect::<Vec<_>>())?;
        let from = w.saturating_sub(LOOKBACK_WEEKS);
        let diffs: Vec<Option<Vec<f64>>> = (0..n)
            .map(|i| (scales[i][w] == value).then(|| (from..w).map(|k| scales[i][k + 1] - scales[i][k]).collect()))
            .collect();
        let g = split_by_label(&diffs, labels)?;
        let mean = |rows: &[Vec<f64>]| -> Vec<f64> {
            (0..w - from)
                .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
                .collect()
        };
        Some(MatchedGroup {
            week: w,
            value,
            items: ByLabel {
                positive: g.positive.len(),
                negative: g.negative.len(),
            },
            outcome: ByLabel {
                positive: mean(&g.positive),
                negative: mean(&g.negative),
            },
        })
    });
    if fig3a.is_none() || fig3b.is_none() {
        warnings.push("matched-value groups lack one label; dynamic sections unavailable".into());
    }

    Ok(AnalyticsReport {
        mdsw_scale,
        mdsw_sales,
        hubs: ds.categories.iter().cloned().zip(hub_sets).collect(),
        hub_count,
        fig2a_scale,
        fig2a_sales,
        fig2b,
        fig2c,
        fig2d,
        fig3a,
        fig3b,
        warnings,
    })
}

impl AnalyticsReport {
    /// Mean of the defined per-item MDSW values with the given label.
    pub fn mean_mdsw(&self, labels: &[bool], label: bool) -> Option<f64> {
        Distribution::of(
            self.mdsw_scale
                .iter()
                .zip(labels)
                .filter(|(_, &y)| y == label)
                .filter_map(|(m, _)| *m),
        )
        .mean()
    }

    pub fn mean_hub_count(&self, labels: &[bool], label: bool) -> Option<f64> {
        Distribution::of(
            self.hub_count
                .iter()
                .zip(labels)
                .filter(|(_, &y)| y == label)
                .map(|(&h, _)| h as f64),
        )
        .mean()
    }

    pub fn summary(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("unavailable".to_string(), |x| format!("{x:.4}"));
        let means = |d: &Option<ByLabel<Distribution>>| match d {
            Some(d) => format!(
                "positive {} negative {}",
                opt(d.positive.mean()),
                opt(d.negative.mean())
            ),
            None => "unavailable".into(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "items {}", self.mdsw_scale.len());
        for (c, h) in &self.hubs {
            let _ = writeln!(s, "hub users [{c}] {}", h.len());
        }
        let _ = writeln!(s, "mean MDSW (scale): {}", means(&self.fig2a_scale));
        let _ = writeln!(s, "mean MDSW (sales): {}", means(&self.fig2a_sales));
        let _ = writeln!(s, "mean hub count: {}", means(&self.fig2b));
        let _ = writeln!(s, "weekly scale/sales pearson: {}", opt(self.fig2c.pearson));
        for h in &self.fig2d {
            let _ = writeln!(
                s,
                "mean sales [{}]: hub-shared {} ({} items), other {} ({} items)",
                h.category,
                opt(h.hub_mean_sales),
                h.hub_items,
                opt(h.other_mean_sales),
                h.other_items
            );
        }
        match &self.fig3a {
            Some(g) => {
                let _ = writeln!(
                    s,
                    "next-week sales at week {} sales {}: positive {} negative {}",
                    g.week + 1,
                    g.value,
                    opt(g.outcome.positive.mean()),
                    opt(g.outcome.negative.mean())
                );
            }
            None => s.push_str("next-week sales: unavailable\n"),
        }
        match &self.fig3b {
            Some(g) => {
                let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
                let _ = writeln!(
                    s,
                    "scale differences before week {} scale {}: positive {} negative {}",
                    g.week + 1,
                    g.value,
                    opt(avg(&g.outcome.positive)),
                    opt(avg(&g.outcome.negative))
                );
            }
            None => s.push_str("scale differences: unavailable\n"),
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }

    /// Writes `fig2a.csv` through `fig3b.csv` plus `summary.txt`.
    /// Unavailable sections get a header-only table.
    pub fn write(&self, dir: &Path) -> Result<(), AnalyticsError> {
        let err = |p: &Path, e: &dyn std::fmt::Display| AnalyticsError::Output {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
        let table = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), AnalyticsError> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| err(&path, &e))?;
            w.write_record(header).map_err(|e| err(&path, &e))?;
            for r in rows {
                w.write_record(&r).map_err(|e| err(&path, &e))?;
            }
            w.flush().map_err(|e| err(&path, &e))
        };
        let dist_rows = |tag: &str, d: &Option<ByLabel<Distribution>>| -> Vec<Vec<String>> {
            let Some(d) = d else { return Vec::new() };
            [(1, &d.positive), (0, &d.negative)]
                .into_iter()
                .flat_map(|(y, dist)| {
                    dist.0
                        .iter()
                        .map(move |&(v, c)| vec![tag.to_string(), y.to_string(), v.to_string(), c.to_string()])
                })
                .collect()
        };

        let mut rows = dist_rows("scale", &self.fig2a_scale);
        rows.extend(dist_rows("sales", &self.fig2a_sales));
        table("fig2a.csv", &["series", "label", "mdsw", "count"], rows)?;
        let rows = dist_rows("hubs", &self.fig2b)
            .into_iter()
            .map(|r| r[1..].to_vec())
            .collect();
        table("fig2b.csv", &["label", "hub_count", "count"], rows)?;
        let rows = (0..self.fig2c.mean_scale.len())
            .map(|w| {
                vec![
                    (w + 1).to_string(),
                    self.fig2c.mean_scale[w].to_string(),
                    self.fig2c.mean_sales[w].to_string(),
                ]
            })
            .collect();
        table("fig2c.csv", &["week", "mean_scale", "mean_sales"], rows)?;
        let num = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let rows = self
            .fig2d
            .iter()
            .flat_map(|h| {
                [
                    vec![
                        h.category.clone(),
                        "hub".into(),
                        h.hub_items.to_string(),
                        num(h.hub_mean_sales),
                    ],
                    vec![
                        h.category.clone(),
                        "other".into(),
                        h.other_items.to_string(),
                        num(h.other_mean_sales),
                    ],
                ]
            })
            .collect();
        table("fig2d.csv", &["category", "group", "items", "mean_sales"], rows)?;
        let rows = self
            .fig3a
            .as_ref()
            .map(|g| {
                let d = Some(g.outcome.clone());
                dist_rows("", &d).into_iter().map(|r| r[1..].to_vec()).collect()
            })
            .unwrap_or_default();
        table("fig3a.csv", &["label", "next_week_sales", "count"], rows)?;
        let rows = self
            .fig3b
            .as_ref()
            .map(|g| {
                let from = g.week + 1 - g.outcome.positive.len();
                [(1, &g.outcome.positive), (0, &g.outcome.negative)]
                    .into_iter()
                    .flat_map(|(y, v)| {
                        v.iter()
                            .enumerate()
                            .map(move |(k, d)| vec![y.to_string(), (from + k + 1).to_string(), d.to_string()])
                    })
                    .collect()
            })
            .unwrap_or_default();
        table("fig3b.csv", &["label", "week", "mean_scale_diff"], rows)?;
        let path = dir.join("summary.txt");
        fs::write(&path, self.summary()).map_err(|e| err(&path, &e))
    }
}
