//! Raw event tuples and CSV ingestion.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Span};

pub type ItemId = u64;
pub type UserId = u64;

pub const DIFFUSION_HEADER: [&str; 4] = ["item_id", "sender_id", "receiver_id", "timestamp"];
pub const PURCHASE_HEADER: [&str; 4] = ["buyer_id", "item_id", "turnover", "timestamp"];
pub const ITEM_HEADER: [&str; 6] = ["item_id", "name", "price", "cat1", "cat2", "cat3"];

/// One forward of an item's share token from `sender` to `receiver`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DiffusionRecord {
    pub item_id: ItemId,
    pub sender_id: UserId,
    pub receiver_id: UserId,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurchaseRecord {
    pub buyer_id: UserId,
    pub item_id: ItemId,
    pub turnover: f64,
    pub timestamp: i64,
}

/// High / mid / low category path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Category {
    pub high: String,
    pub mid: String,
    pub low: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemInfo {
    pub item_id: ItemId,
    pub name: String,
    pub price: f64,
    pub category: Category,
}

/// Counts of records that were read but not kept.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub diffusion_read: usize,
    pub purchases_read: usize,
    pub self_loops_rejected: usize,
    pub diffusion_out_of_span: usize,
    pub purchases_out_of_span: usize,
}

/// Validated, immutable record stores.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordStore {
    items: Vec<ItemInfo>,
    index: BTreeMap<ItemId, usize>,
    pub diffusion: Vec<DiffusionRecord>,
    pub purchases: Vec<PurchaseRecord>,
}

impl RecordStore {
    /// Validates in-memory records the same way CSV ingestion does.
    pub fn from_records(
        items: Vec<ItemInfo>,
        diffusion: Vec<DiffusionRecord>,
        purchases: Vec<PurchaseRecord>,
        span: Span,
    ) -> Result<(Self, IngestReport), DataError> {
        let mut store = RecordStore::with_items(items)?;
        let mut report = IngestReport::default();
        for rec in diffusion {
            store.push_diffusion(rec, span, &mut report, None)?;
        }
        for rec in purchases {
            store.push_purchase(rec, span, &mut report, None)?;
        }
        Ok((store, report))
    }

    fn with_items(mut items: Vec<ItemInfo>) -> Result<Self, DataError> {
        items.sort_by_key(|i| i.item_id);
        let mut index = BTreeMap::new();
        for (pos, item) in items.iter().enumerate() {
            if index.insert(item.item_id, pos).is_some() {
                return Err(DataError::Invalid(format!("duplicate item_id {}", item.item_id)));
            }
            validate_item(item).map_err(DataError::Invalid)?;
        }
        Ok(RecordStore {
            items,
            index,
            diffusion: Vec::new(),
            purchases: Vec::new(),
        })
    }

    pub fn items(&self) -> &[ItemInfo] {
        &self.items
    }

    pub fn item_index(&self, id: ItemId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    fn push_diffusion(
        &mut self,
        rec: DiffusionRecord,
        span: Span,
        report: &mut IngestReport,
        origin: Option<(&Path, u64)>,
    ) -> Result<(), DataError> {
        report.diffusion_read += 1;
        if !self.index.contains_key(&rec.item_id) {
            return Err(unknown_item(rec.item_id, origin));
        }
        if rec.sender_id == rec.receiver_id {
            report.self_loops_rejected += 1;
            return Ok(());
        }
        if span.week_of(rec.timestamp).is_none() {
            report.diffusion_out_of_span += 1;
            return Ok(());
        }
        self.diffusion.push(rec);
        Ok(())
    }

    fn push_purchase(
        &mut self,
        rec: PurchaseRecord,
        span: Span,
        report: &mut IngestReport,
        origin: Option<(&Path, u64)>,
    ) -> Result<(), DataError> {
        report.purchases_read += 1;
        if !self.index.contains_key(&rec.item_id) {
            return Err(unknown_item(rec.item_id, origin));
        }
        if !(rec.turnover >= 0.0) {
            let message = format!("negative turnover {}", rec.turnover);
            return Err(match origin {
                Some((file, line)) => DataError::Parse {
                    file: file.to_path_buf(),
                    line,
                    message,
                },
                None => DataError::Invalid(message),
            });
        }
        if span.week_of(rec.timestamp).is_none() {
            report.purchases_out_of_span += 1;
            return Ok(());
        }
        self.purchases.push(rec);
        Ok(())
    }
}

fn unknown_item(item_id: ItemId, origin: Option<(&Path, u64)>) -> DataError {
    DataError::UnknownItem {
        item_id,
        file: origin.map(|(f, _)| f.to_path_buf()),
        line: origin.map(|(_, l)| l),
    }
}

fn validate_item(item: &ItemInfo) -> Result<(), String> {
    if !(item.price > 0.0) {
        return Err(format!("item {} has non-positive price {}", item.item_id, item.price));
    }
    let c = &item.category;
    if c.high.is_empty() || c.mid.is_empty() || c.low.is_empty() {
        return Err(format!("item {} has an empty category level", item.item_id));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct IngestPaths {
    pub diffusion: PathBuf,
    pub purchases: PathBuf,
    pub items: PathBuf,
}

impl IngestPaths {
    /// The standard file names inside one data directory.
    pub fn in_dir(dir: &Path) -> Self {
        IngestPaths {
            diffusion: dir.join("diffusion.csv"),
            purchases: dir.join("purchases.csv"),
            items: dir.join("items.csv"),
        }
    }

    pub fn missing(&self) -> Vec<&Path> {
        [&self.diffusion, &self.purchases, &self.items]
            .into_iter()
            .filter(|p| !p.is_file())
            .map(PathBuf::as_path)
            .collect()
    }
}

/// Reads the three CSV files. Out-of-span records and self-forwards are
/// dropped and counted; malformed lines and unknown item ids are errors.
pub fn ingest(paths: &IngestPaths, span: Span) -> Result<(RecordStore, IngestReport), DataError> {
    let items = read_items(open(&paths.items)?, &paths.items)?;
    let mut store = RecordStore::with_items(items)?;
    let mut report = IngestReport::default();

    let mut reader = csv_reader(open(&paths.diffusion)?);
    check_header(&mut reader, &paths.diffusion, &DIFFUSION_HEADER)?;
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(&paths.diffusion, e))?;
        let line = line_of(&row);
        let rec = DiffusionRecord {
            item_id: field(&row, 0, &paths.diffusion, line)?,
            sender_id: field(&row, 1, &paths.diffusion, line)?,
            receiver_id: field(&row, 2, &paths.diffusion, line)?,
            timestamp: field(&row, 3, &paths.diffusion, line)?,
        };
        store.push_diffusion(rec, span, &mut report, Some((&paths.diffusion, line)))?;
    }

    let mut reader = csv_reader(open(&paths.purchases)?);
    check_header(&mut reader, &paths.purchases, &PURCHASE_HEADER)?;
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(&paths.purchases, e))?;
        let line = line_of(&row);
        let rec = PurchaseRecord {
            buyer_id: field(&row, 0, &paths.purchases, line)?,
            item_id: field(&row, 1, &paths.purchases, line)?,
            turnover: field(&row, 2, &paths.purchases, line)?,
            timestamp: field(&row, 3, &paths.purchases, line)?,
        };
        store.push_purchase(rec, span, &mut report, Some((&paths.purchases, line)))?;
    }
    Ok((store, report))
}

/// Parses one diffusion line such as `7,12,19,1588291200`.
pub fn parse_diffusion_line(line: &str) -> Result<DiffusionRecord, DataError> {
    let origin = Path::new("<line>");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(line.as_bytes());
    let row = reader
        .records()
        .next()
        .ok_or_else(|| DataError::Parse {
            file: origin.to_path_buf(),
            line: 1,
            message: "empty line".into(),
        })?
        .map_err(|e| csv_error(origin, e))?;
    if row.len() != 4 {
        return Err(DataError::Parse {
            file: origin.to_path_buf(),
            line: 1,
            message: format!("expected 4 fields, found {}", row.len()),
        });
    }
    Ok(DiffusionRecord {
        item_id: field(&row, 0, origin, 1)?,
        sender_id: field(&row, 1, origin, 1)?,
        receiver_id: field(&row, 2, origin, 1)?,
        timestamp: field(&row, 3, origin, 1)?,
    })
}

fn read_items<R: Read>(source: R, path: &Path) -> Result<Vec<ItemInfo>, DataError> {
    let mut reader = csv_reader(source);
    check_header(&mut reader, path, &ITEM_HEADER)?;
    let mut items = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = line_of(&row);
        let item = ItemInfo {
            item_id: field(&row, 0, path, line)?,
            name: row[1].to_string(),
            price: field(&row, 2, path, line)?,
            category: Category {
                high: row[3].to_string(),
                mid: row[4].to_string(),
                low: row[5].to_string(),
            },
        };
        validate_item(&item).map_err(|message| DataError::Parse {
            file: path.to_path_buf(),
            line,
            message,
        })?;
        items.push(item);
    }
    Ok(items)
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn check_header<R: Read>(reader: &mut csv::Reader<R>, path: &Path, expected: &[&str]) -> Result<(), DataError> {
    let found = reader.headers().map_err(|e| csv_error(path, e))?;
    if found.iter().ne(expected.iter().copied()) {
        return Err(DataError::Header {
            file: path.to_path_buf(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn line_of(row: &csv::StringRecord) -> u64 {
    row.position().map_or(0, |p| p.line())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, path: &Path, line: u64) -> Result<T, DataError>
where
    T::Err: std::fmt::Display,
{
    let raw = row.get(idx).ok_or_else(|| DataError::Parse {
        file: path.to_path_buf(),
        line,
        message: format!("missing field {}", idx + 1),
    })?;
    raw.parse().map_err(|e: T::Err| DataError::Parse {
        file: path.to_path_buf(),
        line,
        message: format!("field {} ({raw:?}): {e}", idx + 1),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::Parse {
        file: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Writes the three CSV files in the ingestion formats.
pub fn write_csvs(
    dir: &Path,
    items: &[ItemInfo],
    diffusion: &[DiffusionRecord],
    purchases: &[PurchaseRecord],
) -> Result<IngestPaths, DataError> {
    let paths = IngestPaths::in_dir(dir);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| DataError::Parse {
            file: path.clone(),
            line: 0,
            message: e.to_string(),
        }
    };

    let mut w = csv::Writer::from_path(&paths.items).map_err(io(&paths.items))?;
    w.write_record(ITEM_HEADER).map_err(io(&paths.items))?;
    for it in items {
        w.write_record([
            it.item_id.to_string(),
            it.name.clone(),
            fmt_f64(it.price),
            it.category.high.clone(),
            it.category.mid.clone(),
            it.category.low.clone(),
        ])
        .map_err(io(&paths.items))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: paths.items.clone(),
        source,
    })?;

    let mut w = csv::Writer::from_path(&paths.diffusion).map_err(io(&paths.diffusion))?;
    w.write_record(DIFFUSION_HEADER).map_err(io(&paths.diffusion))?;
    for r in diffusion {
        w.write_record([
            r.item_id.to_string(),
            r.sender_id.to_string(),
            r.receiver_id.to_string(),
            r.timestamp.to_string(),
        ])
        .map_err(io(&paths.diffusion))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: paths.diffusion.clone(),
        source,
    })?;

    let mut w = csv::Writer::from_path(&paths.purchases).map_err(io(&paths.purchases))?;
    w.write_record(PURCHASE_HEADER).map_err(io(&paths.purchases))?;
    for r in purchases {
        w.write_record([
            r.buyer_id.to_string(),
            r.item_id.to_string(),
            fmt_f64(r.turnover),
            r.timestamp.to_string(),
        ])
        .map_err(io(&paths.purchases))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: paths.purchases.clone(),
        source,
    })?;
    Ok(paths)
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
