//! Dataset file formats: canonical JSONL for items and pairs, CSV/JSONL
//! ingestion of external data, and atomic report writing.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Item, PreferencePair, Split};

/// One line of items.jsonl. Field order is the canonical on-disk order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemRecord {
    id: String,
    embedding: Vec<f64>,
    confounders: BTreeMap<String, f64>,
    instruments: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent: Option<BTreeMap<String, f64>>,
    outcome: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    month: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weekday: Option<u8>,
    split: Split,
}

/// Write bytes atomically: temp file in the target directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Serialize the dataset to `items.jsonl` and `pairs.jsonl` under `dir`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let mut items_buf = Vec::new();
    for item in &ds.items {
        let split = *ds.split.get(&item.id).ok_or_else(|| {
            Error::Input(format!("item {:?} has no split assignment", item.id))
        })?;
        let record = ItemRecord {
            id: item.id.clone(),
            embedding: item.embedding.clone(),
            confounders: item.confounders.clone(),
            instruments: item.instruments.clone(),
            latent: item.latent.clone(),
            outcome: item.outcome,
            month: item.time_month,
            weekday: item.time_weekday,
            split,
        };
        serde_json::to_writer(&mut items_buf, &record).map_err(io_from_json)?;
        items_buf.push(b'\n');
    }
    atomic_write(&dir.join("items.jsonl"), &items_buf)?;

    let mut pairs_buf = Vec::new();
    for pair in &ds.pairs {
        serde_json::to_writer(&mut pairs_buf, pair).map_err(io_from_json)?;
        pairs_buf.push(b'\n');
    }
    atomic_write(&dir.join("pairs.jsonl"), &pairs_buf)?;
    Ok(())
}

fn io_from_json(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let items_path = dir.join("items.jsonl");
    let file = fs::File::open(&items_path)?;
    let mut items = Vec::new();
    let mut split = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ItemRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: {e}", items_path.display(), lineno + 1))
        })?;
        split.insert(record.id.clone(), record.split);
        items.push(Item {
            id: record.id,
            embedding: record.embedding,
            confounders: record.confounders,
            instruments: record.instruments,
            latent: record.latent,
            outcome: record.outcome,
            time_month: record.month,
            time_weekday: record.weekday,
        });
    }

    let pairs_path = dir.join("pairs.jsonl");
    let mut pairs = Vec::new();
    if pairs_path.exists() {
        let file = fs::File::open(&pairs_path)?;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: PreferencePair = serde_json::from_str(&line).map_err(|e| {
                Error::Input(format!("{}:{}: {e}", pairs_path.display(), lineno + 1))
            })?;
            pairs.push(pair);
        }
    }
    Ok(Dataset { items, pairs, split })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for IngestFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(IngestFormat::Jsonl),
            "csv" => Ok(IngestFormat::Csv),
            other => Err(Error::Config(format!("unknown ingest format {other:?}"))),
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ColumnMapping {
    /// Columns holding the embedding, in dimension order.
    pub embedding: Vec<String>,
    pub outcome: String,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub confounders: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default)]
    pub month: Option<String>,
    #[serde(default)]
    pub weekday: Option<String>,
    #[serde(default)]
    pub split: Option<String>,
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::Input(format!("row {row}: column {col:?} is not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::Input(format!(
            "row {row}: column {col:?} is not finite: {raw:?}"
        )));
    }
    Ok(v)
}

/// Build a validated dataset from an external file. JSONL input follows the
/// native item schema; CSV input uses the column mapping. Non-finite cells
/// are rejected with their row number.
pub fn ingest(path: &Path, format: IngestFormat, mapping: &ColumnMapping) -> Result<Dataset> {
    let ds = match format {
        IngestFormat::Jsonl => read_dataset(path.parent().unwrap_or_else(|| Path::new(".")))
            .or_else(|_| read_items_file(path))?,
        IngestFormat::Csv => ingest_csv(path, mapping)?,
    };
    let violations = crate::model::validate(&ds);
    if !violations.is_empty() {
        return Err(Error::Input(format!(
            "ingested data fails validation: {}",
            violations.join("; ")
        )));
    }
    Ok(ds)
}

/// Read a bare items.jsonl file (no pairs).
pub fn read_items_file(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    let mut items = Vec::new();
    let mut split = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ItemRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        split.insert(record.id.clone(), record.split);
        items.push(Item {
            id: record.id,
            embedding: record.embedding,
            confounders: record.confounders,
            instruments: record.instruments,
            latent: record.latent,
            outcome: record.outcome,
            time_month: record.month,
            time_weekday: record.weekday,
        });
    }
    Ok(Dataset { items, pairs: Vec::new(), split })
}

fn ingest_csv(path: &Path, mapping: &ColumnMapping) -> Result<Dataset> {
    if mapping.embedding.is_empty() {
        return Err(Error::Config("CSV ingestion needs embedding columns".into()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column {name:?}")))
    };

    let emb_idx: Vec<usize> = mapping
        .embedding
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let outcome_idx = col(&mapping.outcome)?;
    let id_idx = mapping.id.as_deref().map(col).transpose()?;
    let conf_idx: Vec<(String, usize)> = mapping
        .confounders
        .iter()
        .map(|c| col(c).map(|i| (c.clone(), i)))
        .collect::<Result<_>>()?;
    let inst_idx: Vec<(String, usize)> = mapping
        .instruments
        .iter()
        .map(|c| col(c).map(|i| (c.clone(), i)))
        .collect::<Result<_>>()?;
    let month_idx = mapping.month.as_deref().map(col).transpose()?;
    let weekday_idx = mapping.weekday.as_deref().map(col).transpose()?;
    let split_idx = mapping.split.as_deref().map(col).transpose()?;

    let mut items = Vec::new();
    let mut split = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 1; // 1-based data rows, header not counted
        let id = match id_idx {
            Some(j) => record[j].to_string(),
            None => format!("row{:06}", i),
        };
        let embedding: Vec<f64> = emb_idx
            .iter()
            .map(|&j| parse_cell(&record[j], row, &headers[j]))
            .collect::<Result<_>>()?;
        let outcome = parse_cell(&record[outcome_idx], row, &mapping.outcome)?;
        let confounders: BTreeMap<String, f64> = conf_idx
            .iter()
            .map(|(name, j)| parse_cell(&record[*j], row, name).map(|v| (name.clone(), v)))
            .collect::<Result<_>>()?;
        let instruments: BTreeMap<String, f64> = inst_idx
            .iter()
            .map(|(name, j)| parse_cell(&record[*j], row, name).map(|v| (name.clone(), v)))
            .collect::<Result<_>>()?;
        let time_month = month_idx
            .map(|j| parse_cell(&record[j], row, "month").map(|v| v as u8))
            .transpose()?;
        let time_weekday = weekday_idx
            .map(|j| parse_cell(&record[j], row, "weekday").map(|v| v as u8))
            .transpose()?;
        let item_split = match split_idx {
            Some(j) => match record[j].trim() {
                "train" => Split::Train,
                "valid" => Split::Valid,
                "test" => Split::Test,
                other => {
                    return Err(Error::Input(format!("row {row}: unknown split {other:?}")))
                }
            },
            None => Split::Train,
        };
        split.insert(id.clone(), item_split);
        items.push(Item {
            id,
            embedding,
            confounders,
            instruments,
            latent: None,
            outcome,
            time_month,
            time_weekday,
        });
    }
    Ok(Dataset { items, pairs: Vec::new(), split })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e)),
            _ => Error::Input(format!("csv: {e}")),
        }
    }
}
