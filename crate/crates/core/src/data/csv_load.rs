use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::preprocess::{mlens_labelize, timestamp_expand, QuantileBuckets, DEFAULT_NUM_BUCKETS};
use super::{DatasetSplit, FieldSchema, Sample, SplitRatio};
use crate::error::{Error, Result};

pub const MULTI_VALUE_SEPARATOR: char = '|';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    #[default]
    Categorical,
    /// `|`-separated list of categorical values.
    Multi,
    /// Real-valued, bucketized by train-split quantiles.
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default)]
    pub kind: ColumnKind,
    #[serde(default)]
    pub buckets: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Label cell must be 0 or 1.
    #[default]
    Binary,
    /// 1..=5 star rating, positive when above 3.
    RatingAbove3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub label_column: String,
    #[serde(default)]
    pub label_rule: LabelRule,
    #[serde(default)]
    pub timestamp_column: Option<String>,
    /// Adds `weekend` and `hour` fields derived from the timestamp.
    #[serde(default)]
    pub expand_timestamp: bool,
    pub columns: Vec<ColumnSpec>,
    #[serde(default)]
    pub split: SplitRatio,
}

impl SchemaConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

struct RawRow {
    line: usize,
    cells: Vec<String>,
    label: f64,
    timestamp: Option<i64>,
}

/// Reads a headered CSV and returns a split whose vocabularies and bucket
/// boundaries come from the training part only. Index 0 of every categorical
/// field is reserved for values not seen in training.
pub fn load_csv(path: impl AsRef<Path>, config: &SchemaConfig) -> Result<DatasetSplit> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, config)
}

pub fn load_csv_reader(reader: impl std::io::Read, config: &SchemaConfig) -> Result<DatasetSplit> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data_at(1, format!("missing column {name}")))
    };
    let label_col = position(&config.label_column)?;
    let ts_col = config.timestamp_column.as_deref().map(position).transpose()?;
    let col_idx: Vec<usize> = config.columns.iter().map(|c| position(&c.name)).collect::<Result<_>>()?;
    if config.expand_timestamp && ts_col.is_none() {
        return Err(Error::config("expand_timestamp requires timestamp_column"));
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::data_at(line, format!("expected {} cells, found {}", header.len(), rec.len())));
        }
        let raw_label = rec[label_col].trim();
        let label = match config.label_rule {
            LabelRule::Binary => match raw_label {
                "0" => 0.0,
                "1" => 1.0,
                other => return Err(Error::data_at(line, format!("label {other:?} is not binary"))),
            },
            LabelRule::RatingAbove3 => {
                let r: i64 = raw_label
                    .parse()
                    .map_err(|_| Error::data_at(line, format!("rating {raw_label:?} is not an integer")))?;
                mlens_labelize(r).map_err(|e| Error::data_at(line, e.to_string()))? as f64
            }
        };
        let timestamp = match ts_col {
            Some(c) => Some(
                rec[c]
                    .trim()
                    .parse::<i64>()
                    .map_err(|_| Error::data_at(line, format!("timestamp {:?} is not an integer", &rec[c])))?,
            ),
            None => None,
        };
        let cells = col_idx.iter().map(|&c| rec[c].trim().to_owned()).collect();
        rows.push(RawRow { line, cells, label, timestamp });
    }
    if ts_col.is_some() {
        rows.sort_by_key(|r| (r.timestamp, r.line));
    }
    let (n_train, _) = config.split.counts(rows.len());

    // Fit encoders on the training rows only.
    let mut encoders = Vec::with_capacity(config.columns.len());
    for (k, col) in config.columns.iter().enumerate() {
        let train = &rows[..n_train];
        let enc = match col.kind {
            ColumnKind::Categorical | ColumnKind::Multi => {
                let mut vocab: HashMap<String, u32> = HashMap::new();
                for r in train {
                    for tok in split_cell(&r.cells[k], col.kind) {
                        let next = vocab.len() as u32 + 1;
                        vocab.entry(tok.to_owned()).or_insert(next);
                    }
                }
                Encoder::Vocab(vocab)
            }
            ColumnKind::Numeric => {
                let mut vals = Vec::new();
                for r in train {
                    if let Some(v) = parse_numeric(&r.cells[k], r.line)? {
                        vals.push(v);
                    }
                }
                Encoder::Buckets(QuantileBuckets::fit(&vals, col.buckets.unwrap_or(DEFAULT_NUM_BUCKETS))?)
            }
        };
        encoders.push(enc);
    }

    let mut schemas: Vec<FieldSchema> = config
        .columns
        .iter()
        .zip(&encoders)
        .map(|(col, enc)| FieldSchema {
            name: col.name.clone(),
            cardinality: enc.cardinality(),
            multi_valued: col.kind == ColumnKind::Multi,
        })
        .collect();
    if config.expand_timestamp {
        schemas.push(FieldSchema::one_hot("weekend", 2));
        schemas.push(FieldSchema::one_hot("hour", 24));
    }

    let mut samples = Vec::with_capacity(rows.len());
    for r in &rows {
        let mut fields = Vec::with_capacity(schemas.len());
        for ((cell, enc), col) in r.cells.iter().zip(&encoders).zip(&config.columns) {
            fields.push(enc.encode(cell, col.kind, r.line)?);
        }
        if config.expand_timestamp {
            let (weekend, hour) = timestamp_expand(r.timestamp.unwrap_or(0));
            fields.push(vec![weekend as u32]);
            fields.push(vec![hour as u32]);
        }
        samples.push(Sample { fields, label: r.label, timestamp: r.timestamp });
    }
    let split = DatasetSplit::from_ordered(schemas, samples, config.split);
    split.validate()?;
    Ok(split)
}

enum Encoder {
    Vocab(HashMap<String, u32>),
    Buckets(QuantileBuckets),
}

impl Encoder {
    fn cardinality(&self) -> usize {
        match self {
            Encoder::Vocab(v) => v.len() + 1,
            // index 0 is reserved for a missing value
            Encoder::Buckets(b) => b.num_buckets() + 1,
        }
    }

    fn encode(&self, cell: &str, kind: ColumnKind, line: usize) -> Result<Vec<u32>> {
        match self {
            Encoder::Vocab(vocab) => {
                let idx: Vec<u32> =
                    split_cell(cell, kind).map(|t| vocab.get(t).copied().unwrap_or(0)).collect();
                if idx.is_empty() {
                    Ok(vec![0])
                } else {
                    Ok(idx)
                }
            }
            Encoder::Buckets(b) => Ok(vec![match parse_numeric(cell, line)? {
                Some(v) => b.bucket(v) as u32 + 1,
                None => 0,
            }]),
        }
    }
}

fn split_cell(cell: &str, kind: ColumnKind) -> Box<dyn Iterator<Item = &str> + '_> {
    match kind {
        ColumnKind::Multi => Box::new(cell.split(MULTI_VALUE_SEPARATOR).map(str::trim).filter(|t| !t.is_empty())),
        _ => Box::new(std::iter::once(cell)),
    }
}

fn parse_numeric(cell: &str, line: usize) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::data_at(line, format!("numeric cell {cell:?} does not parse")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> SchemaConfig {
        SchemaConfig::from_json(
            r#"{
                "label_column": "click",
                "timestamp_column": "ts",
                "columns": [
                    {"name": "site"},
                    {"name": "tags", "kind": "multi"}
                ]
            }"#,
        )
        .unwrap()
    }

    fn csv_text() -> String {
        let mut s = String::from("ts,site,tags,click\n");
        for i in 0..10 {
            let site = if i == 9 { "zzz".to_string() } else { format!("s{}", i % 3) };
            s.push_str(&format!("{},{},a|b,{}\n", 100 - i, site, i % 2));
        }
        s
    }

    #[test]
    fn ten_rows_split_eight_one_one() {
        let split = load_csv_reader(csv_text().as_bytes(), &config()).unwrap();
        assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (8, 1, 1));
        assert_eq!(split.train[0].fields[1].len(), 2);
    }

    #[test]
    fn chronological_order_and_oov() {
        let split = load_csv_reader(csv_text().as_bytes(), &config()).unwrap();
        let max_train = split.train.iter().filter_map(|s| s.timestamp).max().unwrap();
        let min_val = split.validation.iter().filter_map(|s| s.timestamp).min().unwrap();
        let min_test = split.test.iter().filter_map(|s| s.timestamp).min().unwrap();
        assert!(max_train <= min_val && min_val <= min_test);
        // "zzz" has the smallest timestamp, so it lands in train; make an unseen value instead
        let text = "ts,site,tags,click\n1,a,x,0\n2,a,x,1\n3,b,x,0\n4,a,x,1\n5,b,x,0\n6,a,x,1\n7,b,x,0\n8,a,x,1\n9,a,x,0\n10,new,x,1\n";
        let split = load_csv_reader(text.as_bytes(), &config()).unwrap();
        assert_eq!(split.test[0].fields[0], vec![0]);
        // vocabulary {a, b} + OOV
        assert_eq!(split.schemas[0].cardinality, 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "ts,site,tags,click\n1,a,x,0\n2,a,x,7\n";
        let err = load_csv_reader(bad.as_bytes(), &config()).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let missing = "ts,site,click\n1,a,0\n";
        assert_eq!(load_csv_reader(missing.as_bytes(), &config()).unwrap_err().kind(), "data");
    }

    #[test]
    fn rating_rule_and_timestamp_fields() {
        let cfg = SchemaConfig::from_json(
            r#"{"label_column": "rating", "label_rule": "rating_above3", "timestamp_column": "ts",
                "expand_timestamp": true, "columns": [{"name": "movie"}]}"#,
        )
        .unwrap();
        let text = "movie,rating,ts\nm1,4,1704546000\nm2,3,1704240000\n";
        let split = load_csv_reader(text.as_bytes(), &cfg).unwrap();
        let all: Vec<&Sample> = split.train.iter().chain(&split.validation).chain(&split.test).collect();
        let wed = all.iter().find(|s| s.timestamp == Some(1_704_240_000)).unwrap();
        assert_eq!(wed.label, 0.0);
        assert_eq!(wed.fields[1..], [vec![0], vec![0]]);
        let sat = all.iter().find(|s| s.timestamp == Some(1_704_546_000)).unwrap();
        assert_eq!(sat.label, 1.0);
        assert_eq!(sat.fields[1..], [vec![1], vec![13]]);
    }

    #[test]
    fn numeric_columns_bucketize() {
        let cfg = SchemaConfig::from_json(
            r#"{"label_column": "y", "columns": [{"name": "x", "kind": "numeric", "buckets": 4}]}"#,
        )
        .unwrap();
        let mut text = String::from("x,y\n");
        for i in 0..100 {
            text.push_str(&format!("{},{}\n", i, i % 2));
        }
        text.push_str(",0\n");
        let split = load_csv_reader(text.as_bytes(), &cfg).unwrap();
        assert_eq!(split.schemas[0].cardinality, 5);
        assert_eq!(split.train[0].fields[0], vec![1]);
        assert_eq!(split.test.last().unwrap().fields[0], vec![0]);
    }
}
