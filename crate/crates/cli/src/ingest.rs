use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context};
use misspattern::{Column, Dataset};
use serde::Serialize;

/// A column is numeric when at least this share of its non-missing cells
/// parse as numbers.
pub const NUMERIC_SHARE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub sentinels: Vec<String>,
    pub delimiter: u8,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            sentinels: crate::config::DEFAULT_SENTINELS.iter().map(|s| s.to_string()).collect(),
            delimiter: b',',
        }
    }
}

/// Numeric column cells that did not parse and were set missing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercedColumn {
    pub column: String,
    pub cells: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub coerced: Vec<CoercedColumn>,
}

pub fn ingest(path: &Path, options: &IngestOptions) -> anyhow::Result<Ingested> {
    let file = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    ingest_reader(file, options).with_context(|| format!("while reading {}", path.display()))
}

pub fn ingest_reader<R: Read>(reader: R, options: &IngestOptions) -> anyhow::Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers().context("cannot read header row")?.iter().map(String::from).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        bail!("empty header row");
    }
    if let Some(j) = headers.iter().position(|h| h.is_empty()) {
        bail!("header row: column {} has no name", j + 1);
    }

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (i, record) in rdr.records().enumerate() {
        // line 1 is the header
        let record = record.with_context(|| format!("row {}", i + 2))?;
        for (j, field) in record.iter().enumerate() {
            cells[j].push(field.to_string());
        }
    }

    let mut coerced = Vec::new();
    let columns = headers
        .into_iter()
        .zip(cells)
        .map(|(name, raw)| {
            let (column, bad) = infer_column(name, raw, &options.sentinels);
            if bad > 0 {
                coerced.push(CoercedColumn {
                    column: column.name.clone(),
                    cells: bad,
                });
            }
            column
        })
        .collect();
    let dataset = Dataset::new(columns)?;
    Ok(Ingested { dataset, coerced })
}

fn infer_column(name: String, raw: Vec<String>, sentinels: &[String]) -> (Column, usize) {
    let present: Vec<Option<String>> = raw
        .into_iter()
        .map(|s| (!sentinels.contains(&s)).then_some(s))
        .collect();
    let n_present = present.iter().flatten().count();
    let parsed: Vec<Option<f64>> = present
        .iter()
        .map(|c| c.as_deref().and_then(|s| s.parse::<f64>().ok()))
        .collect();
    let n_parsed = parsed.iter().flatten().count();
    if n_present == 0 || n_parsed as f64 >= NUMERIC_SHARE * n_present as f64 {
        (Column::numeric(name, parsed), n_present - n_parsed)
    } else {
        (Column::categorical(name, present), 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use misspattern::ColumnData;

    fn read(text: &str) -> anyhow::Result<Ingested> {
        ingest_reader(text.as_bytes(), &IngestOptions::default())
    }

    #[test]
    fn sentinel_cell_is_missing() {
        let got = read("a,b,c\n1.5,NA,2.0\n").unwrap().dataset;
        assert_eq!(got.column("a").unwrap().data, ColumnData::Numeric(vec![Some(1.5)]));
        assert!(got.column("b").unwrap().data.is_missing(0));
        assert_eq!(got.column("c").unwrap().data, ColumnData::Numeric(vec![Some(2.0)]));
    }

    #[test]
    fn all_sentinel_column_is_kept() {
        let got = read("a,b\n1,NA\n2,.\n3,\n").unwrap().dataset;
        let b = got.column("b").unwrap();
        assert!((0..3).all(|i| b.data.is_missing(i)));
    }

    #[test]
    fn ninety_percent_rule() {
        let text = "v\n1\n2\nx\n4\n5\n6\n7\n8\n9\n10\n";
        let got = read(text).unwrap();
        let v = got.dataset.column("v").unwrap();
        assert!(v.is_numeric());
        assert!(v.data.is_missing(2));
        assert_eq!((0..10).filter(|&i| v.data.is_missing(i)).count(), 1);
        assert_eq!(got.coerced, vec![CoercedColumn { column: "v".into(), cells: 1 }]);

        // two bad cells out of ten tips it to categorical
        let got = read("v\n1\n2\nx\ny\n5\n6\n7\n8\n9\n10\n").unwrap();
        assert!(!got.dataset.column("v").unwrap().is_numeric());
    }

    #[test]
    fn ragged_row_reports_row() {
        let err = read("a,b\n1,2\n3\n").unwrap_err();
        assert!(format!("{err:#}").contains("row 3"), "{err:#}");
    }

    #[test]
    fn empty_header_rejected() {
        assert!(read("").is_err());
        let err = read("a,,c\n1,2,3\n").unwrap_err();
        assert!(format!("{err:#}").contains("column 2"), "{err:#}");
    }

    #[test]
    fn tab_delimiter() {
        let opts = IngestOptions { delimiter: b'\t', ..IngestOptions::default() };
        let got = ingest_reader("a\tb\n1\tNA\n".as_bytes(), &opts).unwrap().dataset;
        assert_eq!(got.n_cols(), 2);
    }
}
