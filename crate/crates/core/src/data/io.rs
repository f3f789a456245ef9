use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use super::{validate_schema, ColumnKind, ColumnSchema, Dataset, Encoding, SegmentKind, SplitTag};
use crate::{Error, Result};

/// Decoded, human-readable rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::InvalidArgument(format!("{other:?}")),
        })?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

fn parse_binary(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Some(1.0),
        "0" | "false" | "f" | "no" | "n" => Some(0.0),
        _ => None,
    }
}

/// Load a CSV file with a header row and encode it against `schema`.
///
/// Rows whose label cell is blank are kept with the label masked.
pub fn load_csv(path: &Path, schema: &[ColumnSchema], split: SplitTag) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, schema, split, None)
}

/// Load a CSV against an existing encoding instead of fitting continuous
/// ranges, so rows written by [`Table::write_csv`] come back on the same
/// scale as the data they were generated from.
pub fn load_csv_with_encoding(path: &Path, schema: &[ColumnSchema], encoding: &Encoding, split: SplitTag) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, schema, split, Some(encoding))
}

/// Same as [`load_csv`] for in-memory CSV text.
pub fn load_csv_str(text: &str, schema: &[ColumnSchema], split: SplitTag) -> Result<Dataset> {
    load_csv_reader(text.as_bytes(), schema, split, None)
}

fn load_csv_reader<R: Read>(reader: R, schema: &[ColumnSchema], split: SplitTag, fixed: Option<&Encoding>) -> Result<Dataset> {
    validate_schema(schema)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    for col in schema {
        if !header.iter().any(|h| h == &col.name) {
            return Err(Error::SchemaMismatch {
                column: col.name.clone(),
                reason: "missing from CSV header".into(),
            });
        }
    }
    if let Some(extra) = header.iter().find(|h| !schema.iter().any(|c| &c.name == *h)) {
        return Err(Error::SchemaMismatch {
            column: extra.clone(),
            reason: "present in CSV header but not in schema".into(),
        });
    }
    let position: Vec<usize> = schema
        .iter()
        .map(|c| header.iter().position(|h| h == &c.name).expect("checked above"))
        .collect();

    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    // Parse continuous values first to fit the min-max ranges.
    let mut continuous: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (c, col) in schema.iter().enumerate() {
        if col.kind != ColumnKind::Continuous {
            continue;
        }
        let mut vals = Vec::with_capacity(records.len());
        for (r, rec) in records.iter().enumerate() {
            let cell = rec.get(position[c]).unwrap_or("");
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::UnparseableCell {
                row: r,
                column: col.name.clone(),
                value: cell.to_string(),
            })?;
            vals.push(v);
        }
        continuous.insert(col.name.clone(), vals);
    }
    let ranges: BTreeMap<String, (f64, f64)> = continuous
        .iter()
        .map(|(k, v)| {
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (min, max) = if v.is_empty() { (0.0, 1.0) } else { (min, max) };
            (k.clone(), (min, max))
        })
        .collect();
    let encoding = match fixed {
        Some(enc) => {
            let fresh = Encoding::new(schema, &ranges)?;
            if fresh.width != enc.width || fresh.label != enc.label {
                return Err(Error::ShapeMismatch("schema does not match the given encoding".into()));
            }
            enc.clone()
        }
        None => Encoding::new(schema, &ranges)?,
    };

    let n = records.len();
    let mut features = Array2::<f64>::zeros((n, encoding.width));
    let mut labels = Vec::with_capacity(n);
    let mut seg_iter_index = BTreeMap::new();
    for (s, seg) in encoding.segments.iter().enumerate() {
        seg_iter_index.insert(seg.name.clone(), s);
    }

    for (r, rec) in records.iter().enumerate() {
        for (c, col) in schema.iter().enumerate() {
            let cell = rec.get(position[c]).unwrap_or("");
            if col.is_label {
                if cell.is_empty() {
                    labels.push(None);
                    continue;
                }
                let y = match col.kind {
                    ColumnKind::Binary => parse_binary(cell).map(|v| v as usize),
                    _ => col.categories.iter().position(|k| k == cell),
                };
                let y = y.ok_or_else(|| Error::SchemaMismatch {
                    column: col.name.clone(),
                    reason: format!("row {r}: label value `{cell}` not among declared classes"),
                })?;
                labels.push(Some(y));
                continue;
            }
            let seg = &encoding.segments[seg_iter_index[&col.name]];
            match &seg.kind {
                SegmentKind::Continuous { .. } => {
                    features[[r, seg.offset]] = seg.scale(continuous[&col.name][r]);
                }
                SegmentKind::Binary => {
                    let v = parse_binary(cell).ok_or_else(|| Error::SchemaMismatch {
                        column: col.name.clone(),
                        reason: format!("row {r}: `{cell}` is not a binary value"),
                    })?;
                    features[[r, seg.offset]] = v;
                }
                SegmentKind::Categorical { categories } => {
                    let k = categories.iter().position(|k| k == cell).ok_or_else(|| Error::SchemaMismatch {
                        column: col.name.clone(),
                        reason: format!("row {r}: category `{cell}` not declared"),
                    })?;
                    features[[r, seg.offset + k]] = 1.0;
                }
            }
        }
    }
    Dataset::from_parts(schema.to_vec(), encoding, features, labels, split)
}

pub(super) fn decode_with_labels(
    schema: &[ColumnSchema],
    encoding: &Encoding,
    rows: ArrayView2<'_, f64>,
    labels: &[Option<usize>],
) -> Result<Table> {
    if rows.ncols() != encoding.width {
        return Err(Error::ShapeMismatch(format!(
            "encoded width {} does not match schema width {}",
            rows.ncols(),
            encoding.width
        )));
    }
    if labels.len() != rows.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            rows.nrows(),
            labels.len()
        )));
    }
    let header: Vec<String> = schema.iter().map(|c| c.name.clone()).collect();
    let mut out = Vec::with_capacity(rows.nrows());
    for (r, row) in rows.outer_iter().enumerate() {
        let mut cells = Vec::with_capacity(schema.len());
        for col in schema {
            if col.is_label {
                cells.push(match labels[r] {
                    Some(y) => encoding
                        .label
                        .classes
                        .get(y)
                        .cloned()
                        .ok_or_else(|| Error::Decode {
                            row: r,
                            reason: format!("label index {y} out of range"),
                        })?,
                    None => String::new(),
                });
                continue;
            }
            let seg = encoding.segment(&col.name).expect("schema and encoding agree");
            let cell = match &seg.kind {
                SegmentKind::Continuous { .. } => {
                    let v = row[seg.offset];
                    if !v.is_finite() {
                        return Err(Error::Decode {
                            row: r,
                            reason: format!("non-finite value in `{}`", seg.name),
                        });
                    }
                    format!("{}", seg.unscale(v))
                }
                SegmentKind::Binary => {
                    let v = row[seg.offset];
                    if v == 0.0 || v == 1.0 {
                        format!("{}", v as u8)
                    } else {
                        return Err(Error::Decode {
                            row: r,
                            reason: format!("binary cell `{}` holds {v}, expected 0 or 1", seg.name),
                        });
                    }
                }
                SegmentKind::Categorical { categories } => {
                    let group = row.slice(ndarray::s![seg.range()]);
                    let ones = group.iter().filter(|&&v| v == 1.0).count();
                    let zeros = group.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || ones + zeros != group.len() {
                        return Err(Error::Decode {
                            row: r,
                            reason: format!("one-hot group `{}` does not sum to 1", seg.name),
                        });
                    }
                    let k = group.iter().position(|&v| v == 1.0).expect("one hot");
                    categories[k].clone()
                }
            };
            cells.push(cell);
        }
        out.push(cells);
    }
    Ok(Table { header, rows: out })
}

#[cfg(test)]
mod tests {
    use super::super::{decode, ColumnSchema};
    use super::*;

    fn schema() -> Vec<ColumnSchema> {
        vec![
            ColumnSchema::continuous("age"),
            ColumnSchema::categorical("sex", &["M", "F"]).sensitive(),
            ColumnSchema::binary("income").label(),
        ]
    }

    const CSV: &str = "age,sex,income\n20,M,1\n40,F,\n60,F,0\n";

    #[test]
    fn loads_and_encodes_three_rows() {
        let d = load_csv_str(CSV, &schema(), SplitTag::Train).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.encoding().width, 3);
        assert_eq!(d.label_mask(), &[true, false, true]);
        assert_eq!(d.features().row(1).to_vec(), vec![0.5, 0.0, 1.0]);
    }

    #[test]
    fn header_mismatch_names_the_column() {
        let err = load_csv_str("age,gender,income\n1,M,0\n", &schema(), SplitTag::Train).unwrap_err();
        match err {
            Error::SchemaMismatch { column, .. } => assert_eq!(column, "sex"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn undeclared_category_rejected() {
        let err = load_csv_str("age,sex,income\n1,X,0\n", &schema(), SplitTag::Train).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch { ref column, .. } if column == "sex"));
    }

    #[test]
    fn bad_continuous_cell_reports_row() {
        let err = load_csv_str("age,sex,income\n1,M,0\nabc,F,1\n", &schema(), SplitTag::Train).unwrap_err();
        assert!(matches!(err, Error::UnparseableCell { row: 1, .. }));
    }

    #[test]
    fn round_trip_is_exact_for_discrete_columns() {
        let d = load_csv_str(CSV, &schema(), SplitTag::Train).unwrap();
        let t = d.to_table().unwrap();
        assert_eq!(t.column("sex").unwrap(), vec!["M", "F", "F"]);
        assert_eq!(t.column("income").unwrap(), vec!["1", "", "0"]);
        let ages: Vec<f64> = t.column("age").unwrap().iter().map(|s| s.parse().unwrap()).collect();
        for (a, b) in ages.iter().zip([20.0, 40.0, 60.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_rejects_empty_one_hot() {
        let d = load_csv_str(CSV, &schema(), SplitTag::Train).unwrap();
        let rows = ndarray::array![[0.5, 0.0, 0.0]];
        assert!(matches!(decode(&d, rows.view(), None), Err(Error::Decode { .. })));
        let relaxed = ndarray::array![[0.5, 0.3, 0.7]];
        assert!(decode(&d, relaxed.view(), None).is_err());
        let ok = d.encoding().discretize(relaxed.view());
        let t = decode(&d, ok.view(), Some(&[1])).unwrap();
        assert_eq!(t.rows[0], vec!["40", "F", "1"]);
    }
}
