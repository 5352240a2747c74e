//! CSV ingestion and emission for datasets.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// How the response column is identified.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    /// Zero-based column index.
    Index(usize),
    /// Header name (requires a header row).
    Name(String),
    /// The last column.
    Last,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Load a numeric CSV into a dataset. Rows containing any missing value
/// (empty cell, `NA`, `NaN`) are dropped; any other non-numeric cell is a
/// parse error reporting its 1-based row and column.
pub fn load_csv(path: &Path, target: &TargetColumn, has_header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, target, has_header)
}

/// Same as [`load_csv`] for any reader.
pub fn read_csv<R: Read>(reader: R, target: &TargetColumn, has_header: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .from_reader(reader);

    let header: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(|s| s.to_string()).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (ridx, record) in rdr.records().enumerate() {
        let record = record?;
        let w = record.len();
        match width {
            None => width = Some(w),
            Some(prev) if prev != w => {
                return Err(Error::Data(format!(
                    "row {} has {} fields, expected {}",
                    ridx + 1,
                    w,
                    prev
                )))
            }
            _ => {}
        }
        if record.iter().any(is_missing) {
            continue; // drop rows with missing values
        }
        let mut row = Vec::with_capacity(w);
        for (cidx, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: ridx + 1 + usize::from(has_header),
                col: cidx + 1,
                msg: format!("cannot parse {cell:?} as a number"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::Data("CSV contains no data rows".into()))?;
    if rows.is_empty() {
        return Err(Error::Data("no rows left after dropping missing values".into()));
    }
    if width < 2 {
        return Err(Error::Data("need at least one feature and one target column".into()));
    }

    let target_idx = match target {
        TargetColumn::Index(i) => {
            if *i >= width {
                return Err(Error::Parameter(format!(
                    "target column index {i} out of range for {width} columns"
                )));
            }
            *i
        }
        TargetColumn::Name(name) => {
            let header = header.as_ref().ok_or_else(|| {
                Error::Parameter("target column by name requires a header row".into())
            })?;
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parameter(format!("no column named {name:?}")))?
        }
        TargetColumn::Last => width - 1,
    };

    let n = rows.len();
    let p = width - 1;
    let x = DMatrix::from_fn(n, p, |i, j| {
        let jj = if j < target_idx { j } else { j + 1 };
        rows[i][jj]
    });
    let y = DVector::from_fn(n, |i, _| rows[i][target_idx]);
    Dataset::new(x, y)
}

/// Emit a dataset as CSV with features `x0..x{p-1}` and a final `y` column,
/// round-trippable bit-exactly through [`read_csv`].
pub fn write_dataset_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.p()).map(|j| format!("x{j}")).collect();
    header.push("y".to_string());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = Vec::with_capacity(data.p() + 1);
        for j in 0..data.p() {
            rec.push(fmt_exact(data.x()[(i, j)]));
        }
        rec.push(fmt_exact(data.y()[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal that parses back to the identical float.
fn fmt_exact(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // f64 round-trips through 17 significant digits
    let s = format!("{v:.17e}");
    if s.parse::<f64>() == Ok(v) {
        s
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_csv_loads() {
        let text = "a,b,y\n1,2,3\n4,5,6\n7,8,9\n";
        let d = read_csv(text.as_bytes(), &TargetColumn::Last, true).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.y()[1], 6.0);
    }

    #[test]
    fn missing_cell_drops_row() {
        let text = "a,b,y\n1,2,3\n4,,6\n7,8,9\n";
        let d = read_csv(text.as_bytes(), &TargetColumn::Last, true).unwrap();
        assert_eq!(d.n(), 2);
        let text2 = "a,b,y\n1,2,3\n4,NA,6\n";
        let d2 = read_csv(text2.as_bytes(), &TargetColumn::Last, true).unwrap();
        assert_eq!(d2.n(), 1);
    }

    #[test]
    fn bad_cell_reports_position() {
        let text = "a,b,y\n1,2,3\n4,oops,6\n";
        match read_csv(text.as_bytes(), &TargetColumn::Last, true) {
            Err(Error::Parse { row, col, .. }) => {
                assert_eq!((row, col), (3, 2));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn target_by_name_and_index() {
        let text = "y,a,b\n1,2,3\n4,5,6\n";
        let by_name = read_csv(text.as_bytes(), &TargetColumn::Name("y".into()), true).unwrap();
        assert_eq!(by_name.y()[0], 1.0);
        assert_eq!(by_name.x()[(0, 0)], 2.0);
        let by_idx = read_csv(text.as_bytes(), &TargetColumn::Index(0), true).unwrap();
        assert_eq!(by_idx, by_name);
        assert!(read_csv(text.as_bytes(), &TargetColumn::Name("z".into()), true).is_err());
        assert!(read_csv(text.as_bytes(), &TargetColumn::Index(7), true).is_err());
    }

    #[test]
    fn all_rows_missing_is_error() {
        let text = "a,b,y\n,2,3\n4,,6\n";
        assert!(read_csv(text.as_bytes(), &TargetColumn::Last, true).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn roundtrip_is_bit_exact(seed in 0u64..10_000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (n, p) = (rng.gen_range(1..12), rng.gen_range(1..6));
            let x = DMatrix::from_fn(n, p, |_, _| {
                let v: f64 = rng.gen_range(-1e6..1e6);
                v * rng.gen::<f64>()
            });
            let y = DVector::from_fn(n, |_, _| rng.gen_range(-1e3..1e3));
            let data = Dataset::new(x, y).unwrap();
            let mut buf = Vec::new();
            write_dataset_csv(&data, &mut buf).unwrap();
            let loaded = read_csv(buf.as_slice(), &TargetColumn::Last, true).unwrap();
            prop_assert_eq!(loaded.x(), data.x());
            prop_assert_eq!(loaded.y(), data.y());
        }
    }
}
