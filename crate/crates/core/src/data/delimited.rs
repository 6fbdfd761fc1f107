use std::path::Path;

use super::Dataset;
use crate::ndgrad::Tensor;
use crate::{Error, Result};

/// Layout of a numeric delimited-text table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelimitedOptions {
    pub delimiter: u8,
    /// Zero-based index of the integer label column.
    pub label_column: usize,
    pub has_header: bool,
}

impl Default for DelimitedOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            label_column: 0,
            has_header: false,
        }
    }
}

/// Reads a rectangular numeric table. Features are the non-label columns in
/// file order; labels are renumbered `0..C` in order of first appearance.
pub fn load_delimited(path: &Path, opts: &DelimitedOptions) -> Result<Dataset> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    parse(file, opts).map_err(|e| match e {
        ParseFailure::Io(source) => io_err(source),
        ParseFailure::Data(e) => e,
    })
}

enum ParseFailure {
    Io(std::io::Error),
    Data(Error),
}

impl From<Error> for ParseFailure {
    fn from(e: Error) -> Self {
        ParseFailure::Data(e)
    }
}

fn parse<R: std::io::Read>(input: R, opts: &DelimitedOptions) -> std::result::Result<Dataset, ParseFailure> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut width: Option<usize> = None;
    let mut features = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => ParseFailure::Io(io),
            other => ParseFailure::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}"))),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRow {
                line,
                expected,
                found: record.len(),
            }
            .into());
        }
        if opts.label_column >= expected {
            return Err(Error::invalid("data.label_column", format!("column {} does not exist", opts.label_column)).into());
        }
        for (col, cell) in record.iter().enumerate() {
            if col == opts.label_column {
                raw_labels.push(parse_label(cell).ok_or_else(|| Error::NonIntegerLabel {
                    line,
                    value: cell.to_string(),
                })?);
            } else {
                let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::NonNumeric {
                    line,
                    column: col,
                    value: cell.to_string(),
                })?;
                features.push(v);
            }
        }
    }
    let width = width.ok_or(Error::EmptyDataset)?;
    let mut seen: Vec<i64> = Vec::new();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(i) => i,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect();
    let features = Tensor::matrix(labels.len(), width - 1, features).map_err(Error::from)?;
    Ok(Dataset::new(features, labels, seen.len())?)
}

fn parse_label(cell: &str) -> Option<i64> {
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = cell.parse().ok()?;
    (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).then_some(f as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_rows_transcribed_exactly() {
        let f = write("5,0.5,-1\n9,2,3.25\n5,1e-3,0\n");
        let ds = load_delimited(f.path(), &DelimitedOptions::default()).unwrap();
        assert_eq!(ds.features(), &Tensor::from_rows(&[[0.5, -1.0], [2.0, 3.25], [1e-3, 0.0]]).unwrap());
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.classes(), 2);
    }

    #[test]
    fn header_delimiter_and_label_position() {
        let f = write("a;b;y\n1.0;2.0;7\n3.0;4.0;2.0\n");
        let opts = DelimitedOptions {
            delimiter: b';',
            label_column: 2,
            has_header: true,
        };
        let ds = load_delimited(f.path(), &opts).unwrap();
        assert_eq!(ds.features().row(1), &[3.0, 4.0]);
        assert_eq!(ds.labels(), &[0, 1]);
    }

    #[test]
    fn ragged_row_names_its_line() {
        let f = write("0,1,2\n1,3\n");
        match load_delimited(f.path(), &DelimitedOptions::default()) {
            Err(Error::RaggedRow { line: 2, expected: 3, found: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn distinct_error_kinds() {
        let f = write("0,1\n1,abc\n");
        assert!(matches!(
            load_delimited(f.path(), &DelimitedOptions::default()),
            Err(Error::NonNumeric { line: 2, column: 1, .. })
        ));
        let f = write("0.5,1\n");
        assert!(matches!(
            load_delimited(f.path(), &DelimitedOptions::default()),
            Err(Error::NonIntegerLabel { line: 1, .. })
        ));
        assert!(matches!(
            load_delimited(Path::new("/nonexistent/file.csv"), &DelimitedOptions::default()),
            Err(Error::Io { .. })
        ));
        let f = write("");
        assert!(matches!(load_delimited(f.path(), &DelimitedOptions::default()), Err(Error::EmptyDataset)));
    }
}
