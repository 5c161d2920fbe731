//! Readers for the delimited text files the tools consume: feature
//! matrices, prediction tensors, and plain value vectors.
//!
//! Fields are separated by commas when a line contains one, otherwise by
//! whitespace. Blank lines are skipped. Errors carry 1-based line and field
//! positions.

use std::fs;
use std::path::Path;

use crate::blackbox::TensorEntry;
use crate::error::{Error, Result};

fn fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn numbered_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(idx, line)| (idx + 1, fields(line)))
}

fn parse_value(display: &Path, field: &str, line: usize, col: usize) -> Result<f64> {
    field.parse().map_err(|_| {
        Error::parse(format!(
            "{}: line {line}, field {col}: cannot parse {field:?} as a number",
            display.display()
        ))
    })
}

fn parse_index(display: &Path, field: &str, line: usize, col: usize, name: &str) -> Result<usize> {
    let raw: usize = field.parse().map_err(|_| {
        Error::parse(format!(
            "{}: line {line}, field {col}: cannot parse {field:?} as index {name}",
            display.display()
        ))
    })?;
    if raw == 0 {
        return Err(Error::parse(format!(
            "{}: line {line}, field {col}: index {name} is 1-based, got 0",
            display.display()
        )));
    }
    Ok(raw - 1)
}

/// Reads a numeric matrix, one row per line. With `has_header` the first
/// non-blank line is discarded. Every row must have the same field count.
pub fn read_data_matrix(path: impl AsRef<Path>, has_header: bool) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (line, raw) in numbered_rows(&text).skip(usize::from(has_header)) {
        let expected = *width.get_or_insert(raw.len());
        if raw.len() != expected {
            return Err(Error::parse(format!(
                "{}: line {line} has {} fields, expected {expected}",
                path.display(),
                raw.len()
            )));
        }
        let mut row = Vec::with_capacity(raw.len());
        for (col, field) in raw.iter().enumerate() {
            row.push(parse_value(path, field, line, col + 1)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Reads a single column of numbers, one per line.
pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (line, raw) in numbered_rows(&text) {
        if raw.len() != 1 {
            return Err(Error::parse(format!(
                "{}: line {line} has {} fields, expected a single value per line",
                path.display(),
                raw.len()
            )));
        }
        values.push(parse_value(path, raw[0], line, 1)?);
    }
    if values.is_empty() {
        return Err(Error::parse(format!("{}: no values", path.display())));
    }
    Ok(values)
}

/// Reads a prediction tensor. The first non-blank line must be a header
/// naming the four columns `i`, `k`, `v`, `value` (any order,
/// case-insensitive); data rows carry 1-based indices.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Vec<TensorEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut rows = numbered_rows(&text);
    let Some((header_line, header)) = rows.next() else {
        return Err(Error::parse(format!(
            "{}: missing header row (expected columns i, k, v, value)",
            path.display()
        )));
    };
    let mut cols = [None; 4];
    let names = ["i", "k", "v", "value"];
    for (pos, field) in header.iter().enumerate() {
        let lower = field.to_ascii_lowercase();
        match names.iter().position(|&n| n == lower) {
            Some(slot) if cols[slot].is_none() => cols[slot] = Some(pos),
            _ => {
                return Err(Error::parse(format!(
                    "{}: line {header_line}: unexpected or repeated header column {field:?} \
                     (expected i, k, v, value)",
                    path.display()
                )))
            }
        }
    }
    let [Some(ci), Some(ck), Some(cv), Some(cval)] = cols else {
        return Err(Error::parse(format!(
            "{}: line {header_line}: header must name all of i, k, v, value",
            path.display()
        )));
    };
    let mut entries = Vec::new();
    for (line, raw) in rows {
        if raw.len() != 4 {
            return Err(Error::parse(format!(
                "{}: line {line} has {} fields, expected 4",
                path.display(),
                raw.len()
            )));
        }
        entries.push(TensorEntry {
            point: parse_index(path, raw[ci], line, ci + 1, "i")?,
            donor: parse_index(path, raw[ck], line, ck + 1, "k")?,
            var: parse_index(path, raw[cv], line, cv + 1, "v")?,
            value: parse_value(path, raw[cval], line, cval + 1)?,
        });
    }
    if entries.is_empty() {
        return Err(Error::parse(format!(
            "{}: no tensor entries after the header",
            path.display()
        )));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn comma_and_whitespace_delimiters_parse_alike() {
        let a = file("1.0, 2.0\n3.0,4.0\n");
        let b = file("1.0 2.0\n3.0\t4.0\n");
        let want = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(read_data_matrix(a.path(), false).unwrap(), want);
        assert_eq!(read_data_matrix(b.path(), false).unwrap(), want);
    }

    #[test]
    fn header_flag_skips_the_first_row() {
        let f = file("age,bmi\n1,2\n");
        assert_eq!(
            read_data_matrix(f.path(), true).unwrap(),
            vec![vec![1.0, 2.0]]
        );
        assert!(read_data_matrix(f.path(), false).is_err());
    }

    #[test]
    fn blank_lines_are_skipped() {
        let f = file("\n1 2\n\n3 4\n\n");
        assert_eq!(
            read_data_matrix(f.path(), false).unwrap(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0]]
        );
    }

    #[test]
    fn ragged_rows_and_bad_numbers_name_their_position() {
        let f = file("1 2\n3\n");
        let err = read_data_matrix(f.path(), false).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let f = file("1 x\n");
        let err = read_data_matrix(f.path(), false).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("field 2"), "{err}");
    }

    #[test]
    fn empty_matrix_is_an_error() {
        let f = file("\n");
        assert!(read_data_matrix(f.path(), false).is_err());
        let only_header = file("a,b\n");
        assert!(read_data_matrix(only_header.path(), true).is_err());
    }

    #[test]
    fn missing_file_surfaces_an_io_error() {
        assert!(matches!(
            read_data_matrix("/nonexistent/f.csv", false),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn vector_wants_exactly_one_field_per_line() {
        let f = file("1.5\n2.5\n");
        assert_eq!(read_vector(f.path()).unwrap(), vec![1.5, 2.5]);
        let wide = file("1.5 2.5\n");
        assert!(read_vector(wide.path()).is_err());
    }

    #[test]
    fn tensor_round_trips_with_reordered_header() {
        let f = file("value, v, k, i\n7.25, 1, 2, 1\n-1,2,1,3\n");
        let entries = read_tensor(f.path()).unwrap();
        assert_eq!(
            entries,
            vec![
                TensorEntry { point: 0, donor: 1, var: 0, value: 7.25 },
                TensorEntry { point: 2, donor: 0, var: 1, value: -1.0 },
            ]
        );
    }

    #[test]
    fn tensor_rejects_bad_headers_and_zero_indices() {
        let no_header = file("1,1,1,2.0\n");
        assert!(read_tensor(no_header.path()).is_err());
        let dup = file("i,i,v,value\n");
        assert!(read_tensor(dup.path()).is_err());
        let zero = file("i,k,v,value\n0,1,1,2.0\n");
        let err = read_tensor(zero.path()).unwrap_err().to_string();
        assert!(err.contains("1-based"), "{err}");
        let empty = file("i,k,v,value\n");
        assert!(read_tensor(empty.path()).is_err());
    }
}
