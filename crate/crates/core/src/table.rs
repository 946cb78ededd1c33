//! A small CSV-backed table of string cells.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("file is empty")]
    EmptyFile,
    #[error("row on line {line} has {found} cells, header has {expected}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unsupported delimiter `{0}` (use ',' or ';')")]
    BadDelimiter(char),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub delimiter: u8,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            header,
            rows: Vec::new(),
            delimiter: b',',
        }
    }

    pub fn with_rows(header: &[&str], rows: Vec<Vec<String>>) -> Self {
        let mut t = Table::new(header.iter().map(|h| h.to_string()).collect());
        t.rows = rows;
        t
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn column_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>, TableError> {
        names.iter().map(|n| self.column_index(n.as_ref())).collect()
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r[index].as_str())
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Reads CSV with a header line. Only `,` and `;` are accepted.
    pub fn read_from<R: Read>(reader: R, delimiter: char) -> Result<Self, TableError> {
        if delimiter != ',' && delimiter != ';' {
            return Err(TableError::BadDelimiter(delimiter));
        }
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter as u8)
            .has_headers(false)
            .flexible(true)
            .from_reader(reader);
        let mut records = rdr.records();
        let header: Vec<String> = match records.next() {
            Some(h) => h?.iter().map(str::to_string).collect(),
            None => return Err(TableError::EmptyFile),
        };
        let mut table = Table {
            header,
            rows: Vec::new(),
            delimiter: delimiter as u8,
        };
        for rec in records {
            let rec = rec?;
            if rec.len() != table.header.len() {
                return Err(TableError::RaggedRow {
                    line: rec.position().map(|p| p.line()).unwrap_or(0),
                    expected: table.header.len(),
                    found: rec.len(),
                });
            }
            table.rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(table)
    }

    pub fn parse(text: &str, delimiter: char) -> Result<Self, TableError> {
        Self::read_from(text.as_bytes(), delimiter)
    }

    pub fn load(path: impl AsRef<Path>, delimiter: char) -> Result<Self, TableError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(file, delimiter)
    }

    /// Writes RFC-4180 CSV with the table's own delimiter.
    pub fn write_to<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(self.delimiter)
            .from_writer(writer);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("cells are valid UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only() {
        let t = Table::parse("a,b\n", ',').unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert!(t.is_empty());
    }

    #[test]
    fn empty_file() {
        assert!(matches!(Table::parse("", ','), Err(TableError::EmptyFile)));
    }

    #[test]
    fn ragged_row() {
        let err = Table::parse("a,b\n1,2\n3\n", ',').unwrap_err();
        assert!(matches!(err, TableError::RaggedRow { line: 3, expected: 2, found: 1 }), "{err:?}");
    }

    #[test]
    fn quoting_and_semicolons() {
        let t = Table::parse("name;note\n\"Doe; J\";\"say \"\"hi\"\"\"\n", ';').unwrap();
        assert_eq!(t.rows[0], vec!["Doe; J", "say \"hi\""]);
        let again = Table::parse(&t.to_csv_string(), ';').unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn rejects_other_delimiters() {
        assert!(matches!(Table::parse("a\tb", '\t'), Err(TableError::BadDelimiter('\t'))));
    }
}
