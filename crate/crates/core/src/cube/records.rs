use std::fs::File;
use std::path::Path;

use super::IngestError;

/// Column-major table of string values with one designated PSID column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordBatch {
    names: Vec<String>,
    columns: Vec<Vec<String>>,
    psid_index: usize,
    rejected_empty_psid: usize,
}

impl RecordBatch {
    /// Builds a batch from row-major data. Rows with an empty PSID are
    /// dropped and counted.
    pub fn from_rows<I, R>(names: Vec<String>, psid_column: &str, rows: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let psid_index = names
            .iter()
            .position(|n| n == psid_column)
            .ok_or_else(|| IngestError::MissingColumn(psid_column.to_string()))?;
        let mut batch = Self {
            columns: vec![Vec::new(); names.len()],
            names,
            psid_index,
            rejected_empty_psid: 0,
        };
        for (i, row) in rows.into_iter().enumerate() {
            let row: Vec<String> = row.into_iter().collect();
            // Row i is line i + 2 of an equivalent file with a header.
            batch.push_row(row, i as u64 + 2)?;
        }
        Ok(batch)
    }

    fn push_row(&mut self, row: Vec<String>, line: u64) -> Result<(), IngestError> {
        if row.len() != self.names.len() {
            return Err(IngestError::Ragged {
                line,
                expected: self.names.len(),
                found: row.len(),
            });
        }
        if row[self.psid_index].is_empty() {
            self.rejected_empty_psid += 1;
            return Ok(());
        }
        for (col, value) in self.columns.iter_mut().zip(row) {
            col.push(value);
        }
        Ok(())
    }

    pub fn row_count(&self) -> usize {
        self.columns[self.psid_index].len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[String]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn psid_column(&self) -> &str {
        &self.names[self.psid_index]
    }

    pub fn psids(&self) -> &[String] {
        &self.columns[self.psid_index]
    }

    /// Rows skipped because their PSID was empty.
    pub fn rejected_empty_psid(&self) -> usize {
        self.rejected_empty_psid
    }
}

/// Reads a header-bearing delimited file. RFC 4180 double quotes are
/// honoured; every row must have as many fields as the header.
pub fn load_records(path: &Path, psid_column: &str, delimiter: u8) -> Result<RecordBatch, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
        return Err(IngestError::MissingHeader);
    }
    let mut batch = RecordBatch::from_rows(names, psid_column, std::iter::empty::<Vec<String>>())?;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        batch.push_row(record.iter().map(str::to_owned).collect(), line)?;
    }
    Ok(batch)
}

fn csv_error(err: csv::Error, fallback_line: u64) -> IngestError {
    let line = err.position().map_or(fallback_line, |p| p.line());
    IngestError::Parse {
        line,
        message: err.to_string(),
    }
}
