use std::path::Path;

use mdes_core::io::write_rows;

use crate::error::Result;

/// A numeric CSV table built row by row.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header: Vec<&str> = self.header.iter().map(String::as_str).collect();
        write_rows(
            std::fs::File::create(path)?,
            &header,
            self.rows.iter().cloned(),
        )?;
        Ok(())
    }
}
