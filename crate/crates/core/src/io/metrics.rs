use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::IoError;
use crate::trainer::MetricsRow;

/// Append-only metrics CSV, flushed and synced to disk every
/// [`MetricsWriter::SYNC_EVERY`] rows so an interrupted run keeps its log.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
    rows: usize,
}

impl MetricsWriter {
    pub const SYNC_EVERY: usize = 500;

    pub fn create(path: &Path) -> Result<Self, IoError> {
        let file = File::create(path).map_err(|e| IoError::file(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            rows: 0,
        };
        w.line(MetricsRow::HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<(), IoError> {
        writeln!(self.out, "{s}").map_err(|e| IoError::file(&self.path, e))
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<(), IoError> {
        self.line(&row.to_csv())?;
        self.rows += 1;
        if self.rows % Self::SYNC_EVERY == 0 {
            self.sync()?;
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn sync(&mut self) -> Result<(), IoError> {
        self.out.flush().map_err(|e| IoError::file(&self.path, e))?;
        self.out.get_ref().sync_all().map_err(|e| IoError::file(&self.path, e))
    }

    pub fn finish(mut self) -> Result<usize, IoError> {
        self.sync()?;
        Ok(self.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_reach_disk_at_sync_points() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        let row = MetricsRow {
            iteration: 1,
            loss: 0.5,
            l1: 0.4,
            ssim: 0.9,
            mask_loss: 0.2,
            psnr: 20.0,
            n_anchors: 3,
            n_dynamic_anchors: 1,
            wall_ms: 1.0,
        };
        for i in 0..MetricsWriter::SYNC_EVERY {
            w.push(&MetricsRow { iteration: i + 1, ..row }).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), MetricsWriter::SYNC_EVERY + 1);
        assert_eq!(text.lines().next().unwrap(), MetricsRow::HEADER);
        w.push(&row).unwrap();
        assert_eq!(w.finish().unwrap(), MetricsWriter::SYNC_EVERY + 1);
    }
}
