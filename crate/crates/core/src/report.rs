//! Plot-ready CSV tables and video datasets.
//!
//! Numbers are written with 17 significant digits, enough to read back the
//! exact same `f64`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::video::Video;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).map_err(io_error)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io_error)?;
        }
        w.flush().map_err(|e| Error::config(format!("write failed: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

fn io_error(e: csv::Error) -> Error {
    Error::config(format!("csv: {e}"))
}

/// One row per video, columns `x_<frame>_<coord>` in frame-major order.
pub fn videos_table(videos: &[Video]) -> Table {
    let (frames, dim) = videos.first().map_or((0, 0), |v| (v.frames(), v.dim()));
    let mut table = Table::new((0..frames).flat_map(|i| (0..dim).map(move |k| format!("x_{i}_{k}"))));
    for v in videos {
        table.push(v.as_slice().iter().map(|&x| Cell::Num(x)).collect());
    }
    table
}

/// Reads a dataset written by [`videos_table`]; every row must hold `frames * dim` values.
pub fn read_videos<R: Read>(input: R, frames: usize, dim: usize) -> Result<Vec<Video>> {
    let mut reader = csv::Reader::from_reader(input);
    let width = reader.headers().map_err(io_error)?.len();
    if width != frames * dim {
        return Err(Error::Shape {
            expected: format!("{} columns", frames * dim),
            got: format!("{width} columns"),
        });
    }
    let mut videos = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(io_error)?;
        let data = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::config(format!("row {}: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        videos.push(Video::from_flat(frames, dim, data)?);
    }
    Ok(videos)
}
