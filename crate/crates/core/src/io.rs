//! Binary and text file formats: WROMGRID media, WROMSEQ matrix sequences, WROMMAT matrices,
//! WROMDS data series headers and PGM quick-looks.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::data::DataSeries;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, Medium};
use crate::rom::RomPair;
use crate::wave::ResponseRecord;

fn format_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {what}", path.display()))
}

fn read_header(reader: &mut impl BufRead, path: &Path, magic: &str) -> Result<Vec<String>> {
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let text = String::from_utf8(line).map_err(|_| format_err(path, "header is not text"))?;
    let mut fields = text.split_whitespace().map(str::to_owned);
    if fields.next().as_deref() != Some(magic) || fields.next().as_deref() != Some("v1") {
        return Err(format_err(path, format!("expected a {magic} v1 header")));
    }
    Ok(fields.collect())
}

fn parse<T: std::str::FromStr>(path: &Path, field: Option<&String>, name: &str) -> Result<T> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| format_err(path, format!("missing or invalid {name}")))
}

fn read_floats(reader: &mut impl Read, path: &Path, count: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(format_err(
            path,
            format!("expected {count} values, found {} bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn write_floats(out: &mut impl Write, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path)?))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

/// Writes a medium, one row per depth level.
pub fn write_grid(path: &Path, medium: &Medium) -> Result<()> {
    let g = medium.grid();
    let mut out = create(path)?;
    writeln!(
        out,
        "WROMGRID v1 {} {} {} {} {}",
        g.nx, g.ny, g.h, g.origin.0, g.origin.1
    )?;
    let speed = medium.speed();
    write_floats(
        &mut out,
        (0..g.ny).flat_map(|iy| (0..g.nx).map(move |ix| speed[g.index(ix, iy)])),
    )?;
    out.flush()?;
    Ok(())
}

/// Reads a medium written by [`write_grid`].
pub fn read_grid(path: &Path, c_ref: f64) -> Result<Medium> {
    let mut reader = open(path)?;
    let f = read_header(&mut reader, path, "WROMGRID")?;
    let nx: usize = parse(path, f.first(), "nx")?;
    let ny: usize = parse(path, f.get(1), "ny")?;
    let h: f64 = parse(path, f.get(2), "h")?;
    let x0: f64 = parse(path, f.get(3), "x0")?;
    let y0: f64 = parse(path, f.get(4), "y0")?;
    let grid = Grid2D::new(nx, ny, h, (x0, y0))?;
    let rows = read_floats(&mut reader, path, nx * ny)?;
    let mut speed = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            speed[grid.index(ix, iy)] = rows[iy * nx + ix];
        }
    }
    Medium::new(grid, speed, c_ref)
}

/// Time-ordered sequence of equally sized matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSequence {
    pub dt: f64,
    pub matrices: Vec<DMatrix<f64>>,
}

pub fn write_seq(path: &Path, seq: &MatrixSequence) -> Result<()> {
    let (rows, cols) = seq.matrices.first().map_or((0, 0), |m| m.shape());
    if seq.matrices.iter().any(|m| m.shape() != (rows, cols)) {
        return Err(Error::DimensionMismatch("sequence matrices differ in shape".into()));
    }
    let mut out = create(path)?;
    writeln!(out, "WROMSEQ v1 {} {rows} {cols} {}", seq.matrices.len(), seq.dt)?;
    for m in &seq.matrices {
        write_floats(&mut out, (0..rows).flat_map(|r| (0..cols).map(move |c| m[(r, c)])))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_seq(path: &Path) -> Result<MatrixSequence> {
    let mut reader = open(path)?;
    let f = read_header(&mut reader, path, "WROMSEQ")?;
    let count: usize = parse(path, f.first(), "count")?;
    let rows: usize = parse(path, f.get(1), "rows")?;
    let cols: usize = parse(path, f.get(2), "cols")?;
    let dt: f64 = parse(path, f.get(3), "dt")?;
    let values = read_floats(&mut reader, path, count * rows * cols)?;
    let matrices = values
        .chunks(rows * cols.max(1))
        .take(count)
        .map(|c| DMatrix::from_row_slice(rows, cols, c))
        .collect();
    Ok(MatrixSequence { dt, matrices })
}

pub fn write_mat(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "WROMMAT v1 {} {}", m.nrows(), m.ncols())?;
    write_floats(&mut out, (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)])))?;
    out.flush()?;
    Ok(())
}

pub fn read_mat(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = open(path)?;
    let f = read_header(&mut reader, path, "WROMMAT")?;
    let rows: usize = parse(path, f.first(), "rows")?;
    let cols: usize = parse(path, f.get(1), "cols")?;
    let values = read_floats(&mut reader, path, rows * cols)?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes an array response as a WROMSEQ of `M(t_k)` plus a `<path>.meta` sidecar holding the
/// time of the first sample.
pub fn write_record(path: &Path, record: &ResponseRecord) -> Result<()> {
    let seq = MatrixSequence {
        dt: record.dt(),
        matrices: (0..record.n_steps()).map(|k| record.matrix_at(k)).collect(),
    };
    write_seq(path, &seq)?;
    let mut meta = create(&with_suffix(path, ".meta"))?;
    writeln!(meta, "t0={}", record.t0())?;
    meta.flush()?;
    Ok(())
}

/// Reads a response written by [`write_record`]; without a sidecar the record starts at `t = 0`.
pub fn read_record(path: &Path) -> Result<ResponseRecord> {
    let seq = read_seq(path)?;
    let meta_path = with_suffix(path, ".meta");
    let t0 = match fs::read_to_string(&meta_path) {
        Ok(text) => text
            .lines()
            .find_map(|l| l.trim().strip_prefix("t0=")?.parse().ok())
            .ok_or_else(|| format_err(&meta_path, "missing t0"))?,
        Err(_) => 0.0,
    };
    let steps = seq.matrices.len();
    let m = seq.matrices.first().map_or(0, |x| x.nrows());
    if seq.matrices.iter().any(|x| x.shape() != (m, m)) {
        return Err(format_err(path, "response matrices must be square"));
    }
    let mut record = ResponseRecord::zeros(m, steps, seq.dt, t0);
    for r in 0..m {
        for s in 0..m {
            let trace = record.trace_mut(r, s);
            for (k, mk) in seq.matrices.iter().enumerate() {
                trace[k] = mk[(r, s)];
            }
        }
    }
    Ok(record)
}

/// Writes `<stem>.wromds`, `<stem>_d.wromseq` and `<stem>_ddot.wromseq`.
pub fn write_data_series(stem: &Path, series: &DataSeries) -> Result<()> {
    let mut header = create(&with_suffix(stem, ".wromds"))?;
    writeln!(
        header,
        "WROMDS v1 tau={} n={} m={}",
        series.tau(),
        series.n(),
        series.m()
    )?;
    header.flush()?;
    let seq = |matrices: &[DMatrix<f64>]| MatrixSequence {
        dt: series.tau(),
        matrices: matrices.to_vec(),
    };
    write_seq(&with_suffix(stem, "_d.wromseq"), &seq(series.d()))?;
    write_seq(&with_suffix(stem, "_ddot.wromseq"), &seq(series.ddot()))
}

pub fn read_data_series(stem: &Path) -> Result<DataSeries> {
    let path = with_suffix(stem, ".wromds");
    let mut reader = open(&path)?;
    let f = read_header(&mut reader, &path, "WROMDS")?;
    let value = |key: &str| -> Result<f64> {
        f.iter()
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
            .ok_or_else(|| format_err(&path, format!("missing {key}")))
    };
    let tau = value("tau")?;
    let (n, m) = (value("n")? as usize, value("m")? as usize);
    let d = read_seq(&with_suffix(stem, "_d.wromseq"))?.matrices;
    let ddot = read_seq(&with_suffix(stem, "_ddot.wromseq"))?.matrices;
    if d.len() != 2 * n || d.first().is_some_and(|x| x.nrows() != m) {
        return Err(format_err(&path, "header disagrees with the sequences"));
    }
    DataSeries::new(d, ddot, tau)
}

/// Writes `<stem>_r.wrommat`, `<stem>_prom.wrommat`, `<stem>_arom.wrommat` and a `<stem>.rom`
/// metadata file.
pub fn write_rom_pair(stem: &Path, rom: &RomPair, tau: f64) -> Result<()> {
    write_mat(&with_suffix(stem, "_r.wrommat"), rom.r().matrix())?;
    write_mat(&with_suffix(stem, "_prom.wrommat"), rom.p_rom.matrix())?;
    write_mat(&with_suffix(stem, "_arom.wrommat"), rom.a_rom.matrix())?;
    let mut meta = create(&with_suffix(stem, ".rom"))?;
    writeln!(meta, "tau={tau}")?;
    writeln!(meta, "n={}", rom.p_rom.n())?;
    writeln!(meta, "m={}", rom.p_rom.m())?;
    writeln!(meta, "truncation_rank={}", rom.truncation_rank)?;
    meta.flush()?;
    Ok(())
}

/// 8-bit grayscale image of a `width × height` row-major field, scaled from its minimum to its
/// maximum.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {width}x{height} image",
            values.len()
        )));
    }
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = create(path)?;
    write!(out, "P5\n{width} {height}\n255\n")?;
    let pixels: Vec<u8> = values
        .iter()
        .map(|v| {
            if v.is_finite() {
                (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    out.write_all(&pixels)?;
    out.flush()?;
    Ok(())
}

/// Quick-look of a medium, one image row per depth level.
pub fn write_medium_pgm(path: &Path, medium: &Medium) -> Result<()> {
    let g = medium.grid();
    let rows: Vec<f64> = (0..g.ny)
        .flat_map(|iy| (0..g.nx).map(move |ix| medium.speed_at(ix, iy)))
        .collect();
    write_pgm(path, g.nx, g.ny, &rows)
}
