//! Weather grid files, one per timestamp, named `t{timestamp:06}.wxg`
//! (ASCII) or `.wxb` (binary). Both start with the line `WXG v1 H W`; the
//! ASCII form then lists the H·W VIL levels and the H·W ET levels as
//! whitespace-separated integers, the binary form stores the same levels
//! as one byte each.

use std::path::{Path, PathBuf};

use delaycast_core::wx::WeatherGrid;

use crate::error::{CliError, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Ascii,
    Binary,
}

impl GridFormat {
    pub fn extension(self) -> &'static str {
        match self {
            GridFormat::Ascii => "wxg",
            GridFormat::Binary => "wxb",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "wxg" => Some(GridFormat::Ascii),
            "wxb" => Some(GridFormat::Binary),
            _ => None,
        }
    }
}

pub fn grid_path(dir: &Path, timestamp: usize, format: GridFormat) -> PathBuf {
    dir.join(format!("t{timestamp:06}.{}", format.extension()))
}

pub fn encode(grid: &WeatherGrid, format: GridFormat) -> Vec<u8> {
    let mut out = format!("WXG v1 {} {}\n", grid.height(), grid.width()).into_bytes();
    match format {
        GridFormat::Binary => {
            out.extend_from_slice(grid.vil());
            out.extend_from_slice(grid.et());
        }
        GridFormat::Ascii => {
            for levels in [grid.vil(), grid.et()] {
                for row in levels.chunks(grid.width()) {
                    let line: Vec<String> = row.iter().map(u8::to_string).collect();
                    out.extend_from_slice(line.join(" ").as_bytes());
                    out.push(b'\n');
                }
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8], timestamp: usize, format: GridFormat) -> Result<WeatherGrid> {
    let bad = |m: &str| CliError::Data(format!("grid t={timestamp}: {m}"));
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not text"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (h, w) = match parts.as_slice() {
        ["WXG", "v1", h, w] => (
            h.parse::<usize>().map_err(|_| bad("bad height"))?,
            w.parse::<usize>().map_err(|_| bad("bad width"))?,
        ),
        _ => return Err(bad("header must be `WXG v1 H W`")),
    };
    let n = h * w;
    let body = &bytes[nl + 1..];
    let levels: Vec<u8> = match format {
        GridFormat::Binary => body.to_vec(),
        GridFormat::Ascii => std::str::from_utf8(body)
            .map_err(|_| bad("body is not text"))?
            .split_whitespace()
            .map(|t| t.parse::<u8>().map_err(|_| bad("level is not a small integer")))
            .collect::<Result<_>>()?,
    };
    if levels.len() != 2 * n {
        return Err(bad(&format!("expected {} levels, found {}", 2 * n, levels.len())));
    }
    let (vil, et) = levels.split_at(n);
    Ok(WeatherGrid::new(timestamp, h, w, vil.to_vec(), et.to_vec())?)
}

pub fn write_grid(dir: &Path, grid: &WeatherGrid, format: GridFormat) -> Result<PathBuf> {
    let path = grid_path(dir, grid.timestamp, format);
    fsutil::write(&path, &encode(grid, format))?;
    Ok(path)
}

fn timestamp_of(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix('t')?.parse().ok()
}

pub fn read_grid(path: &Path) -> Result<WeatherGrid> {
    let format =
        GridFormat::from_path(path).ok_or_else(|| CliError::Data(format!("{}: not a grid file", path.display())))?;
    let t =
        timestamp_of(path).ok_or_else(|| CliError::Data(format!("{}: file name lacks a timestamp", path.display())))?;
    decode(&fsutil::read(path)?, t, format)
}

/// Every grid file in `dir`, sorted by timestamp.
pub fn read_dir(dir: &Path) -> Result<Vec<WeatherGrid>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if GridFormat::from_path(&path).is_some() {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(CliError::Data(format!("{}: no grid files", dir.display())));
    }
    paths.sort_by_key(|p| timestamp_of(p));
    let grids: Vec<WeatherGrid> = paths.iter().map(|p| read_grid(p)).collect::<Result<_>>()?;
    if grids.windows(2).any(|w| w[0].timestamp == w[1].timestamp) {
        return Err(CliError::Data(format!("{}: duplicate grid timestamps", dir.display())));
    }
    Ok(grids)
}
