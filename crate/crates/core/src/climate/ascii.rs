//! ESRI ASCII grid reader and writer.

use std::fmt::Write as _;

use super::{ClimateError, RasterGrid};

const DEFAULT_NODATA: f64 = -9999.0;

pub fn parse(text: &str) -> Result<RasterGrid, ClimateError> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centered = (false, false);
    let mut cellsize = None;
    let mut nodata = DEFAULT_NODATA;
    let mut lines = text.lines().peekable();

    while let Some(line) = lines.peek() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            lines.next();
            continue;
        };
        let key = key.to_ascii_lowercase();
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            break;
        }
        let value: f64 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ClimateError::CorruptFile(format!("bad header line {line:?}")))?;
        match key.as_str() {
            "ncols" => ncols = Some(value as usize),
            "nrows" => nrows = Some(value as usize),
            "xllcorner" => xll = Some(value),
            "xllcenter" => {
                xll = Some(value);
                centered.0 = true;
            }
            "yllcorner" => yll = Some(value),
            "yllcenter" => {
                yll = Some(value);
                centered.1 = true;
            }
            "cellsize" => cellsize = Some(value),
            "nodata_value" => nodata = value,
            other => return Err(ClimateError::CorruptFile(format!("unknown header key {other:?}"))),
        }
        lines.next();
    }

    let missing = |k: &str| ClimateError::CorruptFile(format!("missing header {k}"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cell_size = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut x_origin = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut y_ll = yll.ok_or_else(|| missing("yllcorner"))?;
    if centered.0 {
        x_origin -= cell_size / 2.0;
    }
    if centered.1 {
        y_ll -= cell_size / 2.0;
    }

    let mut values = Vec::with_capacity(ncols * nrows);
    for line in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| ClimateError::CorruptFile(format!("bad cell value {tok:?}")))?;
            values.push(v);
        }
    }
    RasterGrid::new(ncols, nrows, x_origin, y_ll + nrows as f64 * cell_size, cell_size, nodata, values)
}

pub fn render(grid: &RasterGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ncols {}", grid.ncols);
    let _ = writeln!(out, "nrows {}", grid.nrows);
    let _ = writeln!(out, "xllcorner {}", grid.x_origin);
    let _ = writeln!(out, "yllcorner {}", grid.y_origin - grid.nrows as f64 * grid.cell_size);
    let _ = writeln!(out, "cellsize {}", grid.cell_size);
    let _ = writeln!(out, "NODATA_value {}", grid.nodata);
    for row in grid.values.chunks(grid.ncols) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
