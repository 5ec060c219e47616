//! Nearest-cell extraction of the nineteen bioclimatic layers.

pub mod ascii;
pub mod geotiff;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sampling::SamplePoint;
use crate::N_BIO;

/// File name pattern of the WorldClim 2.1 2.5′ layers; `{i}` is 1..=19.
pub const DEFAULT_PATTERN: &str = "wc2.1_2.5m_bio_{i}.tif";

#[derive(Debug, thiserror::Error)]
pub enum ClimateError {
    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt raster: {0}")]
    CorruptFile(String),
    #[error("point ({lat}, {lon}) outside raster extent")]
    OutOfExtent { lat: f64, lon: f64 },
    #[error("rasters do not share one grid: {0}")]
    GridMismatch(String),
    #[error("expected {N_BIO} rasters, got {0}")]
    WrongLayerCount(usize),
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub ncols: usize,
    pub nrows: usize,
    /// Upper-left corner longitude.
    pub x_origin: f64,
    /// Upper-left corner latitude.
    pub y_origin: f64,
    pub cell_size: f64,
    pub nodata: f64,
    /// Row-major, north to south.
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(
        ncols: usize,
        nrows: usize,
        x_origin: f64,
        y_origin: f64,
        cell_size: f64,
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self, ClimateError> {
        if ncols == 0 || nrows == 0 {
            return Err(ClimateError::CorruptFile("empty raster".into()));
        }
        if ncols * nrows != values.len() {
            return Err(ClimateError::CorruptFile(format!(
                "{ncols}x{nrows} grid holds {} values",
                values.len()
            )));
        }
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(ClimateError::CorruptFile(format!("cell size {cell_size}")));
        }
        Ok(Self { ncols, nrows, x_origin, y_origin, cell_size, nodata, values })
    }

    /// Raster of `value` everywhere.
    pub fn constant(ncols: usize, nrows: usize, x_origin: f64, y_origin: f64, cell_size: f64, value: f64) -> Self {
        Self::new(ncols, nrows, x_origin, y_origin, cell_size, -9999.0, vec![value; ncols * nrows])
            .expect("valid constant grid")
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v.is_nan() || v == self.nodata
    }

    /// `(row, col)` of the cell containing the point.
    pub fn cell_index(&self, lat: f64, lon: f64) -> Result<(usize, usize), ClimateError> {
        let col = ((lon - self.x_origin) / self.cell_size).floor();
        let row = ((self.y_origin - lat) / self.cell_size).floor();
        if !(col >= 0.0 && row >= 0.0 && (col as usize) < self.ncols && (row as usize) < self.nrows) {
            return Err(ClimateError::OutOfExtent { lat, lon });
        }
        Ok((row as usize, col as usize))
    }

    /// Nearest-cell value, or `None` for nodata.
    pub fn value_at(&self, lat: f64, lon: f64) -> Result<Option<f64>, ClimateError> {
        let (row, col) = self.cell_index(lat, lon)?;
        let v = self.values[row * self.ncols + col];
        Ok((!self.is_nodata(v)).then_some(v))
    }

    pub fn same_grid(&self, other: &RasterGrid) -> bool {
        self.ncols == other.ncols
            && self.nrows == other.nrows
            && self.x_origin == other.x_origin
            && self.y_origin == other.y_origin
            && self.cell_size == other.cell_size
    }

    pub fn to_ascii(&self) -> String {
        ascii::render(self)
    }
}

/// Reads a GeoTIFF or ESRI ASCII grid, detected from the file's first bytes.
pub fn load_raster(path: &Path) -> Result<RasterGrid, ClimateError> {
    let bytes = std::fs::read(path).map_err(|e| ClimateError::Io(format!("{}: {e}", path.display())))?;
    load_raster_bytes(&bytes)
}

pub fn load_raster_bytes(bytes: &[u8]) -> Result<RasterGrid, ClimateError> {
    if bytes.starts_with(b"II") || bytes.starts_with(b"MM") {
        return geotiff::read_bytes(bytes);
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| ClimateError::UnsupportedFormat("neither TIFF nor ASCII grid".into()))?;
    let first = text.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
    if first != "ncols" && first != "nrows" {
        return Err(ClimateError::UnsupportedFormat("neither TIFF nor ASCII grid".into()));
    }
    ascii::parse(text)
}

/// BIO1..BIO19 for one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BioclimVector(pub [f64; N_BIO]);

impl BioclimVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Nineteen co-registered layers in BIO order.
#[derive(Debug, Clone)]
pub struct ClimateStack {
    layers: Vec<RasterGrid>,
}

impl ClimateStack {
    pub fn new(layers: Vec<RasterGrid>) -> Result<Self, ClimateError> {
        if layers.len() != N_BIO {
            return Err(ClimateError::WrongLayerCount(layers.len()));
        }
        for (i, g) in layers.iter().enumerate().skip(1) {
            if !g.same_grid(&layers[0]) {
                return Err(ClimateError::GridMismatch(format!(
                    "BIO{} differs from BIO1 (cell {} vs {}, {}x{} vs {}x{})",
                    i + 1,
                    g.cell_size,
                    layers[0].cell_size,
                    g.ncols,
                    g.nrows,
                    layers[0].ncols,
                    layers[0].nrows
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Loads `pattern` with `{i}` replaced by 1..=19 from `dir`.
    pub fn load_dir(dir: &Path, pattern: &str) -> Result<Self, ClimateError> {
        let layers = layer_paths(dir, pattern)
            .iter()
            .map(|p| load_raster(p))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[RasterGrid] {
        &self.layers
    }

    /// All nineteen values, or `None` if any layer is nodata or the point
    /// falls outside the grid.
    pub fn vector_at(&self, lat: f64, lon: f64) -> Option<BioclimVector> {
        let (row, col) = self.layers[0].cell_index(lat, lon).ok()?;
        let mut out = [0.0; N_BIO];
        for (slot, g) in out.iter_mut().zip(&self.layers) {
            let v = g.values[row * g.ncols + col];
            if g.is_nodata(v) {
                return None;
            }
            *slot = v;
        }
        Some(BioclimVector(out))
    }
}

pub fn layer_paths(dir: &Path, pattern: &str) -> Vec<PathBuf> {
    (1..=N_BIO).map(|i| dir.join(pattern.replace("{i}", &i.to_string()))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedSample {
    pub point: SamplePoint,
    pub bio: BioclimVector,
}

/// Keeps points with all nineteen values present, in input order. Points
/// outside the raster extent are dropped and counted like nodata.
pub fn extract_features(points: &[SamplePoint], stack: &ClimateStack) -> (Vec<ExtractedSample>, usize) {
    let kept: Vec<ExtractedSample> = points
        .iter()
        .filter_map(|p| stack.vector_at(p.latitude, p.longitude).map(|bio| ExtractedSample { point: *p, bio }))
        .collect();
    let dropped = points.len() - kept.len();
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn stack_of(grid: &RasterGrid) -> ClimateStack {
        ClimateStack::new(vec![grid.clone(); N_BIO]).unwrap()
    }

    #[test]
    fn ascii_constant_fixture() {
        let text = "ncols 3\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n7.5 7.5 7.5\n7.5 7.5 7.5\n7.5 7.5 7.5\n";
        let g = load_raster_bytes(text.as_bytes()).unwrap();
        assert_eq!(g.values, vec![7.5; 9]);
        assert_eq!((g.x_origin, g.y_origin), (0.0, 3.0));
        assert_eq!(g.value_at(1.5, 2.2).unwrap(), Some(7.5));
    }

    #[test]
    fn ascii_round_trip() {
        let g = RasterGrid::new(2, 2, -1.5, 2.5, 0.5, -9999.0, vec![1.25, -9999.0, 3.0, 4.5]).unwrap();
        assert_eq!(load_raster_bytes(g.to_ascii().as_bytes()).unwrap(), g);
    }

    #[test]
    fn ascii_short_body_is_corrupt() {
        let text = "ncols 3\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2 3\n";
        assert!(matches!(load_raster_bytes(text.as_bytes()), Err(ClimateError::CorruptFile(_))));
    }

    #[test]
    fn column_from_floor() {
        let g = RasterGrid::constant(4, 2, 0.0, 1.0, 0.5, 1.0);
        assert_eq!(g.cell_index(0.9, 0.74).unwrap(), (0, 1));
        assert!(matches!(g.value_at(0.9, 2.0), Err(ClimateError::OutOfExtent { .. })));
        assert!(matches!(g.value_at(1.01, 0.1), Err(ClimateError::OutOfExtent { .. })));
    }

    #[test]
    fn nodata_cell() {
        let g = RasterGrid::new(2, 1, 0.0, 1.0, 1.0, -9999.0, vec![3.0, -9999.0]).unwrap();
        assert_eq!(g.value_at(0.5, 0.5).unwrap(), Some(3.0));
        assert_eq!(g.value_at(0.5, 1.5).unwrap(), None);
    }

    #[test]
    fn geotiff_round_trip_bit_exact() {
        let values: Vec<f64> = (0..12).map(|i| (i as f32 * 1.37 - 4.0) as f64).collect();
        let g = RasterGrid::new(4, 3, 5.0, 55.0, 2.5 / 60.0, -3.4e38f32 as f64, values).unwrap();
        for deflate in [false, true] {
            let mut buf = Cursor::new(Vec::new());
            geotiff::write(&g, &mut buf, deflate).unwrap();
            let back = load_raster_bytes(buf.get_ref()).unwrap();
            assert_eq!(back.ncols, 4);
            assert_eq!(back.nrows, 3);
            assert_eq!(back.x_origin.to_bits(), g.x_origin.to_bits());
            assert_eq!(back.y_origin.to_bits(), g.y_origin.to_bits());
            assert_eq!(back.cell_size.to_bits(), g.cell_size.to_bits());
            assert_eq!(back.nodata.to_bits(), g.nodata.to_bits());
            let a: Vec<u64> = back.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = g.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn geotiff_int16_is_read() {
        use tiff::encoder::{colortype, TiffEncoder};
        use tiff::tags::Tag;
        let mut buf = Cursor::new(Vec::new());
        {
            let mut enc = TiffEncoder::new(&mut buf).unwrap();
            let mut img = enc.new_image::<colortype::GrayI16>(2, 2).unwrap();
            img.encoder().write_tag(Tag::ModelPixelScaleTag, &[1.0f64, 1.0, 0.0][..]).unwrap();
            img.encoder()
                .write_tag(Tag::ModelTiepointTag, &[0.0f64, 0.0, 0.0, 10.0, 50.0, 0.0][..])
                .unwrap();
            img.encoder().write_tag(Tag::GdalNodata, "-32768").unwrap();
            img.write_data(&[1i16, -32768, 300, -5]).unwrap();
        }
        let g = load_raster_bytes(buf.get_ref()).unwrap();
        assert_eq!(g.values, vec![1.0, -32768.0, 300.0, -5.0]);
        assert_eq!(g.value_at(49.5, 11.5).unwrap(), None);
        assert_eq!(g.value_at(48.5, 11.5).unwrap(), Some(-5.0));
    }

    #[test]
    fn geotiff_truncated_is_corrupt() {
        let g = RasterGrid::constant(8, 8, 0.0, 8.0, 1.0, 2.0);
        let mut buf = Cursor::new(Vec::new());
        geotiff::write(&g, &mut buf, false).unwrap();
        let bytes = buf.into_inner();
        for cut in [4, 16, bytes.len() / 2, bytes.len() - 10] {
            let r = load_raster_bytes(&bytes[..cut]);
            assert!(matches!(r, Err(ClimateError::CorruptFile(_))), "cut {cut}: {r:?}");
        }
    }

    #[test]
    fn geotiff_without_georeferencing_unsupported() {
        use tiff::encoder::{colortype, TiffEncoder};
        let mut buf = Cursor::new(Vec::new());
        TiffEncoder::new(&mut buf)
            .unwrap()
            .write_image::<colortype::Gray32Float>(1, 1, &[1.0])
            .unwrap();
        assert!(matches!(load_raster_bytes(buf.get_ref()), Err(ClimateError::UnsupportedFormat(_))));
    }

    #[test]
    fn lzw_is_outside_the_subset() {
        use tiff::encoder::{colortype, Compression, TiffEncoder};
        use tiff::tags::Tag;
        let mut buf = Cursor::new(Vec::new());
        {
            let mut enc = TiffEncoder::new(&mut buf).unwrap().with_compression(Compression::Packbits);
            let mut img = enc.new_image::<colortype::Gray32Float>(1, 1).unwrap();
            img.encoder().write_tag(Tag::ModelPixelScaleTag, &[1.0f64, 1.0, 0.0][..]).unwrap();
            img.encoder().write_tag(Tag::ModelTiepointTag, &[0.0f64; 6][..]).unwrap();
            img.write_data(&[1.0f32]).unwrap();
        }
        assert!(matches!(load_raster_bytes(buf.get_ref()), Err(ClimateError::UnsupportedFormat(_))));
    }

    #[test]
    fn extraction_drops_nodata_rows() {
        let base = RasterGrid::constant(10, 10, 0.0, 10.0, 1.0, 4.0);
        let mut layers = vec![base.clone(); N_BIO];
        // BIO12 nodata at row 2, col 3
        layers[11].values[2 * 10 + 3] = -9999.0;
        let stack = ClimateStack::new(layers).unwrap();
        let pts: Vec<SamplePoint> = [(9.5, 0.5), (7.5, 3.5), (5.5, 5.5), (1.5, 8.5), (0.5, 0.5)]
            .iter()
            .map(|&(lat, lon)| SamplePoint::presence(lat, lon))
            .collect();
        let (kept, dropped) = extract_features(&pts, &stack);
        assert_eq!(dropped, 1);
        assert_eq!(kept.len(), 4);
        let order: Vec<f64> = kept.iter().map(|k| k.point.latitude).collect();
        assert_eq!(order, vec![9.5, 5.5, 1.5, 0.5]);

        let (all, none) = extract_features(&pts[2..], &stack_of(&base));
        assert_eq!((all.len(), none), (3, 0));
    }

    #[test]
    fn mismatched_cell_size() {
        let a = RasterGrid::constant(4, 4, 0.0, 4.0, 1.0, 0.0);
        let b = RasterGrid::constant(4, 4, 0.0, 4.0, 0.5, 0.0);
        let mut layers = vec![a; N_BIO];
        layers[7] = b;
        assert!(matches!(ClimateStack::new(layers), Err(ClimateError::GridMismatch(_))));
    }
}
