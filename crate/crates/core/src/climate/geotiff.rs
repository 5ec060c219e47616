//! Single-band GeoTIFF subset: Float32 or Int16 samples, strips or tiles,
//! uncompressed or DEFLATE, georeferenced by ModelPixelScale + ModelTiepoint.

use std::fs::File;
use std::io::{BufReader, Cursor, Read, Seek, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, Compression, DeflateLevel, TiffEncoder};
use tiff::tags::{CompressionMethod, Tag};
use tiff::{TiffError, TiffFormatError};

use super::{ClimateError, RasterGrid};

fn map_err(e: TiffError) -> ClimateError {
    match e {
        TiffError::UnsupportedError(u) => ClimateError::UnsupportedFormat(u.to_string()),
        TiffError::FormatError(TiffFormatError::RequiredTagNotFound(t)) => {
            ClimateError::CorruptFile(format!("required tag {t:?} missing"))
        }
        other => ClimateError::CorruptFile(other.to_string()),
    }
}

pub fn read_path(path: &Path) -> Result<RasterGrid, ClimateError> {
    let f = File::open(path).map_err(|e| ClimateError::Io(format!("{}: {e}", path.display())))?;
    read(BufReader::new(f))
}

pub fn read_bytes(bytes: &[u8]) -> Result<RasterGrid, ClimateError> {
    read(Cursor::new(bytes))
}

pub fn read<R: Read + Seek>(reader: R) -> Result<RasterGrid, ClimateError> {
    let mut dec = Decoder::new(reader).map_err(map_err)?.with_limits(Limits::unlimited());

    let compression = dec.find_tag_unsigned::<u16>(Tag::Compression).map_err(map_err)?.unwrap_or(1);
    match CompressionMethod::from_u16_exhaustive(compression) {
        CompressionMethod::None | CompressionMethod::Deflate | CompressionMethod::OldDeflate => {}
        other => return Err(ClimateError::UnsupportedFormat(format!("compression {other:?}"))),
    }
    let spp = dec.find_tag_unsigned::<u16>(Tag::SamplesPerPixel).map_err(map_err)?.unwrap_or(1);
    if spp != 1 {
        return Err(ClimateError::UnsupportedFormat(format!("{spp} samples per pixel")));
    }

    let (width, height) = dec.dimensions().map_err(map_err)?;
    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)
        .map_err(map_err)?
        .ok_or_else(|| ClimateError::UnsupportedFormat("missing ModelPixelScale".into()))?
        .into_f64_vec()
        .map_err(map_err)?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)
        .map_err(map_err)?
        .ok_or_else(|| ClimateError::UnsupportedFormat("missing ModelTiepoint".into()))?
        .into_f64_vec()
        .map_err(map_err)?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(ClimateError::CorruptFile("short georeferencing tags".into()));
    }
    let (sx, sy) = (scale[0], scale[1]);
    if !(sx > 0.0) || (sx - sy).abs() > 1e-9 * sx {
        return Err(ClimateError::UnsupportedFormat(format!("non-square pixels {sx} x {sy}")));
    }
    let x_origin = tie[3] - tie[0] * sx;
    let y_origin = tie[4] + tie[1] * sy;

    let nodata = match dec.find_tag(Tag::GdalNodata).map_err(map_err)? {
        Some(v) => {
            let s = v.into_string().map_err(map_err)?;
            s.trim_matches(char::from(0)).trim().parse::<f64>().unwrap_or(f64::NAN)
        }
        None => f64::NAN,
    };

    let values: Vec<f64> = match dec.read_image().map_err(map_err)? {
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        _ => return Err(ClimateError::UnsupportedFormat("sample type other than Float32/Int16".into())),
    };
    RasterGrid::new(width as usize, height as usize, x_origin, y_origin, sx, nodata, values)
}

/// Writes a Float32 GeoTIFF. Values must be representable as `f32` for a
/// bit-exact round trip.
pub fn write<W: Write + Seek>(grid: &RasterGrid, writer: W, deflate: bool) -> Result<(), ClimateError> {
    let compression = if deflate { Compression::Deflate(DeflateLevel::Balanced) } else { Compression::Uncompressed };
    let mut enc = TiffEncoder::new(writer).map_err(map_err)?.with_compression(compression);
    let mut image = enc
        .new_image::<colortype::Gray32Float>(grid.ncols as u32, grid.nrows as u32)
        .map_err(map_err)?;
    let dir = image.encoder();
    dir.write_tag(Tag::ModelPixelScaleTag, &[grid.cell_size, grid.cell_size, 0.0][..])
        .map_err(map_err)?;
    dir.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, grid.x_origin, grid.y_origin, 0.0][..])
        .map_err(map_err)?;
    if !grid.nodata.is_nan() {
        dir.write_tag(Tag::GdalNodata, grid.nodata.to_string().as_str()).map_err(map_err)?;
    }
    let data: Vec<f32> = grid.values.iter().map(|&v| v as f32).collect();
    image.write_data(&data).map_err(map_err)
}

pub fn write_path(grid: &RasterGrid, path: &Path, deflate: bool) -> Result<(), ClimateError> {
    let mut buf = Cursor::new(Vec::new());
    write(grid, &mut buf, deflate)?;
    std::fs::write(path, buf.into_inner()).map_err(|e| ClimateError::Io(format!("{}: {e}", path.display())))
}
