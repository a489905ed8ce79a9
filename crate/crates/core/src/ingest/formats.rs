//! Scene readers.
//!
//! Two layouts are accepted by [`load_scene`]:
//!
//! - A GOES L2 NetCDF-4 file (`.nc`) holding `CMI_Cnn` variables, e.g. the multiband
//!   `MCMIP` product. Packed integers are unpacked with `scale_factor`/`add_offset` and
//!   `_FillValue` pixels are marked missing. Needs the `netcdf` feature.
//! - A directory with one raw raster per band named `Cnn.btdr`. Each file is the magic
//!   bytes `BTDR`, then `u32` height and `u32` width, then `height * width` row-major
//!   `f32` brightness temperatures, all little-endian. NaN marks missing data.

use ndarray::Array2;
use std::fs;
use std::path::{Path, PathBuf};

use super::{abi_wavelength_um, ChannelRaster};
use crate::error::{Error, Result};

pub const BTDR_MAGIC: &[u8; 4] = b"BTDR";

fn u32_le(bytes: &[u8]) -> u32 {
    u32::from_le_bytes(bytes.try_into().expect("4 bytes"))
}

fn band_file(dir: &Path, band: u8) -> PathBuf {
    dir.join(format!("C{band:02}.btdr"))
}

/// Reads a single `.btdr` raster.
pub fn read_btdr(path: &Path) -> Result<Array2<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Malformed {
        what: path.display().to_string(),
        line: 0,
        detail: detail.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != BTDR_MAGIC {
        return Err(bad("missing BTDR header"));
    }
    let height = u32_le(&bytes[4..8]) as usize;
    let width = u32_le(&bytes[8..12]) as usize;
    let body = &bytes[12..];
    if body.len() != height * width * 4 {
        return Err(bad(&format!(
            "expected {} bytes of f32 data for {height}x{width}, found {}",
            height * width * 4,
            body.len()
        )));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((height, width), values).expect("checked length"))
}

pub fn write_btdr(path: &Path, values: &Array2<f32>) -> Result<()> {
    let (h, w) = values.dim();
    let mut bytes = Vec::with_capacity(12 + h * w * 4);
    bytes.extend_from_slice(BTDR_MAGIC);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for v in values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn wavelength(band: u8) -> Result<f64> {
    abi_wavelength_um(band).ok_or_else(|| Error::InvalidArgument(format!("unknown ABI band {band}")))
}

fn load_btdr_dir(dir: &Path, band: u8) -> Result<ChannelRaster> {
    let path = band_file(dir, band);
    if !path.exists() {
        return Err(Error::MissingBand(band));
    }
    ChannelRaster::abi(band, read_btdr(&path)?)
}

#[cfg(feature = "netcdf")]
fn load_netcdf_band(file: &hdf5::File, band: u8) -> Result<ChannelRaster> {
    let name = format!("CMI_C{band:02}");
    let ds = file.dataset(&name).map_err(|_| Error::MissingBand(band))?;
    let h5 = |e: hdf5::Error| Error::Data(format!("{name}: {e}"));
    let raw: Array2<f64> = ds.read_2d().map_err(h5)?;
    let attr = |key: &str| -> Option<f64> {
        ds.attr(key).ok().and_then(|a| a.read_scalar::<f64>().ok())
    };
    let fill = attr("_FillValue");
    let scale = attr("scale_factor").unwrap_or(1.0);
    let offset = attr("add_offset").unwrap_or(0.0);
    let valid = raw.mapv(|v| v.is_finite() && (fill != Some(v)));
    let values = raw.mapv(|v| (v * scale + offset) as f32);
    ChannelRaster::with_valid(band, wavelength(band)?, values, valid)
}

#[cfg(feature = "netcdf")]
fn load_netcdf(path: &Path, band_a: u8, band_b: u8) -> Result<(ChannelRaster, ChannelRaster)> {
    let file = hdf5::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((load_netcdf_band(&file, band_a)?, load_netcdf_band(&file, band_b)?))
}

#[cfg(not(feature = "netcdf"))]
fn load_netcdf(path: &Path, _: u8, _: u8) -> Result<(ChannelRaster, ChannelRaster)> {
    Err(Error::Unsupported(format!(
        "{}: built without NetCDF support (enable the `netcdf` feature)",
        path.display()
    )))
}

/// Reads two bands of one scene; both rasters must share a shape.
pub fn load_scene(path: &Path, band_a: u8, band_b: u8) -> Result<(ChannelRaster, ChannelRaster)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let (a, b) = if path.is_dir() {
        (load_btdr_dir(path, band_a)?, load_btdr_dir(path, band_b)?)
    } else if path.extension().is_some_and(|e| e == "nc" || e == "nc4") {
        load_netcdf(path, band_a, band_b)?
    } else {
        return Err(Error::Unsupported(format!(
            "{}: expected a .nc file or a directory of Cnn.btdr rasters",
            path.display()
        )));
    };
    if a.values.dim() != b.values.dim() {
        return Err(Error::shape(
            format!("band {band_b}"),
            a.values.shape(),
            b.values.shape(),
        ));
    }
    Ok((a, b))
}
