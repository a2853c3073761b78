//! Binary tensor (`KTS1`) and mask (`KMS1`) files.
//!
//! `KTS1`: magic, little-endian `u32` rank (2 to 4), `u32` dims, then
//! `f64` `(re, im)` pairs in row-major order. `KMS1`: magic, `u32` rank (always
//! 2), `u32` dims, one `u8` per element.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayBase, ArrayD, Data, Dimension, IxDyn};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{CoilKSpaceSeries, ImageSeries, SamplingMask};

const KTS_MAGIC: &[u8; 4] = b"KTS1";
const KMS_MAGIC: &[u8; 4] = b"KMS1";
// refuse headers that would allocate more than this many elements
const MAX_ELEMENTS: usize = 1 << 32;

fn format_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_header(
    r: &mut impl Read,
    magic: &[u8; 4],
    format: &'static str,
    ranks: std::ops::RangeInclusive<usize>,
) -> Result<Vec<usize>> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(format_err(format, "bad magic bytes"));
    }
    let rank = read_u32(r)? as usize;
    if !ranks.contains(&rank) {
        return Err(format_err(format, format!("unsupported rank {rank}")));
    }
    let dims = (0..rank)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| format_err(format, "element count overflows"))?;
    if count == 0 {
        return Err(format_err(format, "zero-sized dimension"));
    }
    Ok(dims)
}

fn write_header(w: &mut impl Write, magic: &[u8; 4], dims: &[usize]) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| crate::error::invalid("dimension exceeds u32"))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

/// Writes any rank 2 to 4 complex array as `KTS1`.
pub fn write_kts_to<S, D>(w: &mut impl Write, data: &ArrayBase<S, D>) -> Result<()>
where
    S: Data<Elem = Complex64>,
    D: Dimension,
{
    if !(2..=4).contains(&data.ndim()) {
        return Err(crate::error::invalid(format!(
            "KTS1 holds rank 2 to 4, got {}",
            data.ndim()
        )));
    }
    write_header(w, KTS_MAGIC, data.shape())?;
    let mut buf = Vec::with_capacity(16 * 4096);
    for v in data.iter() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
        if buf.len() >= 16 * 4096 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_kts_from(r: &mut impl Read) -> Result<ArrayD<Complex64>> {
    let dims = read_header(r, KTS_MAGIC, "KTS1", 2..=4)?;
    let count: usize = dims.iter().product();
    let mut values = Vec::with_capacity(count);
    let mut buf = vec![0u8; 16 * 4096];
    while values.len() < count {
        let n = (count - values.len()).min(4096);
        r.read_exact(&mut buf[..16 * n])
            .map_err(|_| format_err("KTS1", "payload shorter than header declares"))?;
        values.extend(buf[..16 * n].chunks_exact(16).map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        }));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err("KTS1", "trailing bytes after payload"));
    }
    Ok(ArrayD::from_shape_vec(IxDyn(&dims), values).expect("length matches dims"))
}

pub fn write_kts<S, D>(path: impl AsRef<Path>, data: &ArrayBase<S, D>) -> Result<()>
where
    S: Data<Elem = Complex64>,
    D: Dimension,
{
    let mut w = BufWriter::new(create(path.as_ref())?);
    write_kts_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn read_kts(path: impl AsRef<Path>) -> Result<ArrayD<Complex64>> {
    read_kts_from(&mut BufReader::new(open(path.as_ref())?))
}

pub fn write_series(path: impl AsRef<Path>, series: &CoilKSpaceSeries) -> Result<()> {
    write_kts(path, series.data())
}

pub fn read_series(path: impl AsRef<Path>) -> Result<CoilKSpaceSeries> {
    let data = read_kts(path)?;
    let data: Array4<Complex64> = data
        .into_dimensionality()
        .map_err(|_| format_err("KTS1", "expected a rank-4 (time, coil, row, col) tensor"))?;
    CoilKSpaceSeries::new(data)
}

pub fn write_image_series(path: impl AsRef<Path>, series: &ImageSeries) -> Result<()> {
    write_kts(path, series.data())
}

pub fn read_image_series(path: impl AsRef<Path>) -> Result<ImageSeries> {
    let data: Array3<Complex64> = read_kts(path)?
        .into_dimensionality()
        .map_err(|_| format_err("KTS1", "expected a rank-3 (time, row, col) tensor"))?;
    ImageSeries::new(data)
}

pub fn write_u8_map_to(w: &mut impl Write, values: &Array2<u8>) -> Result<()> {
    write_header(w, KMS_MAGIC, values.shape())?;
    let bytes: Vec<u8> = values.iter().copied().collect();
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_u8_map_from(r: &mut impl Read) -> Result<Array2<u8>> {
    let dims = read_header(r, KMS_MAGIC, "KMS1", 2..=2)?;
    let mut bytes = vec![0u8; dims[0] * dims[1]];
    r.read_exact(&mut bytes)
        .map_err(|_| format_err("KMS1", "payload shorter than header declares"))?;
    Ok(Array2::from_shape_vec((dims[0], dims[1]), bytes).expect("length matches dims"))
}

/// Writes a label or boolean map (`KMS1`).
pub fn write_u8_map(path: impl AsRef<Path>, values: &Array2<u8>) -> Result<()> {
    let mut w = BufWriter::new(create(path.as_ref())?);
    write_u8_map_to(&mut w, values)?;
    w.flush()?;
    Ok(())
}

pub fn read_u8_map(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    read_u8_map_from(&mut BufReader::new(open(path.as_ref())?))
}

pub fn write_bool_map(path: impl AsRef<Path>, values: &Array2<bool>) -> Result<()> {
    write_u8_map(path, &values.mapv(u8::from))
}

/// Reads a `KMS1` file as booleans; any value other than 0 or 1 is rejected.
pub fn read_bool_map(path: impl AsRef<Path>) -> Result<Array2<bool>> {
    let raw = read_u8_map(path)?;
    if raw.iter().any(|&v| v > 1) {
        return Err(format_err("KMS1", "boolean mask holds values other than 0 and 1"));
    }
    Ok(raw.mapv(|v| v == 1))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &SamplingMask) -> Result<()> {
    write_bool_map(path, &mask.to_matrix())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    SamplingMask::from_matrix(&read_bool_map(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn kts_round_trip_all_ranks() {
        let a2 = Array2::from_shape_fn((3, 2), |(i, j)| Complex64::new(i as f64, -(j as f64)));
        let a4 = Array4::from_shape_fn((2, 3, 1, 2), |(t, c, y, x)| {
            Complex64::new((t + c) as f64 * 0.5, (y + x) as f64 - 1e-300)
        });
        for data in [a2.into_dyn(), a4.into_dyn()] {
            let mut buf = Vec::new();
            write_kts_to(&mut buf, &data).unwrap();
            assert_eq!(buf.len(), 8 + 4 * data.ndim() + 16 * data.len());
            assert_eq!(read_kts_from(&mut Cursor::new(buf)).unwrap(), data);
        }
    }

    #[test]
    fn kts_layout_is_little_endian_row_major() {
        let a = Array2::from_shape_vec(
            (1, 2),
            vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_kts_to(&mut buf, &a.into_dyn()).unwrap();
        assert_eq!(&buf[..4], b"KTS1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..24], &1.0f64.to_le_bytes());
        assert_eq!(&buf[40..48], &4.0f64.to_le_bytes());
    }

    #[test]
    fn kts_rejects_corrupt_input() {
        let a = Array2::<Complex64>::zeros((2, 2)).into_dyn();
        let mut buf = Vec::new();
        write_kts_to(&mut buf, &a).unwrap();
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(read_kts_from(&mut Cursor::new(bad_magic)).is_err());
        let truncated = buf[..buf.len() - 1].to_vec();
        assert!(read_kts_from(&mut Cursor::new(truncated)).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_kts_from(&mut Cursor::new(extra)).is_err());
        let one_d = ArrayD::<Complex64>::zeros(IxDyn(&[3]));
        assert!(write_kts_to(&mut Vec::new(), &one_d).is_err());
    }

    #[test]
    fn kms_round_trip() {
        let labels = Array2::from_shape_fn((4, 3), |(y, x)| ((y + x) % 4) as u8);
        let mut buf = Vec::new();
        write_u8_map_to(&mut buf, &labels).unwrap();
        assert_eq!(&buf[..4], b"KMS1");
        assert_eq!(read_u8_map_from(&mut Cursor::new(buf)).unwrap(), labels);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("pargrappa-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mask.kms");
        let mask = SamplingMask::new(12, 5, 3, 1).unwrap();
        write_mask(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
