//! Row-major 2D maps, raster I/O and thresholding.
//!
//! Three map flavours share one [`Shape`]:
//!
//! * [`ProbMap`] holds predictions in `[0, 1]`,
//! * [`BinaryMap`] holds masks in `{0, 1}`,
//! * [`GradMap`] holds finite, unbounded gradients.
//!
//! Masks are stored on disk as 8-bit grayscale PGM (`P5`, maxval 255) or
//! PNG with `{0, 255}` values. Origin is the top-left pixel.

use std::fmt;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ZeroSize { height, width });
        }
        Ok(Shape { height, width })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn ensure_same(&self, other: Shape) -> Result<()> {
        if *self != other {
            return Err(Error::ShapeMismatch {
                left: *self,
                right: other,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

fn check_len(shape: Shape, len: usize) -> Result<()> {
    if shape.len() != len {
        return Err(Error::LengthMismatch {
            expected: shape.len(),
            found: len,
        });
    }
    Ok(())
}

/// Prediction map with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    shape: Shape,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        check_len(shape, values.len())?;
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::OutOfRange { index, value });
            }
        }
        Ok(ProbMap { shape, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl From<&BinaryMap> for ProbMap {
    fn from(map: &BinaryMap) -> Self {
        ProbMap {
            shape: map.shape,
            values: map.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Mask with every value exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    shape: Shape,
    values: Vec<u8>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        check_len(shape, values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NotBinary { index, value });
        }
        Ok(BinaryMap { shape, values })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        let values = (0..shape.len())
            .map(|i| {
                let (r, c) = shape.coords(i);
                u8::from(f(r, c))
            })
            .collect();
        Ok(BinaryMap { shape, values })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[self.shape.index(row, col)] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }

    /// Foreground becomes background and vice versa.
    pub fn inverted(&self) -> BinaryMap {
        BinaryMap {
            shape: self.shape,
            values: self.values.iter().map(|&v| 1 - v).collect(),
        }
    }
}

/// Gradient of a scalar with respect to every pixel of a map.
#[derive(Clone, Debug, PartialEq)]
pub struct GradMap {
    shape: Shape,
    values: Vec<f64>,
}

impl GradMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(height, width)?;
        Self::from_shape(shape, values)
    }

    pub fn from_shape(shape: Shape, values: Vec<f64>) -> Result<Self> {
        check_len(shape, values.len())?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(GradMap { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        GradMap {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Binarize a prediction: `p[i] >= t` maps to 1.
pub fn threshold(p: &ProbMap, t: f64) -> Result<BinaryMap> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::param("threshold", format!("{t} is not in (0, 1)")));
    }
    Ok(BinaryMap {
        shape: p.shape,
        values: p.values.iter().map(|&v| u8::from(v >= t)).collect(),
    })
}

/// Anything that can be written as an 8-bit grayscale raster.
pub trait Raster {
    fn raster_shape(&self) -> Shape;
    fn to_gray8(&self) -> Vec<u8>;
}

impl Raster for BinaryMap {
    fn raster_shape(&self) -> Shape {
        self.shape
    }

    fn to_gray8(&self) -> Vec<u8> {
        self.values.iter().map(|&v| v * 255).collect()
    }
}

impl Raster for ProbMap {
    fn raster_shape(&self) -> Shape {
        self.shape
    }

    fn to_gray8(&self) -> Vec<u8> {
        // round half up
        self.values
            .iter()
            .map(|&v| (v * 255.0 + 0.5).floor() as u8)
            .collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum RasterFormat {
    Pgm,
    Png,
}

fn format_for_path(path: &Path) -> Result<RasterFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") => Ok(RasterFormat::Pgm),
        Some("png") => Ok(RasterFormat::Png),
        _ => Err(Error::UnsupportedRaster {
            path: path.to_path_buf(),
            reason: "file extension must be .pgm or .png".into(),
        }),
    }
}

/// Write a map as an 8-bit grayscale raster; the format follows the extension.
pub fn save_map<M: Raster + ?Sized>(map: &M, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_raster(map, format_for_path(path)?, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_raster<M: Raster + ?Sized>(map: &M, format: RasterFormat, path: &Path) -> Result<Vec<u8>> {
    let shape = map.raster_shape();
    let pixels = map.to_gray8();
    match format {
        RasterFormat::Pgm => {
            let mut out = format!("P5\n{} {}\n255\n", shape.width, shape.height).into_bytes();
            out.extend_from_slice(&pixels);
            Ok(out)
        }
        RasterFormat::Png => {
            let mut out = Vec::new();
            let to_err = |e: png::EncodingError| Error::UnsupportedRaster {
                path: path.to_path_buf(),
                reason: e.to_string(),
            };
            let mut encoder = png::Encoder::new(&mut out, shape.width as u32, shape.height as u32);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder.write_header().map_err(to_err)?;
            writer.write_image_data(&pixels).map_err(to_err)?;
            writer.finish().map_err(to_err)?;
            Ok(out)
        }
    }
}

/// Decoded 8-bit grayscale raster.
struct Gray8 {
    shape: Shape,
    pixels: Vec<u8>,
}

fn read_gray8(path: &Path) -> Result<Gray8> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let unsupported = |reason: String| Error::UnsupportedRaster {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes).map_err(unsupported)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes).map_err(unsupported)
    } else {
        Err(unsupported("not a binary PGM (P5) or PNG file".into()))
    }
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Gray8, String> {
    // Header: magic, width, height, maxval, separated by whitespace or comments,
    // followed by exactly one whitespace byte before the pixel data.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated PGM header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PGM header")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PGM header".into());
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported bit depth: maxval {maxval} (expected 255)"));
    }
    if width == 0 || height == 0 {
        return Err(format!("zero-size image {width}x{height}"));
    }
    let data = &bytes[pos..];
    if data.len() < width * height {
        return Err("truncated PGM pixel data".into());
    }
    Ok(Gray8 {
        shape: Shape { height, width },
        pixels: data[..width * height].to_vec(),
    })
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Gray8, String> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.color_type != png::ColorType::Grayscale {
        return Err(format!("unsupported color type {:?}", info.color_type));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported bit depth {:?}", info.bit_depth));
    }
    if width == 0 || height == 0 {
        return Err(format!("zero-size image {width}x{height}"));
    }
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(frame.buffer_size());
    Ok(Gray8 {
        shape: Shape { height, width },
        pixels: buf,
    })
}

/// Read a mask; pixels `>= 128` are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMap> {
    let raster = read_gray8(path.as_ref())?;
    Ok(BinaryMap {
        shape: raster.shape,
        values: raster.pixels.iter().map(|&v| u8::from(v >= 128)).collect(),
    })
}

/// Read a grayscale image scaled to `[0, 1]`.
pub fn load_gray(path: impl AsRef<Path>) -> Result<ProbMap> {
    let raster = read_gray8(path.as_ref())?;
    Ok(ProbMap {
        shape: raster.shape,
        values: raster
            .pixels
            .iter()
            .map(|&v| f64::from(v) / 255.0)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_pgm(dir: &Path, name: &str, w: usize, h: usize, px: &[u8]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut bytes = format!("P5\n# test\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(px);
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn pgm_threshold_at_midpoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_pgm(dir.path(), "a.pgm", 2, 2, &[0, 255, 255, 0]);
        assert_eq!(load_mask(&p).unwrap().values(), &[0, 1, 1, 0]);
        let p = write_pgm(dir.path(), "b.pgm", 1, 1, &[128]);
        assert_eq!(load_mask(&p).unwrap().values(), &[1]);
        let p = write_pgm(dir.path(), "c.pgm", 1, 1, &[127]);
        assert_eq!(load_mask(&p).unwrap().values(), &[0]);
    }

    #[test]
    fn all_zero_png_keeps_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.png");
        save_map(&BinaryMap::zeros(64, 64).unwrap(), &path).unwrap();
        let m = load_mask(&path).unwrap();
        assert_eq!(m.shape(), Shape::new(64, 64).unwrap());
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_mask(dir.path().join("missing.pgm")).unwrap_err().is_io());

        let deep = dir.path().join("deep.pgm");
        fs::write(&deep, b"P5\n1 1\n65535\n\0\0").unwrap();
        assert!(matches!(
            load_mask(&deep),
            Err(Error::UnsupportedRaster { .. })
        ));

        let empty = write_pgm(dir.path(), "empty.pgm", 0, 3, &[]);
        assert!(matches!(
            load_mask(&empty),
            Err(Error::UnsupportedRaster { .. })
        ));

        let rgb = dir.path().join("rgb.png");
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[1, 2, 3]).unwrap();
        }
        fs::write(&rgb, out).unwrap();
        assert!(load_mask(&rgb).is_err());
    }

    #[test]
    fn save_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        save_map(&BinaryMap::new(1, 2, vec![0, 1]).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 255]);

        let path = dir.path().join("p.pgm");
        save_map(&ProbMap::new(1, 1, vec![0.5]).unwrap(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(*bytes.last().unwrap(), 128);
        assert!(save_map(&ProbMap::new(1, 1, vec![0.5]).unwrap(), dir.path().join("x.bmp")).is_err());
    }

    #[test]
    fn threshold_rules() {
        let p = ProbMap::new(1, 2, vec![0.4, 0.6]).unwrap();
        assert_eq!(threshold(&p, 0.5).unwrap().values(), &[0, 1]);
        let p = ProbMap::new(1, 1, vec![0.5]).unwrap();
        assert_eq!(threshold(&p, 0.5).unwrap().values(), &[1]);
        assert!(threshold(&p, 0.0).is_err());
        assert!(threshold(&p, 1.0).is_err());
        assert!(threshold(&p, f64::NAN).is_err());
    }

    #[test]
    fn constructors_validate() {
        assert!(matches!(ProbMap::new(0, 2, vec![]), Err(Error::ZeroSize { .. })));
        assert!(matches!(ProbMap::new(2, 2, vec![0.0; 3]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(ProbMap::new(1, 1, vec![1.5]), Err(Error::OutOfRange { .. })));
        assert!(matches!(ProbMap::new(1, 1, vec![f64::NAN]), Err(Error::NonFinite { .. })));
        assert!(matches!(BinaryMap::new(1, 2, vec![0, 2]), Err(Error::NotBinary { .. })));
        assert!(matches!(GradMap::new(1, 1, vec![f64::INFINITY]), Err(Error::NonFinite { .. })));
    }

    fn binary_map() -> impl Strategy<Value = BinaryMap> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..2, h * w)
                .prop_map(move |v| BinaryMap::new(h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn save_load_round_trip(map in binary_map(), png in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(if png { "m.png" } else { "m.pgm" });
            save_map(&map, &path).unwrap();
            prop_assert_eq!(load_mask(&path).unwrap(), map);
        }

        #[test]
        fn binary_map_is_threshold_fixed_point(map in binary_map()) {
            prop_assert_eq!(threshold(&ProbMap::from(&map), 0.5).unwrap(), map);
        }

        #[test]
        fn threshold_is_monotone(
            values in proptest::collection::vec(0.0f64..=1.0, 16),
            bump in proptest::collection::vec(0.0f64..=1.0, 16),
            t in 0.01f64..0.99,
        ) {
            let lo = ProbMap::new(4, 4, values.clone()).unwrap();
            let raised: Vec<f64> = values.iter().zip(&bump).map(|(v, b)| (v + b).min(1.0)).collect();
            let hi = ProbMap::new(4, 4, raised).unwrap();
            let (a, b) = (threshold(&lo, t).unwrap(), threshold(&hi, t).unwrap());
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!(x <= y);
            }
        }
    }
}
