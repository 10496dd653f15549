//! Dense hyperspectral cubes, coordinate grids and the `F32C` file format.
//!
//! Cubes are stored band-sequentially: band plane after band plane, each
//! plane row-major. With that layout the spectral unfolding `L × (H·W)` is a
//! plain reshape.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const CUBE_MAGIC: &[u8; 4] = b"F32C";
pub const CUBE_VERSION: u32 = 1;

/// An `H × W × L` image cube held in 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    // shape (bands, height, width), standard layout
    data: Array3<f64>,
}

impl HsiCube {
    /// Builds a cube from band-sequential data.
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, bands)?;
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(bands))
            .ok_or_else(|| Error::invalid("cube dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "cube data has {} values, expected {height}x{width}x{bands} = {expected}",
                data.len()
            )));
        }
        let data = Array3::from_shape_vec((bands, height, width), data)
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::from_array(data)
    }

    /// Wraps an array of shape `(bands, height, width)`.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        let (l, h, w) = data.dim();
        check_dims(h, w, l)?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "cube value at flat index {pos} is not finite"
            )));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Result<Self> {
        check_dims(height, width, bands)?;
        Ok(Self {
            data: Array3::zeros((bands, height, width)),
        })
    }

    /// Builds a cube by evaluating `f(row, col, band)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width, bands)?;
        let data = Array3::from_shape_fn((bands, height, width), |(b, r, c)| f(r, c, b));
        Self::from_array(data)
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    /// `(height, width, bands)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (l, h, w) = self.data.dim();
        (h, w, l)
    }

    pub fn pixels(&self) -> usize {
        self.height() * self.width()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[[band, row, col]]
    }

    pub fn band(&self, band: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(ndarray::Axis(0), band)
    }

    /// The spectrum at one pixel.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.bands()).map(|b| self.get(row, col, b)).collect()
    }

    /// View with shape `(bands, height, width)`.
    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    /// Band-sequential flat data.
    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("cube data is kept in standard layout")
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Applies `f` elementwise, rejecting non-finite results.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_array(self.data.mapv(f))
    }

    /// The `L × N` spectral unfolding; row `ℓ` is band plane `ℓ` flattened.
    pub fn unfold_spectral(&self) -> Array2<f64> {
        let (l, h, w) = self.data.dim();
        self.data
            .to_shape((l, h * w))
            .expect("standard layout reshapes without copying")
            .into_owned()
    }

    /// Inverse of [`HsiCube::unfold_spectral`].
    pub fn fold_spectral(matrix: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        let (l, n) = matrix.dim();
        if n != height * width {
            return Err(Error::invalid(format!(
                "cannot fold {l}x{n} matrix into {height}x{width} planes"
            )));
        }
        let matrix = if matrix.is_standard_layout() {
            matrix
        } else {
            matrix.as_standard_layout().into_owned()
        };
        let data = matrix
            .into_shape_with_order((l, height, width))
            .map_err(|e| Error::invalid(e.to_string()))?;
        Self::from_array(data)
    }
}

fn check_dims(height: usize, width: usize, bands: usize) -> Result<()> {
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::invalid(format!(
            "cube dimensions must be at least 1, got {height}x{width}x{bands}"
        )));
    }
    Ok(())
}

/// Spatial and spectral input coordinates for the coordinate networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    /// `N × 2` matrix of `(row, col)` coordinates, row-major pixel order.
    pub spatial: Array2<f64>,
    /// `L × 1` matrix of band coordinates.
    pub spectral: Array2<f64>,
    /// `(H, W, L)` the grid was generated from.
    pub source_dims: (usize, usize, usize),
}

impl CoordinateGrid {
    pub fn height(&self) -> usize {
        self.source_dims.0
    }

    pub fn width(&self) -> usize {
        self.source_dims.1
    }

    pub fn bands(&self) -> usize {
        self.source_dims.2
    }

    pub fn pixels(&self) -> usize {
        self.spatial.nrows()
    }
}

/// Uniform coordinates spanning `[-1, 1]`; a single sample sits at `0`.
///
/// Each coordinate is one correctly rounded division of exact integers, so
/// equal rationals on different grids (e.g. `k/30` and `2k/60`) produce
/// identical floats, and the sequence is exactly antisymmetric.
pub fn axis_coords(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    let span = (n - 1) as i64;
    (0..n as i64)
        .map(|k| (2 * k - span) as f64 / span as f64)
        .collect()
}

/// Builds the coordinate grid for an `H × W × L` cube.
pub fn make_grid(height: usize, width: usize, bands: usize) -> Result<CoordinateGrid> {
    check_dims(height, width, bands)?;
    let rows = axis_coords(height);
    let cols = axis_coords(width);
    let spatial = Array2::from_shape_fn((height * width, 2), |(p, axis)| {
        if axis == 0 {
            rows[p / width]
        } else {
            cols[p % width]
        }
    });
    let spectral = Array2::from_shape_vec((bands, 1), axis_coords(bands))
        .expect("bands x 1 shape matches coordinate count");
    Ok(CoordinateGrid {
        spatial,
        spectral,
        source_dims: (height, width, bands),
    })
}

/// Serializes a cube in the `F32C` layout.
pub fn write_cube_to<W: Write>(cube: &HsiCube, mut out: W) -> Result<()> {
    let (h, w, l) = cube.dims();
    let mut buf = Vec::with_capacity(20 + 4 * cube.len());
    buf.extend_from_slice(CUBE_MAGIC);
    buf.extend_from_slice(&CUBE_VERSION.to_le_bytes());
    for dim in [h, w, l] {
        let dim = u32::try_from(dim).map_err(|_| {
            Error::format("dimensions", format!("dimension {dim} does not fit in u32"))
        })?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for &v in cube.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parses a cube from an `F32C` byte stream.
pub fn read_cube_from<R: Read>(mut input: R) -> Result<HsiCube> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_cube(&bytes)
}

fn parse_cube(bytes: &[u8]) -> Result<HsiCube> {
    if bytes.len() < 4 {
        return Err(Error::format("magic", "bad magic: file shorter than 4 bytes"));
    }
    if &bytes[..4] != CUBE_MAGIC {
        return Err(Error::format(
            "magic",
            format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    let header_u32 = |offset: usize, field: &'static str| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4-byte slice")))
            .ok_or_else(|| Error::format(field, "truncated header"))
    };
    let version = header_u32(4, "version")?;
    if version != CUBE_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let h = header_u32(8, "height")? as usize;
    let w = header_u32(12, "width")? as usize;
    let l = header_u32(16, "bands")? as usize;
    for (field, v) in [("height", h), ("width", w), ("bands", l)] {
        if v == 0 {
            return Err(Error::format(field, "dimension must be at least 1"));
        }
    }
    let count = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(l))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::format("dimensions", "dimension overflow"))?;
    let payload = &bytes[20..];
    let available = payload.len() / 4;
    if payload.len() < count * 4 {
        return Err(Error::format(
            "payload",
            format!("truncated payload: expected {count} values, found {available}"),
        ));
    }
    if payload.len() > count * 4 {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes after {count} values", payload.len() - count * 4),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::format(
                "payload",
                format!("non-finite value at index {i}"),
            ));
        }
        data.push(v as f64);
    }
    HsiCube::new(h, w, l, data)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let file = File::open(path)?;
    read_cube_from(BufReader::new(file))
}

/// Writes a cube atomically (temp file, then rename).
pub fn write_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_cube_to(cube, &mut buf)?;
    write_atomic(path.as_ref(), &buf)
}
