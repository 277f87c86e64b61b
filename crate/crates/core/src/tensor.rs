// SPDX-License-Identifier: Apache-2.0
//! Dense reference kernels: INT8 GEMM with INT32 accumulation, direct
//! convolution and software IM2COL lowering.
//!
//! These are the functional oracles for the array simulator and the IM2COL
//! unit, so they are written for clarity rather than speed.

use std::io::{Read, Write};

use crate::{Error, Result};

/// Largest reduction length for which an INT8 x INT8 dot product is
/// guaranteed to fit in an `i32` accumulator.
pub const MAX_REDUCTION: usize = (i32::MAX as usize) / (128 * 128);

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix needs {} elements, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.cols.max(1)).map(<[T]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }
}

impl Matrix<i8> {
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| i8::from(r == c))
    }

    pub fn widen(&self) -> Matrix<i32> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| i32::from(v)).collect(),
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// `a (MxK) * w (KxN)` with exact INT32 accumulation.
pub fn gemm_ref(a: &Matrix<i8>, w: &Matrix<i8>) -> Result<Matrix<i32>> {
    if a.cols != w.rows {
        return Err(Error::DimensionMismatch(format!(
            "inner dimensions differ: {}x{} * {}x{}",
            a.rows, a.cols, w.rows, w.cols
        )));
    }
    if a.cols > MAX_REDUCTION {
        return Err(Error::DimensionMismatch(format!(
            "reduction length {} exceeds the INT32-safe bound {MAX_REDUCTION}",
            a.cols
        )));
    }
    let mut out = Matrix::<i32>::zeros(a.rows, w.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * w.cols..(i + 1) * w.cols];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0 {
                continue;
            }
            let av = i32::from(av);
            for (o, &wv) in orow.iter_mut().zip(w.row(k)) {
                *o += av * i32::from(wv);
            }
        }
    }
    Ok(out)
}

/// Height x width x channels tensor in channel-minor layout:
/// element `(y, x, c)` lives at `(y * width + x) * channels + c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> FeatureMap<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width}x{channels} feature map needs {} elements, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![T::default(); height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Value at a possibly out-of-bounds coordinate; outside reads are zero
    /// padding.
    #[inline]
    pub fn get_padded(&self, y: isize, x: isize, c: usize) -> T {
        if y < 0 || x < 0 || y as usize >= self.height || x as usize >= self.width {
            T::default()
        } else {
            self.get(y as usize, x as usize, c)
        }
    }
}

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output spatial size along one axis, or `None` when the window does
    /// not fit.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if self.stride == 0 || self.kernel == 0 || padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    fn check(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if ![1, 3, 5].contains(&self.kernel) {
            return Err(Error::BadGeometry(format!(
                "kernel {} not in {{1, 3, 5}}",
                self.kernel
            )));
        }
        if self.stride == 0 {
            return Err(Error::BadGeometry("stride must be >= 1".into()));
        }
        match (self.output_len(height), self.output_len(width)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
            _ => Err(Error::BadGeometry(format!(
                "{height}x{width} input with k={} s={} p={} has no output",
                self.kernel, self.stride, self.pad
            ))),
        }
    }
}

/// Lowers a feature map to a matrix with one row per output pixel
/// (row-major over output y, x) and `k*k*C` columns ordered `(ky, kx, c)`.
pub fn im2col_lower(fm: &FeatureMap<i8>, geom: ConvGeometry) -> Result<Matrix<i8>> {
    let (oh, ow) = geom.check(fm.height, fm.width)?;
    let k = geom.kernel;
    let cols = k * k * fm.channels;
    let mut data = Vec::with_capacity(oh * ow * cols);
    for oy in 0..oh {
        for ox in 0..ow {
            let y0 = (oy * geom.stride) as isize - geom.pad as isize;
            let x0 = (ox * geom.stride) as isize - geom.pad as isize;
            for ky in 0..k {
                for kx in 0..k {
                    for c in 0..fm.channels {
                        data.push(fm.get_padded(y0 + ky as isize, x0 + kx as isize, c));
                    }
                }
            }
        }
    }
    Matrix::from_vec(oh * ow, cols, data)
}

/// Convolution filters laid out `[cout][ky][kx][cin]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvWeights {
    cout: usize,
    kernel: usize,
    cin: usize,
    data: Vec<i8>,
}

impl ConvWeights {
    pub fn new(cout: usize, kernel: usize, cin: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != cout * kernel * kernel * cin {
            return Err(Error::DimensionMismatch(format!(
                "{cout}x{kernel}x{kernel}x{cin} filters need {} elements, got {}",
                cout * kernel * kernel * cin,
                data.len()
            )));
        }
        Ok(Self {
            cout,
            kernel,
            cin,
            data,
        })
    }

    pub fn from_fn(
        cout: usize,
        kernel: usize,
        cin: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> i8,
    ) -> Self {
        let mut data = Vec::with_capacity(cout * kernel * kernel * cin);
        for o in 0..cout {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    for c in 0..cin {
                        data.push(f(o, ky, kx, c));
                    }
                }
            }
        }
        Self {
            cout,
            kernel,
            cin,
            data,
        }
    }

    #[inline]
    pub fn get(&self, o: usize, ky: usize, kx: usize, c: usize) -> i8 {
        self.data[((o * self.kernel + ky) * self.kernel + kx) * self.cin + c]
    }

    pub fn cout(&self) -> usize {
        self.cout
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn cin(&self) -> usize {
        self.cin
    }

    /// `(k*k*cin) x cout` weight matrix matching the column order of
    /// [`im2col_lower`].
    pub fn to_gemm_matrix(&self) -> Matrix<i8> {
        let k = self.kernel;
        Matrix::from_fn(k * k * self.cin, self.cout, |r, o| {
            let ky = r / (k * self.cin);
            let kx = (r / self.cin) % k;
            let c = r % self.cin;
            self.get(o, ky, kx, c)
        })
    }
}

/// Direct cross-correlation (no kernel flip).
pub fn conv_ref(
    fm: &FeatureMap<i8>,
    weights: &ConvWeights,
    stride: usize,
    pad: usize,
) -> Result<FeatureMap<i32>> {
    let geom = ConvGeometry::new(weights.kernel, stride, pad);
    let (oh, ow) = geom.check(fm.height, fm.width)?;
    if weights.cin != fm.channels {
        return Err(Error::DimensionMismatch(format!(
            "filters expect {} input channels, feature map has {}",
            weights.cin, fm.channels
        )));
    }
    let k = weights.kernel;
    let out = FeatureMap::from_fn(oh, ow, weights.cout, |oy, ox, o| {
        let y0 = (oy * stride) as isize - pad as isize;
        let x0 = (ox * stride) as isize - pad as isize;
        let mut acc = 0i32;
        for ky in 0..k {
            for kx in 0..k {
                for c in 0..fm.channels {
                    let a = fm.get_padded(y0 + ky as isize, x0 + kx as isize, c);
                    acc += i32::from(a) * i32::from(weights.get(o, ky, kx, c));
                }
            }
        }
        acc
    });
    Ok(out)
}

const MATRIX_MAGIC: &[u8; 4] = b"VMAT";

/// Element types storable in the raw matrix fixture format.
pub trait Element: Copy + Default {
    const TAG: u8;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for i8 {
    const TAG: u8 = 0;
    const SIZE: usize = 1;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self as u8);
    }
    fn read_le(bytes: &[u8]) -> Self {
        bytes[0] as i8
    }
}

impl Element for i32 {
    const TAG: u8 = 1;
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

/// Serializes a matrix as `VMAT | dtype u8 | 3 reserved | rows u32 | cols u32 | data`,
/// all little-endian.
pub fn write_matrix<T: Element, W: Write>(m: &Matrix<T>, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + m.data.len() * T::SIZE);
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&[T::TAG, 0, 0, 0]);
    buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for &v in &m.data {
        v.write_le(&mut buf);
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<T: Element, R: Read>(mut input: R) -> Result<Matrix<T>> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[0..4] != MATRIX_MAGIC {
        return Err(Error::Format("bad matrix magic".into()));
    }
    if header[4] != T::TAG {
        return Err(Error::Format(format!(
            "matrix dtype tag {} does not match requested tag {}",
            header[4],
            T::TAG
        )));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; rows * cols * T::SIZE];
    input.read_exact(&mut payload)?;
    let data = payload.chunks_exact(T::SIZE).map(T::read_le).collect();
    Matrix::from_vec(rows, cols, data)
}
