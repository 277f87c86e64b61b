// SPDX-License-Identifier: Apache-2.0
//! Density-bound-block (DBB) codec.
//!
//! A block of `BZ` INT8 words holds at most `NNZ` non-zeros. It is stored as
//! exactly `NNZ` values (zero padded after the real ones) plus a `BZ`-bit
//! mask in which bit `i` (LSB first) marks expanded element `i` as non-zero.

use std::fmt;
use std::io::{Read, Write};

use num_rational::Ratio;

use crate::tensor::Matrix;
use crate::{BlockCoord, Error, Result};

/// Block sizes the format accepts.
pub const SUPPORTED_BLOCK_SIZES: [usize; 4] = [2, 4, 8, 16];

const WORD_BITS: usize = 8;
const FILE_MAGIC: &[u8; 4] = b"DBB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "RawFormat", into = "RawFormat")]
pub struct DbbFormat {
    bz: usize,
    nnz: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RawFormat {
    bz: usize,
    nnz: usize,
}

impl TryFrom<RawFormat> for DbbFormat {
    type Error = Error;
    fn try_from(raw: RawFormat) -> Result<Self> {
        DbbFormat::new(raw.bz, raw.nnz)
    }
}

impl From<DbbFormat> for RawFormat {
    fn from(f: DbbFormat) -> Self {
        RawFormat { bz: f.bz, nnz: f.nnz }
    }
}

impl DbbFormat {
    pub fn new(bz: usize, nnz: usize) -> Result<Self> {
        Self::with_word_bits(bz, nnz, WORD_BITS)
    }

    pub fn with_word_bits(bz: usize, nnz: usize, word_bits: usize) -> Result<Self> {
        if word_bits != WORD_BITS {
            return Err(Error::InvalidFormat(format!(
                "only 8-bit words are supported, got {word_bits}"
            )));
        }
        if !SUPPORTED_BLOCK_SIZES.contains(&bz) {
            return Err(Error::InvalidFormat(format!(
                "block size {bz} not in {SUPPORTED_BLOCK_SIZES:?}"
            )));
        }
        if nnz == 0 || nnz > bz {
            return Err(Error::InvalidFormat(format!(
                "nnz bound {nnz} outside 1..={bz}"
            )));
        }
        Ok(Self { bz, nnz })
    }

    #[inline]
    pub fn bz(&self) -> usize {
        self.bz
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn word_bits(&self) -> usize {
        WORD_BITS
    }

    /// Bytes used to store one block mask.
    pub fn mask_bytes(&self) -> usize {
        self.bz.div_ceil(8)
    }

    /// Encoded size of one block: `8*NNZ + BZ` bits.
    pub fn block_bits(&self) -> usize {
        WORD_BITS * self.nnz + self.bz
    }

    /// Dense over encoded storage, `8*BZ / (8*NNZ + BZ)`.
    pub fn compression_ratio(&self) -> Ratio<u64> {
        Ratio::new((WORD_BITS * self.bz) as u64, self.block_bits() as u64)
    }

    /// Fraction of block elements forced to zero, `1 - NNZ/BZ`.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz as f64 / self.bz as f64
    }
}

impl fmt::Display for DbbFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.nnz, self.bz)
    }
}

/// Free function form of [`DbbFormat::compression_ratio`].
pub fn compression_ratio(fmt: DbbFormat) -> Ratio<u64> {
    fmt.compression_ratio()
}

/// One compressed block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DbbBlock {
    pub values: Vec<i8>,
    pub mask: u16,
}

impl DbbBlock {
    pub fn popcount(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Expanded positions of the stored values, ascending.
    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        let mask = self.mask;
        (0..16).filter(move |i| mask >> i & 1 == 1)
    }

    pub fn mask_le_bytes(&self, fmt: DbbFormat) -> Vec<u8> {
        self.mask.to_le_bytes()[..fmt.mask_bytes()].to_vec()
    }
}

pub fn encode_block(raw: &[i8], fmt: DbbFormat) -> Result<DbbBlock> {
    if raw.len() != fmt.bz {
        return Err(Error::DimensionMismatch(format!(
            "block has {} elements, format expects {}",
            raw.len(),
            fmt.bz
        )));
    }
    let count = raw.iter().filter(|&&v| v != 0).count();
    if count > fmt.nnz {
        return Err(Error::DensityViolation {
            block: BlockCoord { row: 0, col: 0 },
            count,
            bound: fmt.nnz,
        });
    }
    let mut values = Vec::with_capacity(fmt.nnz);
    let mut mask = 0u16;
    for (i, &v) in raw.iter().enumerate() {
        if v != 0 {
            mask |= 1 << i;
            values.push(v);
        }
    }
    values.resize(fmt.nnz, 0);
    Ok(DbbBlock { values, mask })
}

fn validate_block(blk: &DbbBlock, fmt: DbbFormat) -> Result<()> {
    if blk.values.len() != fmt.nnz {
        return Err(Error::MalformedBlock(format!(
            "{} stored values, format stores {}",
            blk.values.len(),
            fmt.nnz
        )));
    }
    if fmt.bz < 16 && blk.mask >> fmt.bz != 0 {
        return Err(Error::MalformedBlock(format!(
            "mask {:#b} has bits beyond block size {}",
            blk.mask, fmt.bz
        )));
    }
    let pc = blk.popcount();
    if pc > fmt.nnz {
        return Err(Error::MalformedBlock(format!(
            "mask popcount {pc} exceeds nnz bound {}",
            fmt.nnz
        )));
    }
    if let Some(j) = blk.values[..pc].iter().position(|&v| v == 0) {
        return Err(Error::MalformedBlock(format!("stored value {j} is zero")));
    }
    if let Some(j) = blk.values[pc..].iter().position(|&v| v != 0) {
        return Err(Error::MalformedBlock(format!(
            "padding slot {} is non-zero",
            pc + j
        )));
    }
    Ok(())
}

pub fn decode_block(blk: &DbbBlock, fmt: DbbFormat) -> Result<Vec<i8>> {
    validate_block(blk, fmt)?;
    let mut out = vec![0i8; fmt.bz];
    for (pos, &v) in blk.positions().zip(&blk.values) {
        out[pos] = v;
    }
    Ok(out)
}

/// Matrix dimension the blocks run along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockAxis {
    /// Blocks run down each column; the natural choice for a `K x N` weight
    /// matrix whose rows are the reduction dimension.
    #[default]
    Rows,
    /// Blocks run along each row.
    Cols,
}

impl BlockAxis {
    fn tag(self) -> u8 {
        match self {
            BlockAxis::Rows => 0,
            BlockAxis::Cols => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(BlockAxis::Rows),
            1 => Ok(BlockAxis::Cols),
            t => Err(Error::Format(format!("unknown axis tag {t}"))),
        }
    }
}

impl std::str::FromStr for BlockAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rows" | "row" | "k" => Ok(BlockAxis::Rows),
            "cols" | "col" | "columns" => Ok(BlockAxis::Cols),
            _ => Err(Error::Validation(format!("unknown block axis '{s}'"))),
        }
    }
}

/// Block grid layout for a `rows x cols` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Grid {
    rows: usize,
    cols: usize,
    axis: BlockAxis,
    bz: usize,
}

impl Grid {
    fn new(rows: usize, cols: usize, axis: BlockAxis, bz: usize) -> Self {
        Self { rows, cols, axis, bz }
    }

    fn blocked_len(&self) -> usize {
        match self.axis {
            BlockAxis::Rows => self.rows,
            BlockAxis::Cols => self.cols,
        }
    }

    fn pad_count(&self) -> usize {
        self.blocked_len().next_multiple_of(self.bz) - self.blocked_len()
    }

    /// (grid rows, grid cols).
    fn dims(&self) -> (usize, usize) {
        match self.axis {
            BlockAxis::Rows => (self.rows.div_ceil(self.bz), self.cols),
            BlockAxis::Cols => (self.rows, self.cols.div_ceil(self.bz)),
        }
    }

    /// Matrix coordinate of element `i` within block `(br, bc)`, or `None`
    /// when it lies in the zero padding.
    fn element(&self, br: usize, bc: usize, i: usize) -> Option<(usize, usize)> {
        let (r, c) = match self.axis {
            BlockAxis::Rows => (br * self.bz + i, bc),
            BlockAxis::Cols => (br, bc * self.bz + i),
        };
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    fn gather(&self, m: &Matrix<i8>, br: usize, bc: usize) -> Vec<i8> {
        (0..self.bz)
            .map(|i| self.element(br, bc, i).map_or(0, |(r, c)| m.get(r, c)))
            .collect()
    }

    fn coords(&self) -> impl Iterator<Item = (usize, usize)> {
        let (gr, gc) = self.dims();
        (0..gr).flat_map(move |r| (0..gc).map(move |c| (r, c)))
    }
}

/// A matrix stored as DBB blocks in row-major block-grid order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbbMatrix {
    rows: usize,
    cols: usize,
    fmt: DbbFormat,
    axis: BlockAxis,
    pad_count: usize,
    blocks: Vec<DbbBlock>,
}

impl DbbMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn format(&self) -> DbbFormat {
        self.fmt
    }

    pub fn axis(&self) -> BlockAxis {
        self.axis
    }

    /// Zeros appended to the blocked dimension.
    pub fn pad_count(&self) -> usize {
        self.pad_count
    }

    pub fn blocks(&self) -> &[DbbBlock] {
        &self.blocks
    }

    /// (grid rows, grid cols) of the block grid.
    pub fn grid_dims(&self) -> (usize, usize) {
        self.grid().dims()
    }

    pub fn block(&self, br: usize, bc: usize) -> &DbbBlock {
        let (_, gc) = self.grid_dims();
        &self.blocks[br * gc + bc]
    }

    /// Largest non-zero count over all blocks.
    pub fn max_block_nnz(&self) -> usize {
        self.blocks.iter().map(DbbBlock::popcount).max().unwrap_or(0)
    }

    /// Encoded payload size in bits (masks plus stored values).
    pub fn encoded_bits(&self) -> usize {
        self.blocks.len() * self.fmt.block_bits()
    }

    fn grid(&self) -> Grid {
        Grid::new(self.rows, self.cols, self.axis, self.fmt.bz)
    }

    pub fn decode(&self) -> Result<Matrix<i8>> {
        let grid = self.grid();
        let mut out = Matrix::zeros(self.rows, self.cols);
        for ((br, bc), blk) in grid.coords().zip(&self.blocks) {
            let raw = decode_block(blk, self.fmt)?;
            for (i, v) in raw.into_iter().enumerate() {
                match grid.element(br, bc, i) {
                    Some((r, c)) => out.set(r, c, v),
                    None if v != 0 => {
                        return Err(Error::MalformedBlock(format!(
                            "block ({br}, {bc}) has a non-zero in its padding"
                        )))
                    }
                    None => {}
                }
            }
        }
        Ok(out)
    }

    /// Re-expresses the same values under a looser bound `nnz' >= nnz`.
    pub fn reformat(&self, fmt: DbbFormat) -> Result<DbbMatrix> {
        encode_matrix(&self.decode()?, fmt, self.axis)
    }
}

pub fn encode_matrix(dense: &Matrix<i8>, fmt: DbbFormat, axis: BlockAxis) -> Result<DbbMatrix> {
    let grid = Grid::new(dense.rows(), dense.cols(), axis, fmt.bz);
    let mut blocks = Vec::with_capacity(grid.dims().0 * grid.dims().1);
    for (br, bc) in grid.coords() {
        let raw = grid.gather(dense, br, bc);
        match encode_block(&raw, fmt) {
            Ok(b) => blocks.push(b),
            Err(Error::DensityViolation { count, bound, .. }) => {
                return Err(Error::DensityViolation {
                    block: BlockCoord { row: br, col: bc },
                    count,
                    bound,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(DbbMatrix {
        rows: dense.rows(),
        cols: dense.cols(),
        fmt,
        axis,
        pad_count: grid.pad_count(),
        blocks,
    })
}

/// Keeps the `NNZ` largest-magnitude elements of every block (lowest index
/// wins ties) and zeroes the rest.
pub fn prune_to_dbb(dense: &Matrix<i8>, fmt: DbbFormat, axis: BlockAxis) -> Matrix<i8> {
    let grid = Grid::new(dense.rows(), dense.cols(), axis, fmt.bz);
    let mut out = dense.clone();
    let mut order: Vec<usize> = Vec::with_capacity(fmt.bz);
    for (br, bc) in grid.coords() {
        let raw = grid.gather(dense, br, bc);
        order.clear();
        order.extend(0..fmt.bz);
        // i16 so that |-128| is representable.
        order.sort_by_key(|&i| (std::cmp::Reverse(i16::from(raw[i]).abs()), i));
        for &i in &order[fmt.nnz..] {
            if let Some((r, c)) = grid.element(br, bc, i) {
                out.set(r, c, 0);
            }
        }
    }
    out
}

/// A block that breaks the density bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Violation {
    pub block: BlockCoord,
    pub count: usize,
}

/// Every block with more than `NNZ` non-zeros, in block-grid order.
pub fn check_dbb(dense: &Matrix<i8>, fmt: DbbFormat, axis: BlockAxis) -> Vec<Violation> {
    let grid = Grid::new(dense.rows(), dense.cols(), axis, fmt.bz);
    grid.coords()
        .filter_map(|(br, bc)| {
            let count = grid.gather(dense, br, bc).iter().filter(|&&v| v != 0).count();
            (count > fmt.nnz).then_some(Violation {
                block: BlockCoord { row: br, col: bc },
                count,
            })
        })
        .collect()
}

/// Writes the `.dbb` container (little-endian).
pub fn write_dbb<W: Write>(m: &DbbMatrix, mut out: W) -> Result<()> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
    };
    let mb = m.fmt.mask_bytes();
    let mut buf = Vec::with_capacity(20 + m.blocks.len() * (mb + m.fmt.nnz));
    buf.extend_from_slice(FILE_MAGIC);
    buf.extend_from_slice(&[m.fmt.bz as u8, m.fmt.nnz as u8, m.axis.tag(), 0]);
    buf.extend_from_slice(&to_u32(m.rows, "rows")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.cols, "cols")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(m.pad_count, "pad_count")?.to_le_bytes());
    for blk in &m.blocks {
        buf.extend_from_slice(&blk.mask.to_le_bytes()[..mb]);
        buf.extend(blk.values.iter().map(|&v| v as u8));
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_dbb<R: Read>(mut input: R) -> Result<DbbMatrix> {
    let mut header = [0u8; 20];
    input.read_exact(&mut header)?;
    if &header[0..4] != FILE_MAGIC {
        return Err(Error::Format("bad DBB magic".into()));
    }
    let fmt = DbbFormat::new(header[4] as usize, header[5] as usize)?;
    let axis = BlockAxis::from_tag(header[6])?;
    let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let (rows, cols, pad_count) = (word(8), word(12), word(16));
    let grid = Grid::new(rows, cols, axis, fmt.bz);
    if grid.pad_count() != pad_count {
        return Err(Error::Format(format!(
            "pad_count {pad_count} inconsistent with shape (expected {})",
            grid.pad_count()
        )));
    }
    let (gr, gc) = grid.dims();
    let mb = fmt.mask_bytes();
    let mut payload = vec![0u8; gr * gc * (mb + fmt.nnz)];
    input.read_exact(&mut payload)?;
    let blocks = payload
        .chunks_exact(mb + fmt.nnz)
        .map(|chunk| {
            let mut mask_bytes = [0u8; 2];
            mask_bytes[..mb].copy_from_slice(&chunk[..mb]);
            let blk = DbbBlock {
                mask: u16::from_le_bytes(mask_bytes),
                values: chunk[mb..].iter().map(|&b| b as i8).collect(),
            };
            validate_block(&blk, fmt).map(|_| blk)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = DbbMatrix {
        rows,
        cols,
        fmt,
        axis,
        pad_count,
        blocks,
    };
    m.decode()?;
    Ok(m)
}
