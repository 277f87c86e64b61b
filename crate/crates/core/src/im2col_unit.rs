// SPDX-License-Identifier: Apache-2.0
//! Cycle-level model of the hardware IM2COL unit for 3x3, stride-1
//! convolutions.
//!
//! The unit works on strips of six input rows (four output rows). Each
//! 9-cycle phase loads a 6x4 input tile from SRAM and emits two output
//! columns: on cycle `t` it applies kernel tap `(ky, kx) = (t / 3, t % 3)` to
//! the eight output pixels of the phase, so 24 bytes read become 72 bytes
//! delivered. Zero padding is synthesised, never read.
//!
//! Emission order: cycle (kernel tap), then output column within the phase,
//! then output row within the strip.

use crate::tensor::{ConvGeometry, FeatureMap};
use crate::{Error, Result};

pub const STRIP_ROWS: usize = 6;
pub const TILE_COLS: usize = 4;
pub const OUT_ROWS: usize = STRIP_ROWS - 2;
pub const OUT_COLS: usize = TILE_COLS - 2;
pub const PHASE_CYCLES: usize = 9;

/// One byte handed to the datapath, tagged with its im2col coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Delivered {
    pub out_y: usize,
    pub out_x: usize,
    pub ky: usize,
    pub kx: usize,
    pub channel: usize,
    pub value: i8,
}

impl Delivered {
    /// Column of this byte in [`crate::tensor::im2col_lower`]'s output.
    pub fn lowered_col(&self, kernel: usize, channels: usize) -> usize {
        (self.ky * kernel + self.kx) * channels + self.channel
    }
}

/// Register tile plus phase counter and traffic counters.
#[derive(Debug, Clone, Default)]
pub struct Im2colUnitState {
    buffer: [[i8; TILE_COLS]; STRIP_ROWS],
    out_rows: usize,
    out_cols: usize,
    phase_cycle: usize,
    loaded: bool,
    pub sram_read_bytes: u64,
    pub delivered_bytes: u64,
    pub cycles: u64,
    pub phases: u64,
}

impl Im2colUnitState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a tile. `real` marks positions backed by SRAM; the rest are
    /// padding and cost nothing. Only the rows and columns feeding
    /// `out_rows x out_cols` outputs are fetched.
    pub fn load(
        &mut self,
        tile: [[i8; TILE_COLS]; STRIP_ROWS],
        real: [[bool; TILE_COLS]; STRIP_ROWS],
        out_rows: usize,
        out_cols: usize,
    ) {
        debug_assert!(!self.loaded, "tile loaded mid-phase");
        debug_assert!((1..=OUT_ROWS).contains(&out_rows) && (1..=OUT_COLS).contains(&out_cols));
        self.buffer = tile;
        self.out_rows = out_rows;
        self.out_cols = out_cols;
        self.phase_cycle = 0;
        self.loaded = true;
        self.phases += 1;
        for row in real.iter().take(out_rows + 2) {
            self.sram_read_bytes += row[..out_cols + 2].iter().filter(|&&r| r).count() as u64;
        }
    }

    /// Advances one cycle, pushing `(row, col, ky, kx, value)` for every
    /// operand delivered. Returns `false` once the phase is finished.
    pub fn tick(&mut self, out: &mut Vec<(usize, usize, usize, usize, i8)>) -> bool {
        if !self.loaded {
            return false;
        }
        let (ky, kx) = (self.phase_cycle / 3, self.phase_cycle % 3);
        for j in 0..self.out_cols {
            for r in 0..self.out_rows {
                out.push((r, j, ky, kx, self.buffer[r + ky][j + kx]));
            }
        }
        self.delivered_bytes += (self.out_cols * self.out_rows) as u64;
        self.cycles += 1;
        self.phase_cycle += 1;
        if self.phase_cycle == PHASE_CYCLES {
            self.loaded = false;
        }
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamResult {
    pub sram_read_bytes: u64,
    pub delivered_bytes: u64,
    pub cycles: u64,
    pub phases: u64,
    /// Phases with a full 6x4 tile, no padding and two output columns.
    pub interior_phases: u64,
    pub stream: Vec<Delivered>,
    /// Set when the geometry bypassed the unit (software lowering).
    pub bypassed: bool,
}

/// `delivered / read`.
pub fn magnification(res: &StreamResult) -> Result<f64> {
    if res.sram_read_bytes == 0 {
        return Err(Error::DivisionByZero("IM2COL stream performed no SRAM reads"));
    }
    Ok(res.delivered_bytes as f64 / res.sram_read_bytes as f64)
}

fn check_supported(geom: ConvGeometry) -> Result<()> {
    if geom.kernel != 3 || geom.stride != 1 {
        return Err(Error::UnsupportedGeometry(format!(
            "hardware IM2COL handles k=3 s=1 only, got k={} s={}",
            geom.kernel, geom.stride
        )));
    }
    Ok(())
}

/// Streams a whole feature map through the unit, one channel at a time.
/// With `keep_stream` false only the counters are produced.
pub fn stream_feature_map(
    fm: &FeatureMap<i8>,
    geom: ConvGeometry,
    keep_stream: bool,
) -> Result<StreamResult> {
    check_supported(geom)?;
    let (oh, ow) = match (geom.output_len(fm.height()), geom.output_len(fm.width())) {
        (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
        _ => {
            return Err(Error::BadGeometry(format!(
                "{}x{} input has no 3x3 output at pad {}",
                fm.height(),
                fm.width(),
                geom.pad
            )))
        }
    };
    let pad = geom.pad as isize;
    let mut unit = Im2colUnitState::new();
    let mut res = StreamResult::default();
    let mut taps = Vec::with_capacity(OUT_ROWS * OUT_COLS);
    for oy0 in (0..oh).step_by(OUT_ROWS) {
        let out_rows = OUT_ROWS.min(oh - oy0);
        for ch in 0..fm.channels() {
            for ox0 in (0..ow).step_by(OUT_COLS) {
                let out_cols = OUT_COLS.min(ow - ox0);
                let mut tile = [[0i8; TILE_COLS]; STRIP_ROWS];
                let mut real = [[false; TILE_COLS]; STRIP_ROWS];
                for (dy, (trow, rrow)) in tile.iter_mut().zip(real.iter_mut()).enumerate() {
                    for dx in 0..TILE_COLS {
                        let y = (oy0 + dy) as isize - pad;
                        let x = (ox0 + dx) as isize - pad;
                        let inside = y >= 0
                            && x >= 0
                            && (y as usize) < fm.height()
                            && (x as usize) < fm.width();
                        rrow[dx] = inside;
                        trow[dx] = if inside { fm.get(y as usize, x as usize, ch) } else { 0 };
                    }
                }
                let interior = out_rows == OUT_ROWS
                    && out_cols == OUT_COLS
                    && real.iter().all(|r| r.iter().all(|&b| b));
                res.interior_phases += u64::from(interior);
                unit.load(tile, real, out_rows, out_cols);
                loop {
                    taps.clear();
                    if !unit.tick(&mut taps) {
                        break;
                    }
                    if keep_stream {
                        res.stream.extend(taps.iter().map(|&(r, j, ky, kx, value)| Delivered {
                            out_y: oy0 + r,
                            out_x: ox0 + j,
                            ky,
                            kx,
                            channel: ch,
                            value,
                        }));
                    }
                }
            }
        }
    }
    res.sram_read_bytes = unit.sram_read_bytes;
    res.delivered_bytes = unit.delivered_bytes;
    res.cycles = unit.cycles;
    res.phases = unit.phases;
    Ok(res)
}

/// Streams a single-channel strip of exactly six rows with no padding.
pub fn stream_tile(strip: &FeatureMap<i8>, geom: ConvGeometry) -> Result<StreamResult> {
    check_supported(geom)?;
    if strip.height() != STRIP_ROWS || strip.channels() != 1 {
        return Err(Error::BadGeometry(format!(
            "strip must be {STRIP_ROWS} rows of one channel, got {}x{}x{}",
            strip.height(),
            strip.width(),
            strip.channels()
        )));
    }
    stream_feature_map(strip, ConvGeometry { pad: 0, ..geom }, true)
}

/// Pass-through accounting when the unit is bypassed (1x1 kernels): each
/// byte is read once and delivered once.
pub fn bypass(fm: &FeatureMap<i8>) -> StreamResult {
    let n = fm.data().len() as u64;
    StreamResult {
        sram_read_bytes: n,
        delivered_bytes: n,
        bypassed: true,
        ..StreamResult::default()
    }
}

/// Expected activation-SRAM magnification for a layer geometry and whether
/// the hardware unit handles it.
pub fn expected_magnification(kernel: usize, stride: usize, unit_present: bool) -> (f64, bool) {
    if unit_present && kernel == 3 && stride == 1 {
        (3.0, true)
    } else {
        (1.0, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::im2col_lower;
    use proptest::prelude::*;

    fn g(p: usize) -> ConvGeometry {
        ConvGeometry::new(3, 1, p)
    }

    fn lowered_multiset(fm: &FeatureMap<i8>, geom: ConvGeometry) -> Vec<(usize, usize, i8)> {
        let low = im2col_lower(fm, geom).unwrap();
        let mut v: Vec<_> = (0..low.rows())
            .flat_map(|r| (0..low.cols()).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, low.get(r, c)))
            .collect();
        v.sort_unstable();
        v
    }

    fn stream_multiset(res: &StreamResult, fm: &FeatureMap<i8>, geom: ConvGeometry) -> Vec<(usize, usize, i8)> {
        let ow = geom.output_len(fm.width()).unwrap();
        let mut v: Vec<_> = res
            .stream
            .iter()
            .map(|d| (d.out_y * ow + d.out_x, d.lowered_col(3, fm.channels()), d.value))
            .collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn single_phase_magnifies_by_three() {
        let strip = FeatureMap::from_fn(6, 4, 1, |y, x, _| (y * 4 + x) as i8);
        let r = stream_tile(&strip, g(0)).unwrap();
        assert_eq!((r.sram_read_bytes, r.delivered_bytes, r.cycles), (24, 72, 9));
        assert_eq!(r.interior_phases, 1);
        assert_eq!(magnification(&r).unwrap(), 3.0);
    }

    #[test]
    fn emission_order_is_documented() {
        let strip = FeatureMap::from_fn(6, 4, 1, |y, x, _| (y * 4 + x) as i8);
        let r = stream_tile(&strip, g(0)).unwrap();
        // Cycle 0 is tap (0, 0): column 0 rows 0..4, then column 1 rows 0..4.
        let first: Vec<(usize, usize)> = r.stream[..8].iter().map(|d| (d.out_y, d.out_x)).collect();
        assert_eq!(first, vec![(0, 0), (1, 0), (2, 0), (3, 0), (0, 1), (1, 1), (2, 1), (3, 1)]);
        let last = r.stream.last().unwrap();
        assert_eq!((last.ky, last.kx, last.value), (2, 2, (5 * 4 + 3) as i8));
    }

    #[test]
    fn constant_strip() {
        let strip = FeatureMap::from_fn(6, 10, 1, |_, _, _| -5i8);
        let r = stream_tile(&strip, g(0)).unwrap();
        assert!(r.stream.iter().all(|d| d.value == -5));
    }

    #[test]
    fn random_strip_covers_im2col() {
        let mut s = 77u64;
        let strip = FeatureMap::from_fn(6, 20, 1, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 56) as i8
        });
        let r = stream_tile(&strip, g(0)).unwrap();
        assert_eq!(stream_multiset(&r, &strip, g(0)), lowered_multiset(&strip, g(0)));
    }

    #[test]
    fn long_strip_edges() {
        let strip = FeatureMap::from_fn(6, 64, 1, |_, x, _| x as i8);
        let r = stream_tile(&strip, g(0)).unwrap();
        assert!(magnification(&r).unwrap() >= 2.5);
        let odd = stream_tile(&FeatureMap::from_fn(6, 65, 1, |_, _, _| 1), g(0)).unwrap();
        // The last phase emits one column from three read columns.
        assert_eq!(odd.sram_read_bytes, 31 * 24 + 18);
        assert!(magnification(&odd).unwrap() < 3.0);
    }

    #[test]
    fn bypass_and_unsupported() {
        let fm = FeatureMap::<i8>::zeros(4, 4, 2);
        assert_eq!(magnification(&bypass(&fm)).unwrap(), 1.0);
        assert!(matches!(
            stream_feature_map(&fm, ConvGeometry::new(5, 1, 2), false),
            Err(Error::UnsupportedGeometry(_))
        ));
        assert!(matches!(
            stream_feature_map(&fm, ConvGeometry::new(3, 2, 1), false),
            Err(Error::UnsupportedGeometry(_))
        ));
        assert!(matches!(magnification(&StreamResult::default()), Err(Error::DivisionByZero(_))));
        assert_eq!(expected_magnification(3, 1, true), (3.0, true));
        assert_eq!(expected_magnification(5, 1, true), (1.0, false));
    }

    #[test]
    fn padding_is_not_read() {
        let fm = FeatureMap::from_fn(4, 2, 1, |_, _, _| 1i8);
        let r = stream_feature_map(&fm, g(1), true).unwrap();
        assert_eq!(r.sram_read_bytes, 8);
        assert_eq!(r.delivered_bytes, 4 * 2 * 9);
    }

    proptest! {
        #[test]
        fn feature_map_stream_matches_lowering(h in 1usize..14, w in 1usize..14, c in 1usize..4, p in 0usize..2, seed in any::<u64>()) {
            prop_assume!(h + 2 * p >= 3 && w + 2 * p >= 3);
            let mut s = seed;
            let fm = FeatureMap::from_fn(h, w, c, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 56) as i8
            });
            let r = stream_feature_map(&fm, g(p), true).unwrap();
            prop_assert_eq!(r.delivered_bytes as usize, r.stream.len());
            prop_assert_eq!(stream_multiset(&r, &fm, g(p)), lowered_multiset(&fm, g(p)));
            prop_assert_eq!(r.cycles, r.phases * PHASE_CYCLES as u64);
        }
    }
}
