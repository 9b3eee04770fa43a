//! Interested regions, uniform partitions and boolean cell masks.
//!
//! Cells are half-open `[low, high)` along every axis, except that the last
//! cell of each axis is closed so the whole region is covered. Flat indices
//! are row-major with axis 0 most significant; for a product grid over
//! `𝕏 × 𝕌` this is x-major, `flat = i_x * N_u + j_u`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// An axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidRegion(format!(
                "bounds must be non-empty and of equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (d, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidRegion(format!("axis {d}: need finite lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Like [`Region::new`], additionally requiring the origin strictly inside.
    pub fn around_origin(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let region = Self::new(lower, upper)?;
        if !region.contains_origin_interior() {
            return Err(Error::InvalidRegion("the origin must lie in the interior".into()));
        }
        Ok(region)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.width(d)).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point.iter().zip(self.lower.iter().zip(&self.upper)).all(|(p, (l, u))| l <= p && p <= u)
    }

    pub fn contains_origin_interior(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| *l < 0.0 && 0.0 < *u)
    }

    /// All `2^n` corner points.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n).map(|d| if mask >> d & 1 == 1 { self.upper[d] } else { self.lower[d] }).collect()
            })
            .collect()
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &Region) -> Region {
        Region {
            lower: self.lower.iter().chain(&other.lower).copied().collect(),
            upper: self.upper.iter().chain(&other.upper).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    region: Region,
    counts: Vec<usize>,
    len: usize,
}

impl UniformGrid {
    pub fn new(region: Region, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != region.dim() {
            return Err(Error::InvalidRegion(format!(
                "{} cell counts for a {}-dimensional region",
                counts.len(),
                region.dim()
            )));
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidRegion("cell counts must be positive".into()));
        }
        let len = counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| Error::InvalidRegion("cell count overflows".into()))?;
        Ok(Self { region, counts, len })
    }

    /// Partition with (approximately) the given cell width on every axis.
    pub fn with_cell_width(region: Region, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidRegion(format!("cell width must be positive, got {width}")));
        }
        let counts = (0..region.dim()).map(|d| libm::round(region.width(d) / width).max(1.0) as usize).collect();
        Self::new(region, counts)
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.region.width(axis) / self.counts[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.cell_width(d)).product()
    }

    /// Cell index along one axis, or `None` outside `[lower, upper]`.
    pub fn locate_axis(&self, axis: usize, value: f64) -> Option<usize> {
        let (lo, hi) = (self.region.lower[axis], self.region.upper[axis]);
        if !(lo <= value && value <= hi) {
            return None;
        }
        let count = self.counts[axis];
        let t = (value - lo) / (hi - lo) * count as f64;
        Some((libm::floor(t) as usize).min(count - 1))
    }

    pub fn locate(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dim() {
            return None;
        }
        let mut flat = 0usize;
        for (axis, &value) in point.iter().enumerate() {
            flat = flat * self.counts[axis] + self.locate_axis(axis, value)?;
        }
        Some(flat)
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.counts).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut multi = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            multi[axis] = flat % self.counts[axis];
            flat /= self.counts[axis];
        }
        multi
    }

    pub fn axis_cell_bounds(&self, axis: usize, index: usize) -> (f64, f64) {
        let lo = self.region.lower[axis];
        let w = self.cell_width(axis);
        let high = if index + 1 == self.counts[axis] { self.region.upper[axis] } else { lo + (index + 1) as f64 * w };
        (lo + index as f64 * w, high)
    }

    pub fn cell_bounds(&self, flat: usize) -> (Vec<f64>, Vec<f64>) {
        let multi = self.multi_index(flat);
        multi.iter().enumerate().map(|(axis, &i)| self.axis_cell_bounds(axis, i)).unzip()
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let (lo, hi) = self.cell_bounds(flat);
        lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    /// Grid over `self × other`; flat indices are `i * other.len() + j`.
    pub fn product(&self, other: &UniformGrid) -> UniformGrid {
        UniformGrid {
            region: self.region.product(&other.region),
            counts: self.counts.iter().chain(&other.counts).copied().collect(),
            len: self.len * other.len,
        }
    }

    /// Flat indices of every cell whose closure contains the origin.
    pub fn origin_cells(&self) -> Result<Vec<usize>> {
        if !self.region.contains_origin_interior() {
            return Err(Error::OriginOutsideGrid);
        }
        let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(self.dim());
        for axis in 0..self.dim() {
            let (lo, hi) = (self.region.lower[axis], self.region.upper[axis]);
            let t = -lo / (hi - lo) * self.counts[axis] as f64;
            let nearest = libm::round(t);
            let on_face = libm::fabs(t - nearest) < 1e-9;
            per_axis.push(if on_face {
                let k = nearest as usize;
                vec![k - 1, k]
            } else {
                vec![libm::floor(t) as usize]
            });
        }
        let mut cells = vec![Vec::new()];
        for options in &per_axis {
            cells = cells
                .into_iter()
                .flat_map(|prefix: Vec<usize>| {
                    options.iter().map(move |&k| {
                        let mut next = prefix.clone();
                        next.push(k);
                        next
                    })
                })
                .collect();
        }
        let mut flat: Vec<usize> = cells.iter().map(|m| self.flat_index(m)).collect();
        flat.sort_unstable();
        Ok(flat)
    }
}

/// One bit per cell of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    grid: UniformGrid,
    words: Vec<u64>,
}

impl CellMask {
    pub fn empty(grid: &UniformGrid) -> Self {
        Self { grid: grid.clone(), words: vec![0; grid.len().div_ceil(64)] }
    }

    pub fn full(grid: &UniformGrid) -> Self {
        let mut mask = Self::empty(grid);
        for i in 0..grid.len() {
            mask.set(i);
        }
        mask
    }

    pub fn from_indices(grid: &UniformGrid, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(grid);
        for i in indices {
            mask.set(i);
        }
        mask
    }

    pub fn from_bools(grid: &UniformGrid, bits: &[bool]) -> Result<Self> {
        if bits.len() != grid.len() {
            return Err(Error::Dimension { expected: grid.len(), got: bits.len() });
        }
        Ok(Self::from_indices(grid, bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)))
    }

    /// Rebuilds a mask from packed little-endian-bit words; bits past the
    /// cell count must be zero.
    pub fn from_words(grid: &UniformGrid, words: Vec<u64>) -> Result<Self> {
        let expected = grid.len().div_ceil(64);
        if words.len() != expected {
            return Err(Error::Dimension { expected, got: words.len() });
        }
        let tail = grid.len() % 64;
        if tail != 0 && words[expected - 1] >> tail != 0 {
            return Err(Error::InvalidParameter("bits set beyond the last cell".into()));
        }
        Ok(Self { grid: grid.clone(), words })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.grid.len(), "cell {i} out of range");
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn clear(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &word)| {
            let mut w = word;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * 64 + bit)
            })
        })
    }

    fn same_grid(&self, other: &CellMask) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn and(&self, other: &CellMask) -> Result<CellMask> {
        self.same_grid(other)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect();
        Ok(CellMask { grid: self.grid.clone(), words })
    }

    pub fn or(&self, other: &CellMask) -> Result<CellMask> {
        self.same_grid(other)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect();
        Ok(CellMask { grid: self.grid.clone(), words })
    }

    /// Equality of the bit patterns of two masks over the same grid.
    pub fn bits_equal(&self, other: &CellMask) -> Result<bool> {
        self.same_grid(other)?;
        Ok(self.words == other.words)
    }

    /// `self ⊂ other`, tested as `self ∧ other = self`.
    pub fn is_subset_of(&self, other: &CellMask) -> Result<bool> {
        self.and(other)?.bits_equal(self)
    }

    /// Lebesgue measure of the union of set cells.
    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    /// Projects a mask over `𝕏 × 𝕌` onto `𝕏`: a state cell is set iff some
    /// control cell in its column is set.
    pub fn project(&self, state_grid: &UniformGrid) -> Result<CellMask> {
        let n = state_grid.dim();
        let w = &self.grid;
        if w.dim() <= n
            || w.counts[..n] != state_grid.counts[..]
            || w.region.lower[..n] != state_grid.region.lower[..]
            || w.region.upper[..n] != state_grid.region.upper[..]
        {
            return Err(Error::GridMismatch);
        }
        let controls = w.len() / state_grid.len();
        let mut out = CellMask::empty(state_grid);
        for t in self.ones() {
            out.set(t / controls);
        }
        Ok(out)
    }

    /// Contiguous runs of set cells within `[start, end)`, as `(first, last)`.
    pub fn runs_in(&self, start: usize, end: usize) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut open: Option<usize> = None;
        for i in start..end {
            match (self.get(i), open) {
                (true, None) => open = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - 1));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            runs.push((s, end - 1));
        }
        runs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(lo: f64, hi: f64, cells: usize) -> UniformGrid {
        UniformGrid::new(Region::new(vec![lo], vec![hi]).unwrap(), vec![cells]).unwrap()
    }

    #[test]
    fn locate_reference_points() {
        let g = line(-2.0, 2.0, 400);
        assert_eq!(g.locate(&[-2.0]), Some(0));
        assert_eq!(g.locate(&[0.005]), Some(200));
        assert_eq!(g.locate(&[2.0]), Some(399));
        assert_eq!(g.locate(&[3.0]), None);
        assert_eq!(g.locate(&[-2.000001]), None);
        assert_eq!(g.locate(&[f64::NAN]), None);
    }

    #[test]
    fn product_grid_indexing() {
        let x = line(-2.0, 2.0, 400);
        let u = line(-2.0, 2.0, 400);
        assert_eq!(x.product(&u).len(), 160_000);

        let a = line(0.0, 1.0, 2);
        let b = line(0.0, 1.0, 3);
        let w = a.product(&b);
        assert_eq!(w.len(), 6);
        assert_eq!(w.flat_index(&[1, 2]), 5);
        assert_eq!(w.multi_index(5), [1, 2]);
        assert_eq!(w.locate(&[0.75, 0.9]), Some(5));
    }

    #[test]
    fn with_cell_width_counts() {
        let region = Region::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let g = UniformGrid::with_cell_width(region, 0.01).unwrap();
        assert_eq!(g.counts(), [400, 400]);
    }

    #[test]
    fn projection_examples() {
        let x = line(0.0, 1.0, 5);
        let u = line(0.0, 1.0, 8);
        let w = x.product(&u);
        assert!(CellMask::empty(&w).project(&x).unwrap().is_empty());
        let single = CellMask::from_indices(&w, [w.flat_index(&[3, 7])]);
        assert_eq!(single.project(&x).unwrap().ones().collect::<Vec<_>>(), [3]);
        let several = CellMask::from_indices(&w, [w.flat_index(&[1, 0]), w.flat_index(&[1, 5]), w.flat_index(&[2, 2])]);
        assert_eq!(several.project(&x).unwrap().ones().collect::<Vec<_>>(), [1, 2]);
        assert_eq!(single.project(&u), Err(Error::GridMismatch));
    }

    #[test]
    fn and_and_containment() {
        let g = line(0.0, 1.0, 4);
        let a = CellMask::from_bools(&g, &[true, true, false, false]).unwrap();
        let b = CellMask::from_bools(&g, &[true, true, true, false]).unwrap();
        assert!(a.and(&b).unwrap().bits_equal(&a).unwrap());
        assert!(a.is_subset_of(&b).unwrap());
        assert!(!b.is_subset_of(&a).unwrap());

        let g2 = line(0.0, 1.0, 2);
        let c = CellMask::from_bools(&g2, &[true, false]).unwrap();
        let d = CellMask::from_bools(&g2, &[false, true]).unwrap();
        assert!(c.and(&d).unwrap().is_empty());
        assert!(!c.is_subset_of(&d).unwrap());
        assert_eq!(a.and(&c), Err(Error::GridMismatch));
    }

    #[test]
    fn volume_counts_cells() {
        let g = line(-2.0, 2.0, 400);
        assert_eq!(CellMask::empty(&g).volume(), 0.0);
        let twenty = CellMask::from_indices(&g, 100..120);
        assert!((twenty.volume() - 0.20).abs() < 1e-12);
        assert!((CellMask::full(&g).volume() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn origin_cells_rules() {
        assert_eq!(line(-2.0, 2.0, 400).origin_cells().unwrap(), [199, 200]);
        assert_eq!(line(-1.0, 2.0, 2).origin_cells().unwrap(), [0]);
        let region = Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let g = UniformGrid::new(region, vec![4, 4]).unwrap();
        assert_eq!(g.origin_cells().unwrap(), [5, 6, 9, 10]);
        assert_eq!(line(0.0, 1.0, 4).origin_cells(), Err(Error::OriginOutsideGrid));
    }

    #[test]
    fn runs() {
        let g = line(0.0, 1.0, 10);
        let m = CellMask::from_indices(&g, [0, 1, 4, 5, 6, 9]);
        assert_eq!(m.runs_in(0, 10), [(0, 1), (4, 6), (9, 9)]);
        assert_eq!(m.runs_in(2, 4), []);
    }

    #[test]
    fn words_round_trip_rejects_stray_bits() {
        let g = line(0.0, 1.0, 70);
        let m = CellMask::from_indices(&g, [0, 63, 69]);
        assert_eq!(CellMask::from_words(&g, m.words().to_vec()).unwrap(), m);
        assert!(CellMask::from_words(&g, vec![0, 1 << 10]).is_err());
        assert!(CellMask::from_words(&g, vec![0]).is_err());
    }

    #[test]
    fn regions() {
        assert!(Region::around_origin(vec![0.5], vec![2.0]).is_err());
        assert!(Region::new(vec![1.0], vec![1.0]).is_err());
        let r = Region::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(r.corners().len(), 4);
        assert_eq!(r.volume(), 8.0);
    }
}
