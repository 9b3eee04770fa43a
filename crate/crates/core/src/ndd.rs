//! Sampled estimation of the robust negative-definite domains.
//!
//! A point `(x, u)` is *negative-definite* for `L` when every sampled
//! successor `x̄` of the successor box satisfies `L(x̄) - L(x) < -margin`.
//! A product cell is kept when it holds at least `min_samples_per_cell`
//! points and all of them are negative-definite; cells without samples are
//! never kept. The state-space estimate is the projection of the kept cells
//! plus the origin neighbourhood: every cell whose closure touches the
//! origin and the uncovered hole around them, up to a bounded number of
//! cell layers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{CellMask, UniformGrid};
use crate::lyapunov::Lyapunov;
use crate::par;
use crate::plant::PlantSet;
use crate::sampler::{sample_box, CounterRng, Purpose, SampleConfig, StreamKey};

/// State, control and product partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct NddGrids {
    pub state: UniformGrid,
    pub control: UniformGrid,
    pub product: UniformGrid,
}

impl NddGrids {
    pub fn new(state: UniformGrid, control: UniformGrid) -> Result<Self> {
        if !state.region().contains_origin_interior() || !control.region().contains_origin_interior() {
            return Err(Error::OriginOutsideGrid);
        }
        let product = state.product(&control);
        Ok(Self { state, control, product })
    }

    pub fn state_dim(&self) -> usize {
        self.state.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.control.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NddOptions {
    pub margin: f64,
    pub min_samples_per_cell: usize,
    /// Extra cell layers around the origin cells that may be filled when
    /// the projection leaves them uncovered (see [`fill_origin_neighborhood`]).
    pub origin_fill_layers: usize,
}

impl Default for NddOptions {
    fn default() -> Self {
        Self { margin: 0.0, min_samples_per_cell: 1, origin_fill_layers: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub negative: bool,
    /// Largest `L(x̄) - L(x)` among the successors actually drawn. Drawing
    /// stops at the first non-decreasing successor, so for rejected points
    /// this is only a witness, not the maximum.
    pub worst: f64,
}

/// Classifies `x` against successors drawn uniformly from `[lower, upper]`.
fn classify_in_box<L: Lyapunov + ?Sized>(
    lyap: &L,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    n_succ: usize,
    rng: &mut CounterRng,
    margin: f64,
) -> Result<Classification> {
    let here = lyap.value(x)?;
    let mut buf = [0.0; 16];
    let mut heap;
    let succ: &mut [f64] = if x.len() <= buf.len() {
        &mut buf[..x.len()]
    } else {
        heap = vec![0.0; x.len()];
        &mut heap
    };
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_succ {
        for (d, s) in succ.iter_mut().enumerate() {
            *s = rng.next_in(lower[d], upper[d]);
        }
        let diff = lyap.value(succ)? - here;
        worst = worst.max(diff);
        if !(diff < -margin) {
            return Ok(Classification { negative: false, worst });
        }
    }
    Ok(Classification { negative: true, worst })
}

/// Decides whether `L` decreases from `x` for every one of `n_succ`
/// successors sampled under `key`.
pub fn classify_point<L: Lyapunov + ?Sized>(
    plant: &PlantSet,
    lyap: &L,
    x: &[f64],
    u: &[f64],
    n_succ: usize,
    key: StreamKey,
    margin: f64,
) -> Result<bool> {
    if n_succ == 0 {
        return Err(Error::InvalidParameter("n_succ must be at least 1".into()));
    }
    let b = plant.successor_box(x, u)?;
    let mut rng = CounterRng::at(key, 0);
    Ok(classify_in_box(lyap, x, &b.lower, &b.upper, n_succ, &mut rng, margin)?.negative)
}

/// The data set `W^d` with successor boxes, grouped by product cell.
///
/// Drawing the points and evaluating the plant is independent of `L`, so
/// one bank serves every candidate of an optimisation run.
#[derive(Debug, Clone)]
pub struct StateControlSamples {
    grids: NddGrids,
    n_succ: usize,
    successor_key: StreamKey,
    /// `(x, u)` coordinates in cell order.
    points: Vec<f64>,
    /// Successor box bounds, `n` values each, in cell order.
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Original draw index of each stored point (its successor stream id).
    ids: Vec<u32>,
    /// CSR offsets: cell `t` owns stored points `cell_start[t]..cell_start[t + 1]`.
    cell_start: Vec<u32>,
}

impl StateControlSamples {
    pub fn draw(plant: &PlantSet, grids: &NddGrids, cfg: &SampleConfig) -> Result<Self> {
        cfg.validate()?;
        let n = grids.state_dim();
        let m = grids.input_dim();
        if plant.state_dim() != n || plant.input_dim() != m {
            return Err(Error::Dimension { expected: plant.state_dim() + plant.input_dim(), got: n + m });
        }
        let dim = n + m;
        let raw = sample_box(grids.product.region(), cfg.n_xu, StreamKey::new(cfg.seed, Purpose::StateControl, 0));
        let cells: Vec<usize> = par::map_indexed(raw.len(), |i| {
            grids.product.locate(raw.get(i)).expect("samples lie inside the region")
        });

        let mut cell_start = vec![0u32; grids.product.len() + 1];
        for &c in &cells {
            cell_start[c + 1] += 1;
        }
        for t in 0..grids.product.len() {
            cell_start[t + 1] += cell_start[t];
        }
        let mut cursor: Vec<u32> = cell_start[..grids.product.len()].to_vec();
        let mut ids = vec![0u32; raw.len()];
        for (i, &c) in cells.iter().enumerate() {
            ids[cursor[c] as usize] = i as u32;
            cursor[c] += 1;
        }

        let mut points = Vec::with_capacity(raw.len() * dim);
        for &id in &ids {
            points.extend_from_slice(raw.get(id as usize));
        }
        drop(raw);

        let boxes = par::try_map_indexed(ids.len(), |k| {
            let p = &points[k * dim..(k + 1) * dim];
            plant.successor_box(&p[..n], &p[n..])
        })?;
        let mut lower = Vec::with_capacity(ids.len() * n);
        let mut upper = Vec::with_capacity(ids.len() * n);
        for b in boxes {
            lower.extend_from_slice(&b.lower);
            upper.extend_from_slice(&b.upper);
        }

        Ok(Self {
            grids: grids.clone(),
            n_succ: cfg.n_succ,
            successor_key: StreamKey::new(cfg.seed, Purpose::Successor, 0),
            points,
            lower,
            upper,
            ids,
            cell_start,
        })
    }

    pub fn grids(&self) -> &NddGrids {
        &self.grids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn cell_count(&self, cell: usize) -> usize {
        (self.cell_start[cell + 1] - self.cell_start[cell]) as usize
    }

    /// Stored `(x, u)` points of one product cell.
    pub fn cell_points(&self, cell: usize) -> impl Iterator<Item = &[f64]> {
        let dim = self.grids.product.dim();
        let (a, b) = (self.cell_start[cell] as usize, self.cell_start[cell + 1] as usize);
        self.points[a * dim..b * dim].chunks_exact(dim)
    }

    /// Runs the classification for `L` over every cell.
    pub fn estimate<L: Lyapunov + ?Sized>(&self, lyap: &L, options: &NddOptions) -> Result<NddEstimate> {
        if lyap.state_dim() != self.grids.state_dim() {
            return Err(Error::Dimension { expected: self.grids.state_dim(), got: lyap.state_dim() });
        }
        let n = self.grids.state_dim();
        let dim = n + self.grids.input_dim();
        let min_samples = options.min_samples_per_cell.max(1);
        let per_cell = par::try_map_indexed(self.grids.product.len(), |t| -> Result<(bool, f64)> {
            let (a, b) = (self.cell_start[t] as usize, self.cell_start[t + 1] as usize);
            if b - a < min_samples {
                return Ok((false, f64::NAN));
            }
            let mut worst = f64::NEG_INFINITY;
            let mut rng = CounterRng::at(self.successor_key, 0);
            for k in a..b {
                rng.seek(u64::from(self.ids[k]), 0);
                let c = classify_in_box(
                    lyap,
                    &self.points[k * dim..k * dim + n],
                    &self.lower[k * n..(k + 1) * n],
                    &self.upper[k * n..(k + 1) * n],
                    self.n_succ,
                    &mut rng,
                    options.margin,
                )?;
                worst = worst.max(c.worst);
                if !c.negative {
                    return Ok((false, worst));
                }
            }
            Ok((true, worst))
        })?;

        let mut w_mask = CellMask::empty(&self.grids.product);
        let mut worst = Vec::with_capacity(per_cell.len());
        for (t, (kept, w)) in per_cell.into_iter().enumerate() {
            if kept {
                w_mask.set(t);
            }
            worst.push(w);
        }
        let counts = (0..self.grids.product.len()).map(|t| self.cell_count(t) as u32).collect();
        NddEstimate::from_w_mask(w_mask, &self.grids.state, counts, worst, options.origin_fill_layers)
    }
}

/// Cell-level inner approximations of the negative-definite domains.
#[derive(Debug, Clone, PartialEq)]
pub struct NddEstimate {
    /// Kept product cells.
    pub w_mask: CellMask,
    /// State cells: projection of `w_mask` plus the origin neighbourhood.
    pub x_mask: CellMask,
    /// State cells added by the origin modification (not in the projection).
    pub origin_fill: CellMask,
    /// Number of `W^d` points per product cell.
    pub counts: Vec<u32>,
    /// Per product cell, the largest `L(x̄) - L(x)` evaluated (NaN when the
    /// cell had too few samples to be considered).
    pub worst: Vec<f64>,
}

impl NddEstimate {
    pub fn from_w_mask(
        w_mask: CellMask,
        state: &UniformGrid,
        counts: Vec<u32>,
        worst: Vec<f64>,
        origin_fill_layers: usize,
    ) -> Result<Self> {
        let projected = w_mask.project(state)?;
        let x_mask = fill_origin_neighborhood(&projected, origin_fill_layers)?;
        let mut origin_fill = CellMask::empty(state);
        for c in x_mask.ones().filter(|&c| !projected.get(c)) {
            origin_fill.set(c);
        }
        Ok(Self { w_mask, x_mask, origin_fill, counts, worst })
    }

    pub fn state_grid(&self) -> &UniformGrid {
        self.x_mask.grid()
    }

    pub fn control_cells(&self) -> usize {
        self.w_mask.len() / self.x_mask.len()
    }
}

/// Sets every cell whose closure contains the origin.
pub fn apply_origin_fix(x_mask: &CellMask) -> Result<CellMask> {
    let mut out = x_mask.clone();
    for c in x_mask.grid().origin_cells()? {
        out.set(c);
    }
    Ok(out)
}

/// Origin modification with a bounded hole fill.
///
/// Near the origin the decrease of `L` vanishes, so no product cell there
/// is uniformly negative-definite and the projection leaves a small hole
/// around the origin whose width is a few cells. Starting from the origin
/// cells, this sets every unset cell reachable through unset face-adjacent
/// cells while staying within `layers` cells of the origin cells on every
/// axis. With `layers = 0` it reduces to [`apply_origin_fix`].
pub fn fill_origin_neighborhood(x_mask: &CellMask, layers: usize) -> Result<CellMask> {
    let grid = x_mask.grid();
    let origin = grid.origin_cells()?;
    let mut out = apply_origin_fix(x_mask)?;
    if layers == 0 {
        return Ok(out);
    }
    let n = grid.dim();
    let mut lo = vec![usize::MAX; n];
    let mut hi = vec![0usize; n];
    for &c in &origin {
        for (axis, i) in grid.multi_index(c).into_iter().enumerate() {
            lo[axis] = lo[axis].min(i);
            hi[axis] = hi[axis].max(i);
        }
    }
    for axis in 0..n {
        lo[axis] = lo[axis].saturating_sub(layers);
        hi[axis] = (hi[axis] + layers).min(grid.counts()[axis] - 1);
    }
    let mut visited = CellMask::empty(grid);
    let mut stack = origin.clone();
    for &c in &origin {
        visited.set(c);
    }
    while let Some(c) = stack.pop() {
        let multi = grid.multi_index(c);
        for axis in 0..n {
            for step in [-1i64, 1] {
                let next = multi[axis] as i64 + step;
                if next < lo[axis] as i64 || next > hi[axis] as i64 {
                    continue;
                }
                let mut m = multi.clone();
                m[axis] = next as usize;
                let neighbour = grid.flat_index(&m);
                if visited.get(neighbour) || x_mask.get(neighbour) {
                    continue;
                }
                visited.set(neighbour);
                out.set(neighbour);
                stack.push(neighbour);
            }
        }
    }
    Ok(out)
}

/// Draws `W^d` and classifies it in one go.
pub fn estimate_ndd<L: Lyapunov + ?Sized>(
    plant: &PlantSet,
    lyap: &L,
    grids: &NddGrids,
    cfg: &SampleConfig,
    options: &NddOptions,
) -> Result<NddEstimate> {
    StateControlSamples::draw(plant, grids, cfg)?.estimate(lyap, options)
}
