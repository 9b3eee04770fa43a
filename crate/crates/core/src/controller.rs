//! State feedback fitted inside the negative-definite domain.
//!
//! Training pairs are taken from the kept product cells, a Gaussian-process
//! mean with a squared-exponential kernel interpolates them, and sampled
//! probes check that `(x, μ(x))` stays in a kept cell.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{CellMask, Region, UniformGrid};
use crate::ndd::NddEstimate;
use crate::par;
use crate::sampler::{CounterRng, Purpose, StreamKey};

/// Anything that maps a state to a control input.
pub trait Policy: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn input(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Pairs `(x, u)`, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    state_dim: usize,
    input_dim: usize,
    states: Vec<f64>,
    inputs: Vec<f64>,
    pub warnings: Vec<String>,
}

impl TrainingSet {
    /// Builds a set from explicit pairs; `(0, 0)` is appended when absent.
    pub fn new(state_dim: usize, input_dim: usize, states: Vec<f64>, inputs: Vec<f64>) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 || states.len() % state_dim != 0 {
            return Err(Error::Dimension { expected: state_dim, got: states.len() });
        }
        if inputs.len() != states.len() / state_dim * input_dim {
            return Err(Error::Dimension { expected: states.len() / state_dim * input_dim, got: inputs.len() });
        }
        if states.iter().chain(&inputs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("training pairs must be finite".into()));
        }
        let mut set = Self { state_dim, input_dim, states, inputs, warnings: Vec::new() };
        if !set.states.chunks_exact(state_dim).any(|x| x.iter().all(|&v| v == 0.0)) {
            set.states.extend(core::iter::repeat_n(0.0, state_dim));
            set.inputs.extend(core::iter::repeat_n(0.0, input_dim));
        }
        Ok(set)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

/// The control partition of the product grid behind `ndd`.
pub fn control_grid(ndd: &NddEstimate) -> Result<UniformGrid> {
    let product = ndd.w_mask.grid();
    let n = ndd.state_grid().dim();
    let r = product.region();
    UniformGrid::new(
        Region::new(r.lower()[n..].to_vec(), r.upper()[n..].to_vec())?,
        product.counts()[n..].to_vec(),
    )
}

/// Cells exempt from the membership condition: the origin cells and the
/// cells added by the origin modification.
fn exempt_cells(ndd: &NddEstimate) -> Result<CellMask> {
    let mut exempt = ndd.origin_fill.clone();
    for c in ndd.state_grid().origin_cells()? {
        exempt.set(c);
    }
    Ok(exempt)
}

/// Longest run of kept control cells in the column of `cell`, as control
/// indices `(first, last)`; the lower run wins ties.
fn longest_run(ndd: &NddEstimate, cell: usize, columns: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for (a, b) in ndd.w_mask.runs_in(cell * columns, (cell + 1) * columns) {
        if best.is_none_or(|(c, d)| b - a > d - c) {
            best = Some((a - cell * columns, b - cell * columns));
        }
    }
    best
}

/// Middle of a run of control cells: the midpoint of the covered interval
/// for a single input, else the centre of the middle cell.
fn run_centre(control: &UniformGrid, first: usize, last: usize) -> Vec<f64> {
    if control.dim() == 1 {
        vec![0.5 * (control.axis_cell_bounds(0, first).0 + control.axis_cell_bounds(0, last).1)]
    } else {
        control.cell_center((first + last) / 2)
    }
}

/// Picks one pair per `stride`-th set state cell: the cell centre and the
/// centre of the longest run of kept control cells in its column (the lower
/// run wins ties). Runs follow the flat control index.
///
/// With a single input, pairs are also placed on cell faces: between two set
/// cells at the middle of the overlap of their runs (the touching value when
/// the runs only touch), and where a cell borders the exempt origin
/// neighbourhood, a cell outside the estimate or the region boundary, at the
/// centre of its run. Face pairs lie in the closure of kept product cells.
pub fn select_training(ndd: &NddEstimate, stride: usize) -> Result<TrainingSet> {
    if stride == 0 {
        return Err(Error::InvalidParameter("training stride must be at least 1".into()));
    }
    if ndd.x_mask.count() == 0 {
        return Err(Error::InvalidParameter("negative-definite state estimate is empty".into()));
    }
    let state = ndd.state_grid();
    let control = control_grid(ndd)?;
    let exempt = exempt_cells(ndd)?;
    let columns = control.len();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut warnings = Vec::new();
    for cell in ndd.x_mask.ones().step_by(stride) {
        let Some((first, last)) = longest_run(ndd, cell, columns) else {
            if !exempt.get(cell) {
                warnings.push(format!("state cell {cell} has no kept control cell; skipped"));
            }
            continue;
        };
        let x = state.cell_center(cell);
        if x.iter().all(|&v| v == 0.0) {
            continue;
        }
        states.extend_from_slice(&x);
        inputs.extend(run_centre(&control, first, last));
    }
    if control.dim() == 1 {
        face_pairs(ndd, &state, &control, &exempt, &mut states, &mut inputs, &mut warnings);
    }
    let mut set = TrainingSet::new(state.dim(), control.dim(), states, inputs)?;
    set.warnings = warnings;
    Ok(set)
}

fn face_pairs(
    ndd: &NddEstimate,
    state: &UniformGrid,
    control: &UniformGrid,
    exempt: &CellMask,
    states: &mut Vec<f64>,
    inputs: &mut Vec<f64>,
    warnings: &mut Vec<String>,
) {
    let columns = control.len();
    let edge = |index: usize| {
        if index == columns {
            control.axis_cell_bounds(0, index - 1).1
        } else {
            control.axis_cell_bounds(0, index).0
        }
    };
    let mut border: Vec<(Vec<f64>, f64)> = Vec::new();
    for cell in ndd.x_mask.ones() {
        if exempt.get(cell) {
            continue;
        }
        let Some(run) = longest_run(ndd, cell, columns) else { continue };
        let multi = state.multi_index(cell);
        for axis in 0..state.dim() {
            for up in [false, true] {
                let k = multi[axis];
                let (lo, hi) = state.axis_cell_bounds(axis, k);
                let mut face = state.cell_center(cell);
                face[axis] = if up { hi } else { lo };
                let outer = (!up && k == 0) || (up && k + 1 == state.counts()[axis]);
                let neighbour = (!outer).then(|| {
                    let mut m = multi.clone();
                    m[axis] = if up { k + 1 } else { k - 1 };
                    state.flat_index(&m)
                });
                let Some(neighbour) = neighbour.filter(|&c| ndd.x_mask.get(c)) else {
                    states.extend_from_slice(&face);
                    inputs.extend(run_centre(control, run.0, run.1));
                    continue;
                };
                if exempt.get(neighbour) {
                    border.push((face.clone(), run_centre(control, run.0, run.1)[0]));
                    states.extend_from_slice(&face);
                    inputs.extend(run_centre(control, run.0, run.1));
                    continue;
                }
                if !up {
                    continue;
                }
                let Some(other) = longest_run(ndd, neighbour, columns) else { continue };
                let lo = edge(run.0).max(edge(other.0));
                let hi = edge(run.1 + 1).min(edge(other.1 + 1));
                if lo <= hi {
                    states.extend_from_slice(&face);
                    inputs.push(0.5 * (lo + hi));
                } else {
                    warnings.push(format!(
                        "state cells {cell} and {neighbour} keep disjoint control runs; no continuous feedback fits both"
                    ));
                }
            }
        }
    }
    // inside the exempt neighbourhood, continue the nearest border pair
    // radially towards the origin
    if border.is_empty() {
        return;
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for cell in exempt.ones() {
        let centre = state.cell_center(cell);
        let multi = state.multi_index(cell);
        points.push(centre.clone());
        for axis in 0..state.dim() {
            let (lo, hi) = state.axis_cell_bounds(axis, multi[axis]);
            for v in [lo, hi] {
                let mut face = centre.clone();
                face[axis] = v;
                points.push(face);
            }
        }
    }
    let mut seen: Vec<&[f64]> = border.iter().map(|(x, _)| x.as_slice()).collect();
    let origin = vec![0.0; state.dim()];
    for x in &points {
        if x.iter().all(|&v| v == 0.0) || seen.contains(&x.as_slice()) {
            continue;
        }
        seen.push(x);
        let (xb, ub) = border
            .iter()
            .min_by(|a, b| dist2(&a.0, x).total_cmp(&dist2(&b.0, x)))
            .expect("non-empty");
        let scale = x.iter().zip(xb).map(|(p, q)| p * q).sum::<f64>() / dist2(xb, &origin);
        states.extend_from_slice(x);
        inputs.push(ub * scale);
    }
}

/// Default kernel length scale, in state cell widths.
pub const DEFAULT_LENGTH_CELLS: f64 = 0.5;

/// Default length scale for a plant with `input_dim` inputs: half a cell
/// with a single input, where face pairs halve the training spacing, and a
/// full cell otherwise.
pub fn default_length_cells(input_dim: usize) -> f64 {
    if input_dim == 1 {
        DEFAULT_LENGTH_CELLS
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelHyper {
    /// One length scale per state dimension.
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    pub jitter: f64,
}

impl KernelHyper {
    /// Length scale of `cells` cell widths per axis, unit variance, jitter
    /// `1e-8`.
    pub fn for_grid(grid: &UniformGrid, cells: f64) -> Self {
        Self {
            length_scales: (0..grid.dim()).map(|a| cells * grid.cell_width(a)).collect(),
            signal_variance: 1.0,
            jitter: 1e-8,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.length_scales.len() != n {
            return Err(Error::Dimension { expected: n, got: self.length_scales.len() });
        }
        if self.length_scales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidParameter("length scales must be positive".into()));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(Error::InvalidParameter("signal variance must be positive".into()));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::InvalidParameter("jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// `exp(-½ Σ ((a-b)/ℓ)²)`, without the signal variance.
    fn correlation(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.length_scales) {
            let t = (x - y) / l;
            s += t * t;
        }
        libm::exp(-0.5 * s)
    }
}

/// Extra jitter factors tried after the configured one fails.
const JITTER_ESCALATIONS: u32 = 3;
const JITTER_FACTOR: f64 = 100.0;

/// Kernel-regression state feedback with `μ(0) = 0`.
///
/// `μ(x) = g(x) - g(0)·exp(-½ Σ (x_i/ℓ_i)²)` where `g` is the posterior
/// mean; the correction is below the jitter level and makes the origin
/// condition exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    training: TrainingSet,
    hyper: KernelHyper,
    /// Jitter actually used after escalation.
    jitter_used: f64,
    /// `N × m`, row-major.
    weights: Vec<f64>,
    mean_at_origin: Vec<f64>,
}

impl Controller {
    pub fn fit(training: TrainingSet, hyper: KernelHyper) -> Result<Self> {
        let n = training.state_dim();
        let m = training.input_dim();
        let count = training.len();
        if count < 2 {
            return Err(Error::InvalidParameter("at least two training pairs are required".into()));
        }
        hyper.validate(n)?;
        let gram = DMatrix::from_fn(count, count, |i, j| {
            hyper.signal_variance * hyper.correlation(training.state(i), training.state(j))
        });
        let targets = DMatrix::from_fn(count, m, |i, k| training.input(i)[k]);
        let floor = hyper.signal_variance * f64::EPSILON * count as f64;
        let mut jitter = hyper.jitter.max(floor);
        let mut attempt = 0;
        let weights = loop {
            let mut k = gram.clone();
            for i in 0..count {
                k[(i, i)] += jitter;
            }
            if let Some(chol) = k.cholesky() {
                let w = chol.solve(&targets);
                if w.iter().all(|v| v.is_finite()) {
                    break w;
                }
            }
            if attempt == JITTER_ESCALATIONS {
                return Err(Error::IllConditioned { jitter });
            }
            attempt += 1;
            jitter *= JITTER_FACTOR;
        };
        let mut flat = vec![0.0; count * m];
        for i in 0..count {
            for k in 0..m {
                flat[i * m + k] = weights[(i, k)];
            }
        }
        let mut c = Self { training, hyper, jitter_used: jitter, weights: flat, mean_at_origin: vec![0.0; m] };
        c.mean_at_origin = c.posterior_mean(&vec![0.0; n]);
        Ok(c)
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn hyper(&self) -> &KernelHyper {
        &self.hyper
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    fn posterior_mean(&self, x: &[f64]) -> Vec<f64> {
        let m = self.training.input_dim();
        let mut out = vec![0.0; m];
        for i in 0..self.training.len() {
            let k = self.hyper.signal_variance * self.hyper.correlation(x, self.training.state(i));
            for (o, w) in out.iter_mut().zip(&self.weights[i * m..(i + 1) * m]) {
                *o += k * w;
            }
        }
        out
    }

    /// `μ(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.training.state_dim();
        if x.len() != n {
            return Err(Error::Dimension { expected: n, got: x.len() });
        }
        let decay = self.hyper.correlation(x, &vec![0.0; n]);
        let mut u = self.posterior_mean(x);
        for (v, g0) in u.iter_mut().zip(&self.mean_at_origin) {
            *v -= g0 * decay;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("controller output is not finite".into()));
        }
        Ok(u)
    }
}

impl Policy for Controller {
    fn state_dim(&self) -> usize {
        self.training.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.training.input_dim()
    }

    fn input(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub state_cell: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Distance from `u` to the nearest kept control cell of the column, in
    /// input units; infinite for an empty column.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub probes: usize,
    pub exempt: usize,
    pub violations: usize,
    /// Violations over checked (non-exempt) probes.
    pub violation_fraction: f64,
    /// Largest distances first, at most [`MembershipReport::WORST_KEPT`].
    pub worst: Vec<Violation>,
}

impl MembershipReport {
    pub const WORST_KEPT: usize = 10;

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn box_distance(lower: &[f64], upper: &[f64], u: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((lo, hi), v) in lower.iter().zip(upper).zip(u) {
        let d = if v < lo {
            lo - v
        } else if v > hi {
            v - hi
        } else {
            0.0
        };
        s += d * d;
    }
    libm::sqrt(s)
}

/// Checks `(x, μ(x))` against the kept product cells at every set state
/// cell centre and at `probe_count` uniform probes over the set cells.
pub fn verify_membership<P: Policy + ?Sized>(
    policy: &P,
    ndd: &NddEstimate,
    probe_count: usize,
    seed: u64,
) -> Result<MembershipReport> {
    let state = ndd.state_grid();
    let control = control_grid(ndd)?;
    if policy.state_dim() != state.dim() || policy.input_dim() != control.dim() {
        return Err(Error::Dimension { expected: state.dim(), got: policy.state_dim() });
    }
    let exempt = exempt_cells(ndd)?;
    let cells: Vec<usize> = ndd.x_mask.ones().collect();
    let columns = control.len();
    let key = StreamKey::new(seed, Purpose::Probe, 0);
    let total = cells.len() + if cells.is_empty() { 0 } else { probe_count };

    let outcomes: Vec<Option<Option<Violation>>> = par::try_map_indexed(total, |i| {
        let (cell, x) = if i < cells.len() {
            (cells[i], state.cell_center(cells[i]))
        } else {
            let mut rng = CounterRng::at(key.with_stream(i as u64), 0);
            let cell = cells[rng.next_below(cells.len() as u64) as usize];
            let (lo, hi) = state.cell_bounds(cell);
            (cell, lo.iter().zip(&hi).map(|(a, b)| rng.next_in(*a, *b)).collect())
        };
        if exempt.get(cell) {
            return Ok(None);
        }
        let u = policy.input(&x)?;
        if let Some(c) = control.locate(&u) {
            if ndd.w_mask.get(cell * columns + c) {
                return Ok(Some(None));
            }
        }
        let mut distance = f64::INFINITY;
        for c in 0..columns {
            if ndd.w_mask.get(cell * columns + c) {
                let (lo, hi) = control.cell_bounds(c);
                distance = distance.min(box_distance(&lo, &hi, &u));
            }
        }
        Ok(Some(Some(Violation { state_cell: cell, x, u, distance })))
    })?;

    let exempt_count = outcomes.iter().filter(|o| o.is_none()).count();
    let mut worst: Vec<Violation> = outcomes.into_iter().flatten().flatten().collect();
    let violations = worst.len();
    let checked = total - exempt_count;
    worst.sort_by(|a, b| b.distance.total_cmp(&a.distance).then(a.state_cell.cmp(&b.state_cell)));
    worst.truncate(MembershipReport::WORST_KEPT);
    Ok(MembershipReport {
        probes: total,
        exempt: exempt_count,
        violations,
        violation_fraction: if checked == 0 { 0.0 } else { violations as f64 / checked as f64 },
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Region;

    fn line(cells: usize) -> UniformGrid {
        UniformGrid::new(Region::new(vec![-2.0], vec![2.0]).unwrap(), vec![cells]).unwrap()
    }

    /// Product mask where state cell `s` keeps control cells `runs(s)`.
    fn ndd_from(cells: usize, runs: impl Fn(usize) -> Vec<usize>) -> NddEstimate {
        let state = line(cells);
        let product = state.product(&line(cells));
        let mut w = CellMask::empty(&product);
        for s in 0..cells {
            for c in runs(s) {
                w.set(s * cells + c);
            }
        }
        NddEstimate::from_w_mask(w, &state, vec![1; cells * cells], vec![0.0; cells * cells], 0).unwrap()
    }

    #[test]
    fn midpoint_of_the_longest_run() {
        let ndd = ndd_from(100, |s| if s == 7 { (30..=70).collect() } else { vec![] });
        let ts = select_training(&ndd, 1).unwrap();
        let i = (0..ts.len()).find(|&i| ts.state(i)[0] != 0.0).unwrap();
        assert_eq!(ts.state(i), &line(100).cell_center(7)[..]);
        assert!((ts.input(i)[0] - line(100).cell_center(50)[0]).abs() < 1e-12);
        // centre, two outer faces, origin
        assert_eq!(ts.len(), 4);
        assert!(ts.warnings.is_empty());
    }

    #[test]
    fn ties_go_to_the_lower_run() {
        let ndd = ndd_from(20, |s| if s == 3 { vec![2, 3, 4, 10, 11, 12] } else { vec![] });
        let ts = select_training(&ndd, 1).unwrap();
        assert!((ts.input(0)[0] - line(20).cell_center(3)[0]).abs() < 1e-12);
    }

    /// `(x, u)` lies in the closed box of a kept product cell.
    fn in_closure(ndd: &NddEstimate, x: f64, u: f64) -> bool {
        let g = ndd.w_mask.grid();
        ndd.w_mask.ones().any(|t| {
            let (lo, hi) = g.cell_bounds(t);
            (lo[0]..=hi[0]).contains(&x) && (lo[1]..=hi[1]).contains(&u)
        })
    }

    #[test]
    fn origin_is_always_included() {
        let ndd = ndd_from(20, |s| if s % 2 == 0 { vec![s] } else { vec![] });
        let ts = select_training(&ndd, 2).unwrap();
        let last = ts.len() - 1;
        assert_eq!(ts.state(last), &[0.0]);
        assert_eq!(ts.input(last), &[0.0]);
        let exempt = exempt_cells(&ndd).unwrap();
        for i in 0..last {
            let (x, u) = (ts.state(i)[0], ts.input(i)[0]);
            let mut touching = [x - 1e-9, x + 1e-9].into_iter().filter_map(|v| line(20).locate(&[v]));
            assert!(in_closure(&ndd, x, u) || touching.any(|c| exempt.get(c)), "pair {i}: ({x}, {u})");
        }
    }

    fn pairs(ts: &TrainingSet) -> Vec<(f64, f64)> {
        (0..ts.len()).map(|i| (ts.state(i)[0], ts.input(i)[0])).collect()
    }

    #[test]
    fn touching_runs_get_a_face_pair() {
        let ndd = ndd_from(20, |s| match s {
            3 => vec![2, 3, 4],
            4 => vec![5, 6, 7],
            _ => vec![],
        });
        let ts = select_training(&ndd, 1).unwrap();
        let face = line(20).axis_cell_bounds(0, 3).1;
        let touch = line(20).axis_cell_bounds(0, 5).0;
        assert!(pairs(&ts).iter().any(|&(x, u)| x == face && u == touch), "{:?}", pairs(&ts));
        assert!(in_closure(&ndd, face, touch));
        assert!(ts.warnings.is_empty());
    }

    #[test]
    fn overlapping_runs_meet_at_the_middle_of_the_overlap() {
        let ndd = ndd_from(20, |s| match s {
            3 => vec![2, 3, 4, 5],
            4 => vec![4, 5, 6, 7, 8],
            _ => vec![],
        });
        let ts = select_training(&ndd, 1).unwrap();
        let g = line(20);
        let face = g.axis_cell_bounds(0, 3).1;
        let middle = 0.5 * (g.axis_cell_bounds(0, 4).0 + g.axis_cell_bounds(0, 5).1);
        assert!(pairs(&ts).contains(&(face, middle)), "{:?}", pairs(&ts));
    }

    #[test]
    fn outer_faces_hold_the_run_centre() {
        let ndd = ndd_from(20, |s| match s {
            0 => vec![1, 2, 3],
            5 => vec![4, 5, 6],
            _ => vec![],
        });
        let ts = select_training(&ndd, 1).unwrap();
        let p = pairs(&ts);
        let g = line(20);
        for (cell, run_centre) in [(0, 2), (5, 5)] {
            let (lo, hi) = g.axis_cell_bounds(0, cell);
            let u = g.cell_center(run_centre)[0];
            for face in [lo, hi] {
                assert!(p.contains(&(face, u)), "{cell}: {p:?}");
            }
        }
        assert!(ts.warnings.is_empty());
    }

    #[test]
    fn disjoint_runs_are_reported() {
        let ndd = ndd_from(20, |s| match s {
            3 => vec![2, 3],
            4 => vec![8, 9],
            _ => vec![],
        });
        let ts = select_training(&ndd, 1).unwrap();
        assert_eq!(ts.warnings.len(), 1);
        assert!(ts.warnings[0].contains("disjoint"));
        assert_eq!(ts.len(), 5);
    }

    #[test]
    fn origin_neighbourhood_continues_the_border_pairs() {
        // origin cells 9 and 10 span [-0.2, 0.2]
        let ndd = ndd_from(20, |s| match s {
            8 => vec![6],
            11 => vec![14],
            _ => vec![],
        });
        let ts = select_training(&ndd, 1).unwrap();
        let p = pairs(&ts);
        let near = |a: f64, b: f64| (a - b).abs() < 1e-12;
        let has = |x: f64, u: f64| p.iter().any(|&(px, pu)| near(px, x) && near(pu, u));
        assert!(has(-0.2, -0.7), "{p:?}");
        assert!(has(0.2, 0.9), "{p:?}");
        assert!(has(-0.1, -0.35), "{p:?}");
        assert!(has(0.1, 0.45), "{p:?}");
        assert!(has(0.0, 0.0));
        assert_eq!(p.len(), 2 + 2 + 2 + 2 + 1);
    }

    #[test]
    fn empty_columns_warn_except_at_the_origin() {
        let state = line(20);
        let product = state.product(&line(20));
        let mut w = CellMask::empty(&product);
        w.set(2 * 20 + 5);
        let mut ndd = NddEstimate::from_w_mask(w, &state, vec![1; 400], vec![0.0; 400], 0).unwrap();
        ndd.x_mask.set(15);
        let ts = select_training(&ndd, 1).unwrap();
        assert_eq!(ts.len(), 4);
        assert_eq!(ts.warnings.len(), 1);
        assert!(ts.warnings[0].contains("15"));
    }

    #[test]
    fn two_point_fit_matches_the_kernel_formula() {
        let ts = TrainingSet::new(1, 1, vec![1.0], vec![0.5]).unwrap();
        let hyper = KernelHyper { length_scales: vec![1.0], signal_variance: 1.0, jitter: 1e-8 };
        let c = Controller::fit(ts, hyper).unwrap();
        assert!((c.evaluate(&[1.0]).unwrap()[0] - 0.5).abs() < 1e-6);
        assert_eq!(c.evaluate(&[0.0]).unwrap()[0], 0.0);
        // direct two-point posterior mean: w = K⁻¹y with K = [[1, k],[k, 1]]
        let k = libm::exp(-0.5);
        let (w0, w1) = (-k * 0.5 / (1.0 - k * k), 0.5 / (1.0 - k * k));
        let mut prev = 0.0;
        for i in 1..=100 {
            let x = i as f64 / 100.0;
            let g = w0 * libm::exp(-0.5 * x * x) + w1 * libm::exp(-0.5 * (x - 1.0) * (x - 1.0));
            let mu = c.evaluate(&[x]).unwrap()[0];
            assert!((mu - g).abs() < 1e-6, "{x}: {mu} vs {g}");
            assert!(mu >= prev);
            prev = mu;
        }
    }

    #[test]
    fn targets_are_reproduced() {
        let xs: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).filter(|v| *v != 0.0).collect();
        let us: Vec<f64> = xs.iter().map(|x| libm::sin(*x)).collect();
        let ts = TrainingSet::new(1, 1, xs.clone(), us.clone()).unwrap();
        let hyper = KernelHyper { length_scales: vec![0.2], signal_variance: 1.0, jitter: 1e-8 };
        let c = Controller::fit(ts, hyper).unwrap();
        for (x, u) in xs.iter().zip(&us) {
            assert!((c.evaluate(&[*x]).unwrap()[0] - u).abs() < 10.0 * 1e-8 * 10.0);
        }
    }

    #[test]
    fn duplicates_escalate_jitter() {
        let ts = TrainingSet::new(1, 1, vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        let hyper = KernelHyper { length_scales: vec![1.0], signal_variance: 1.0, jitter: 0.0 };
        let c = Controller::fit(ts, hyper).unwrap();
        assert!(c.jitter_used() > 0.0);
        assert!(Controller::fit(
            TrainingSet::new(1, 1, vec![], vec![]).unwrap(),
            KernelHyper { length_scales: vec![1.0], signal_variance: 1.0, jitter: 1e-8 }
        )
        .is_err());
    }

    struct Shifted<'a>(&'a Controller, f64);

    impl Policy for Shifted<'_> {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn input(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(self.0.evaluate(x)?.into_iter().map(|u| u + self.1).collect())
        }
    }

    #[test]
    fn membership_of_a_diagonal_domain() {
        // every state cell keeps the control band around u = -x/2
        let cells = 40;
        let ndd = ndd_from(cells, |s| {
            let mid = (3 * cells / 2 - 1 - s) / 2;
            (mid.saturating_sub(3)..=(mid + 3).min(cells - 1)).collect()
        });
        let ts = select_training(&ndd, 1).unwrap();
        let c = Controller::fit(ts, KernelHyper::for_grid(&line(cells), 1.0)).unwrap();
        let report = verify_membership(&c, &ndd, 2000, 1).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.probes, cells + 2000);
        assert!(report.exempt > 0);
        let bad = verify_membership(&Shifted(&c, 10.0), &ndd, 2000, 1).unwrap();
        assert_eq!(bad.violation_fraction, 1.0);
        assert!(bad.worst.len() == MembershipReport::WORST_KEPT);
        assert!(bad.worst.windows(2).all(|w| w[0].distance >= w[1].distance));
    }
}
