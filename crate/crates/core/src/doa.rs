//! Level-set estimates and the search for the largest admissible level.
//!
//! The level-set estimate for `(L, α)` keeps every state cell whose samples
//! (at least one) all satisfy `L(x) ≤ α`. It is admissible when it is
//! contained in the state negative-definite estimate and the sublevel set
//! stays inside the interested region, i.e. `L > α` on every sampled point
//! of the region boundary. Without the boundary condition a candidate whose
//! negative-definite estimate covers the whole region would be admissible
//! for every `α`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{CellMask, Region, UniformGrid};
use crate::lyapunov::Lyapunov;
use crate::par;
use crate::sampler::{sample_box, Purpose, PointSet, StreamKey};

/// Safety net against predicates that never fail and carry no cap.
const MAX_CHECKS: usize = 50_000_000;

/// The state sample set `X^d` grouped by cell, plus boundary probes.
#[derive(Debug, Clone)]
pub struct StateSamples {
    grid: UniformGrid,
    points: Vec<f64>,
    cell_start: Vec<u32>,
    boundary: PointSet,
}

impl StateSamples {
    /// Draws `count` states; `per_face` extra points on every face of the
    /// region (ignored in one dimension, where the faces are the corners).
    pub fn draw(grid: &UniformGrid, count: usize, seed: u64, per_face: usize) -> Result<Self> {
        if count == 0 || count > u32::MAX as usize {
            return Err(Error::InvalidParameter(format!("state sample count {count} out of range")));
        }
        let n = grid.dim();
        let raw = sample_box(grid.region(), count, StreamKey::new(seed, Purpose::State, 0));
        let cells: Vec<usize> = par::map_indexed(raw.len(), |i| grid.locate(raw.get(i)).expect("inside region"));
        let mut cell_start = vec![0u32; grid.len() + 1];
        for &c in &cells {
            cell_start[c + 1] += 1;
        }
        for t in 0..grid.len() {
            cell_start[t + 1] += cell_start[t];
        }
        let mut cursor = cell_start[..grid.len()].to_vec();
        let mut order = vec![0u32; raw.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[cursor[c] as usize] = i as u32;
            cursor[c] += 1;
        }
        let mut points = Vec::with_capacity(raw.len() * n);
        for &i in &order {
            points.extend_from_slice(raw.get(i as usize));
        }
        Ok(Self { grid: grid.clone(), points, cell_start, boundary: boundary_points(grid.region(), per_face, seed) })
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.grid.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cell_count(&self, cell: usize) -> usize {
        (self.cell_start[cell + 1] - self.cell_start[cell]) as usize
    }

    pub fn boundary(&self) -> &PointSet {
        &self.boundary
    }

    /// Evaluates `L` on every sample once, so any number of `α` can be
    /// tested cheaply.
    pub fn table<L: Lyapunov + ?Sized>(&self, lyap: &L) -> Result<LevelSetTable> {
        let n = self.grid.dim();
        if lyap.state_dim() != n {
            return Err(Error::Dimension { expected: n, got: lyap.state_dim() });
        }
        let cell_max = par::try_map_indexed(self.grid.len(), |t| -> Result<f64> {
            let (a, b) = (self.cell_start[t] as usize, self.cell_start[t + 1] as usize);
            if a == b {
                return Ok(f64::NAN);
            }
            let mut max = f64::NEG_INFINITY;
            for p in self.points[a * n..b * n].chunks_exact(n) {
                max = max.max(lyap.value(p)?);
            }
            Ok(max)
        })?;
        let mut boundary_min = f64::INFINITY;
        for p in self.boundary.iter() {
            boundary_min = boundary_min.min(lyap.value(p)?);
        }
        let corner_max = self
            .grid
            .region()
            .corners()
            .iter()
            .map(|c| lyap.value(c))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(LevelSetTable { grid: self.grid.clone(), cell_max, boundary_min, corner_max })
    }
}

fn boundary_points(region: &Region, per_face: usize, seed: u64) -> PointSet {
    let n = region.dim();
    let mut coords: Vec<f64> = region.corners().into_iter().flatten().collect();
    if n > 1 {
        for axis in 0..n {
            for (side, fixed) in [region.lower()[axis], region.upper()[axis]].into_iter().enumerate() {
                let key = StreamKey::new(seed, Purpose::Boundary, (2 * axis + side) as u64);
                let face = sample_box(region, per_face, key);
                for p in face.iter() {
                    let mut q = p.to_vec();
                    q[axis] = fixed;
                    coords.extend_from_slice(&q);
                }
            }
        }
    }
    PointSet::new(n, coords).expect("whole points")
}

/// Per-cell maxima of `L` over the state samples.
#[derive(Debug, Clone)]
pub struct LevelSetTable {
    grid: UniformGrid,
    /// NaN for cells without samples.
    cell_max: Vec<f64>,
    boundary_min: f64,
    corner_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetEstimate {
    pub mask: CellMask,
    pub alpha: f64,
    /// `L > α` on every boundary probe.
    pub within_region: bool,
}

impl LevelSetTable {
    pub fn level_set(&self, alpha: f64) -> LevelSetEstimate {
        let mut mask = CellMask::empty(&self.grid);
        for (t, &max) in self.cell_max.iter().enumerate() {
            // NaN (no samples) never compares ≤
            if max <= alpha {
                mask.set(t);
            }
        }
        LevelSetEstimate { mask, alpha, within_region: alpha < self.boundary_min }
    }

    pub fn cell_max(&self) -> &[f64] {
        &self.cell_max
    }

    /// Smallest `L` over the boundary probes.
    pub fn boundary_min(&self) -> f64 {
        self.boundary_min
    }

    /// Largest `L` over the region corners.
    pub fn corner_max(&self) -> f64 {
        self.corner_max
    }

    /// `estimate ⊂ ndd_x` and the level set stays inside the region, without
    /// materialising the mask.
    pub fn admissible(&self, alpha: f64, ndd_x: &CellMask) -> Result<bool> {
        if ndd_x.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if !(alpha < self.boundary_min) {
            return Ok(false);
        }
        Ok(self.cell_max.iter().enumerate().all(|(t, &max)| !(max <= alpha) || ndd_x.get(t)))
    }
}

/// Builds the level-set estimate of `L` at `alpha` from a fixed sample set.
pub fn estimate_level_set<L: Lyapunov + ?Sized>(
    lyap: &L,
    alpha: f64,
    samples: &StateSamples,
) -> Result<LevelSetEstimate> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be non-negative, got {alpha}")));
    }
    Ok(samples.table(lyap)?.level_set(alpha))
}

/// Containment of the estimate in the state negative-definite estimate,
/// tested as `ls ∧ ndd_x = ls`.
pub fn contained(ls: &LevelSetEstimate, ndd_x: &CellMask) -> Result<bool> {
    ls.mask.is_subset_of(ndd_x)
}

fn power_of_ten_exponent(value: f64, what: &str) -> Result<i32> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::InvalidParameter(format!("{what} must be a positive power of ten, got {value}")));
    }
    let e = libm::round(libm::log10(value));
    if libm::fabs(value / libm::pow(10.0, e) - 1.0) > 1e-9 {
        return Err(Error::InvalidParameter(format!("{what} must be a power of ten, got {value}")));
    }
    Ok(e as i32)
}

/// The decimal lattice the level search walks on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    eps_init_exp: i32,
    accuracy_exp: i32,
    /// Multiplies every lattice value; 1 for the plain decimal lattice.
    pub scale: f64,
    pub alpha_max: Option<f64>,
}

impl AlphaSchedule {
    /// `eps_init` and `accuracy` must be powers of ten with
    /// `accuracy ≤ eps_init`.
    pub fn new(eps_init: f64, accuracy: f64) -> Result<Self> {
        let eps_init_exp = power_of_ten_exponent(eps_init, "eps_init")?;
        let accuracy_exp = power_of_ten_exponent(accuracy, "accuracy")?;
        if accuracy_exp > eps_init_exp {
            return Err(Error::InvalidParameter(format!("accuracy {accuracy} exceeds eps_init {eps_init}")));
        }
        if eps_init_exp - accuracy_exp > 18 {
            return Err(Error::InvalidParameter("eps_init / accuracy exceeds 1e18".into()));
        }
        Ok(Self { eps_init_exp, accuracy_exp, scale: 1.0, alpha_max: None })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_alpha_max(mut self, alpha_max: f64) -> Self {
        self.alpha_max = Some(alpha_max);
        self
    }

    pub fn eps_init(&self) -> f64 {
        libm::pow(10.0, f64::from(self.eps_init_exp)) * self.scale
    }

    pub fn accuracy(&self) -> f64 {
        libm::pow(10.0, f64::from(self.accuracy_exp)) * self.scale
    }

    /// `k` accuracy steps, computed without accumulating rounding error.
    fn value(&self, k: u64) -> f64 {
        let base = if self.accuracy_exp < 0 {
            k as f64 / libm::pow(10.0, f64::from(-self.accuracy_exp))
        } else {
            k as f64 * libm::pow(10.0, f64::from(self.accuracy_exp))
        };
        if self.scale == 1.0 {
            base
        } else {
            base * self.scale
        }
    }

    fn units(&self, exp: i32) -> u64 {
        10u64.pow((exp - self.accuracy_exp) as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSearchTrace {
    pub alpha_star: f64,
    /// Every evaluated `(α, admissible)` pair in order.
    pub checks: Vec<(f64, bool)>,
    /// Step size in force for each check.
    pub epsilons: Vec<f64>,
    /// The search touched `alpha_max`.
    pub cap_hit: bool,
    pub warnings: Vec<String>,
}

impl AlphaSearchTrace {
    pub fn check_count(&self) -> usize {
        self.checks.len()
    }
}

/// Decimal-refinement search: walk up by `ε` while the predicate holds,
/// step back, divide `ε` by ten and continue until `ε` drops below the
/// accuracy. Values above `alpha_max` count as failures without invoking
/// the predicate.
pub fn search_alpha_with<F>(schedule: &AlphaSchedule, mut admissible: F) -> Result<AlphaSearchTrace>
where
    F: FnMut(f64) -> Result<bool>,
{
    let mut eps = schedule.units(schedule.eps_init_exp);
    let mut alpha = eps;
    let mut trace =
        AlphaSearchTrace { alpha_star: 0.0, checks: Vec::new(), epsilons: Vec::new(), cap_hit: false, warnings: Vec::new() };
    loop {
        let value = schedule.value(alpha);
        let ok = if schedule.alpha_max.is_some_and(|cap| value > cap) {
            trace.cap_hit = true;
            false
        } else {
            if trace.checks.len() >= MAX_CHECKS {
                return Err(Error::InvalidParameter("level search did not terminate; set alpha_max".into()));
            }
            let ok = admissible(value)?;
            trace.checks.push((value, ok));
            trace.epsilons.push(schedule.value(eps));
            ok
        };
        if ok {
            alpha += eps;
            continue;
        }
        alpha -= eps;
        if eps == 1 {
            break;
        }
        eps /= 10;
        alpha += eps;
    }
    trace.alpha_star = schedule.value(alpha);
    if alpha == 0 {
        trace.warnings.push("containment never holds on the search lattice; alpha* = 0".into());
    }
    if trace.cap_hit {
        trace.warnings.push(format!("search capped at alpha_max = {:?}", schedule.alpha_max));
    }
    Ok(trace)
}

/// Reference walk with a constant step equal to the accuracy.
pub fn search_alpha_constant<F>(schedule: &AlphaSchedule, mut admissible: F) -> Result<AlphaSearchTrace>
where
    F: FnMut(f64) -> Result<bool>,
{
    let mut trace =
        AlphaSearchTrace { alpha_star: 0.0, checks: Vec::new(), epsilons: Vec::new(), cap_hit: false, warnings: Vec::new() };
    let step = schedule.value(1);
    let mut k = 1u64;
    loop {
        let value = schedule.value(k);
        if schedule.alpha_max.is_some_and(|cap| value > cap) {
            trace.cap_hit = true;
            break;
        }
        if trace.checks.len() >= MAX_CHECKS {
            return Err(Error::InvalidParameter("level search did not terminate; set alpha_max".into()));
        }
        let ok = admissible(value)?;
        trace.checks.push((value, ok));
        trace.epsilons.push(step);
        if !ok {
            break;
        }
        k += 1;
    }
    trace.alpha_star = schedule.value(k - 1);
    Ok(trace)
}

/// The largest admissible level set for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    pub trace: AlphaSearchTrace,
    pub level_set: LevelSetEstimate,
}

impl DoaEstimate {
    pub fn alpha_star(&self) -> f64 {
        self.trace.alpha_star
    }

    pub fn volume(&self) -> f64 {
        self.level_set.mask.volume()
    }
}

/// Searches `α*` for a precomputed table. Without an explicit cap, the
/// search stops at ten times the largest corner value of `L`.
pub fn search_alpha(table: &LevelSetTable, ndd_x: &CellMask, schedule: &AlphaSchedule) -> Result<DoaEstimate> {
    let mut schedule = *schedule;
    if schedule.alpha_max.is_none() {
        schedule.alpha_max = Some(table.corner_max() * 10.0);
    }
    let trace = search_alpha_with(&schedule, |alpha| table.admissible(alpha, ndd_x))?;
    let level_set = table.level_set(trace.alpha_star);
    Ok(DoaEstimate { trace, level_set })
}
