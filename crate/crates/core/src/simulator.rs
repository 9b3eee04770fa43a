//! Closed-loop Monte Carlo with bounded uniform disturbances.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::controller::Policy;
use crate::error::{Error, Result};
use crate::grid::CellMask;
use crate::par;
use crate::plant::PlantSet;
use crate::sampler::{CounterRng, Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub trajectories: usize,
    pub max_steps: usize,
    /// Euclidean distance to the origin that counts as converged.
    pub radius: f64,
    pub seed: u64,
    /// Disturbance forced to zero.
    pub zero_noise: bool,
    /// Keep stepping after convergence up to `max_steps`.
    pub full_horizon: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { trajectories: 1000, max_steps: 200, radius: 1e-3, seed: 0, zero_noise: false, full_horizon: false }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.max_steps == 0 {
            return Err(Error::InvalidParameter("trajectories and max_steps must be at least 1".into()));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidParameter("convergence radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x(0), x(1), ...` flattened.
    pub states: Vec<f64>,
    /// `u(k)` for every step taken.
    pub inputs: Vec<f64>,
    /// `e(k)` for every step taken.
    pub noises: Vec<f64>,
    /// First `k` with `|x(k)| ≤ radius`.
    pub converged_at: Option<usize>,
    /// Set when the controller or plant failed and the run stopped early.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn steps(&self, state_dim: usize) -> usize {
        self.states.len() / state_dim - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub state_dim: usize,
    pub input_dim: usize,
    pub config: SimConfig,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub trajectories: usize,
    pub converged: usize,
    pub aborted: usize,
    pub fraction: f64,
    /// Over converged trajectories; `None` when none converged.
    pub median_step: Option<f64>,
    pub p95_step: Option<usize>,
    /// Largest `|x_i(k)|` seen.
    pub max_excursion: f64,
}

fn norm(x: &[f64]) -> f64 {
    libm::sqrt(x.iter().map(|v| v * v).sum::<f64>())
}

fn run_one<P: Policy + ?Sized>(
    plant: &PlantSet,
    policy: &P,
    x0: Vec<f64>,
    cfg: &SimConfig,
    noise: &mut CounterRng,
) -> Trajectory {
    let n = x0.len();
    let mut t = Trajectory {
        states: x0,
        inputs: Vec::new(),
        noises: Vec::new(),
        converged_at: None,
        aborted: None,
    };
    for k in 0..=cfg.max_steps {
        let x = t.states[k * n..(k + 1) * n].to_vec();
        if t.converged_at.is_none() && norm(&x) <= cfg.radius {
            t.converged_at = Some(k);
            if !cfg.full_horizon {
                break;
            }
        }
        if k == cfg.max_steps {
            break;
        }
        let step = policy.input(&x).and_then(|u| {
            let next = plant.nominal_at(&x, &u)?;
            let bound = plant.bound_at(&x, &u)?;
            Ok((u, next, bound))
        });
        let (u, mut next, bound) = match step {
            Ok(v) => v,
            Err(e) => {
                t.aborted = Some(format!("step {k}: {e}"));
                break;
            }
        };
        for (xi, b) in next.iter_mut().zip(&bound) {
            let e = if cfg.zero_noise { 0.0 } else { noise.next_in(-b, *b) };
            assert!(libm::fabs(e) <= *b, "disturbance {e} exceeds bound {b}");
            t.noises.push(e);
            *xi += e;
        }
        if next.iter().any(|v| !v.is_finite()) {
            t.aborted = Some(format!("step {k}: state is not finite"));
            break;
        }
        t.inputs.extend_from_slice(&u);
        t.states.extend_from_slice(&next);
    }
    t
}

/// Runs `cfg.trajectories` closed loops from states drawn uniformly over
/// the set cells of `doa_mask` (a cell first, then a point in it).
pub fn simulate<P: Policy + ?Sized>(
    plant: &PlantSet,
    policy: &P,
    doa_mask: &CellMask,
    cfg: &SimConfig,
) -> Result<TrajectoryBatch> {
    cfg.validate()?;
    let grid = doa_mask.grid();
    let n = plant.state_dim();
    if grid.dim() != n || policy.state_dim() != n || policy.input_dim() != plant.input_dim() {
        return Err(Error::Dimension { expected: n, got: grid.dim() });
    }
    let cells: Vec<usize> = doa_mask.ones().collect();
    if cells.is_empty() {
        return Err(Error::InvalidParameter("initial-state mask is empty".into()));
    }
    let start_key = StreamKey::new(cfg.seed, Purpose::Simulation, 0);
    let noise_key = StreamKey::new(cfg.seed, Purpose::Noise, 0);
    let trajectories = par::map_indexed(cfg.trajectories, |i| {
        let mut rng = CounterRng::at(start_key.with_stream(i as u64), 0);
        let cell = cells[rng.next_below(cells.len() as u64) as usize];
        let (lo, hi) = grid.cell_bounds(cell);
        let x0 = lo.iter().zip(&hi).map(|(a, b)| rng.next_in(*a, *b)).collect();
        let mut noise = CounterRng::at(noise_key.with_stream(i as u64), 0);
        run_one(plant, policy, x0, cfg, &mut noise)
    });
    Ok(TrajectoryBatch { state_dim: n, input_dim: plant.input_dim(), config: *cfg, trajectories })
}

/// Simulates from one given initial state.
pub fn simulate_from<P: Policy + ?Sized>(
    plant: &PlantSet,
    policy: &P,
    x0: &[f64],
    cfg: &SimConfig,
    stream: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if x0.len() != plant.state_dim() {
        return Err(Error::Dimension { expected: plant.state_dim(), got: x0.len() });
    }
    let mut noise = CounterRng::at(StreamKey::new(cfg.seed, Purpose::Noise, stream), 0);
    Ok(run_one(plant, policy, x0.to_vec(), cfg, &mut noise))
}

pub fn summarize(batch: &TrajectoryBatch) -> Result<Summary> {
    if batch.trajectories.is_empty() {
        return Err(Error::NoTrajectories);
    }
    let mut steps: Vec<usize> = batch.trajectories.iter().filter_map(|t| t.converged_at).collect();
    steps.sort_unstable();
    let converged = steps.len();
    let median_step = match converged {
        0 => None,
        c if c % 2 == 1 => Some(steps[c / 2] as f64),
        c => Some(0.5 * (steps[c / 2 - 1] + steps[c / 2]) as f64),
    };
    // nearest-rank percentile
    let p95_step = (converged > 0).then(|| steps[(libm::ceil(0.95 * converged as f64) as usize).max(1) - 1]);
    let max_excursion = batch
        .trajectories
        .iter()
        .flat_map(|t| t.states.iter())
        .fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
    let total = batch.trajectories.len();
    Ok(Summary {
        trajectories: total,
        converged,
        aborted: batch.trajectories.iter().filter(|t| t.aborted.is_some()).count(),
        fraction: converged as f64 / total as f64,
        median_step,
        p95_step,
        max_excursion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Region, UniformGrid};
    use alloc::vec;

    struct Linear(f64);

    impl Policy for Linear {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn input(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![self.0 * x[0]])
        }
    }

    fn plant() -> PlantSet {
        PlantSet::builtin("benchmark-1d").unwrap()
    }

    fn mask(lo: f64, hi: f64) -> CellMask {
        let grid = UniformGrid::new(Region::new(vec![-2.0], vec![2.0]).unwrap(), vec![200]).unwrap();
        let cells: Vec<usize> = (0..200)
            .filter(|&c| {
                let (a, b) = grid.cell_bounds(c);
                a[0] >= lo - 1e-12 && b[0] <= hi + 1e-12
            })
            .collect();
        CellMask::from_indices(&grid, cells)
    }

    #[test]
    fn origin_is_an_equilibrium() {
        let cfg = SimConfig { full_horizon: true, max_steps: 50, ..SimConfig::default() };
        let t = simulate_from(&plant(), &Linear(0.0), &[0.0], &cfg, 0).unwrap();
        assert_eq!(t.converged_at, Some(0));
        assert_eq!(t.steps(1), 50);
        assert!(t.states.iter().all(|&v| v == 0.0));
        assert!(t.noises.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_cancellation_converges_near_the_origin() {
        // u = 2.2x cancels the linear part: |x(k+1)| ≤ 10 x(k)² with noise
        let m = mask(-0.08, 0.08);
        let batch = simulate(&plant(), &Linear(2.2), &m, &SimConfig::default()).unwrap();
        let s = summarize(&batch).unwrap();
        assert_eq!(s.trajectories, 1000);
        assert_eq!(s.fraction, 1.0);
        assert!(s.max_excursion <= 0.08);
        let noiseless = SimConfig { zero_noise: true, ..SimConfig::default() };
        let z = summarize(&simulate(&plant(), &Linear(2.2), &m, &noiseless).unwrap()).unwrap();
        assert_eq!(z.fraction, 1.0);
    }

    #[test]
    fn noise_respects_the_bound_and_is_reproducible() {
        let p = plant();
        let cfg = SimConfig { trajectories: 50, seed: 8, ..SimConfig::default() };
        let a = simulate(&p, &Linear(0.3), &mask(-1.0, 1.0), &cfg).unwrap();
        assert_eq!(a, simulate(&p, &Linear(0.3), &mask(-1.0, 1.0), &cfg).unwrap());
        for t in &a.trajectories {
            for k in 0..t.noises.len() {
                let bound = p.bound_at(&t.states[k..k + 1], &t.inputs[k..k + 1]).unwrap()[0];
                assert!(t.noises[k].abs() <= bound);
            }
            assert!((-1.0..1.0).contains(&t.states[0]));
        }
    }

    #[test]
    fn summary_statistics() {
        let traj = |k: Option<usize>| Trajectory {
            states: vec![1.5, -0.5],
            inputs: vec![0.0],
            noises: vec![0.0],
            converged_at: k,
            aborted: None,
        };
        let cfg = SimConfig::default();
        let batch = TrajectoryBatch {
            state_dim: 1,
            input_dim: 1,
            config: cfg,
            trajectories: vec![traj(Some(4)), traj(Some(2)), traj(Some(10)), traj(None)],
        };
        let s = summarize(&batch).unwrap();
        assert_eq!(s.converged, 3);
        assert_eq!(s.fraction, 0.75);
        assert_eq!(s.median_step, Some(4.0));
        assert_eq!(s.p95_step, Some(10));
        assert_eq!(s.max_excursion, 1.5);
        let empty = TrajectoryBatch { trajectories: vec![], ..batch };
        assert!(matches!(summarize(&empty), Err(Error::NoTrajectories)));
    }

    #[test]
    fn failures_are_flagged_not_fatal() {
        struct Broken;
        impl Policy for Broken {
            fn state_dim(&self) -> usize {
                1
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn input(&self, _: &[f64]) -> Result<Vec<f64>> {
                Err(Error::InvalidParameter("broken".into()))
            }
        }
        let cfg = SimConfig { trajectories: 5, ..SimConfig::default() };
        let b = simulate(&plant(), &Broken, &mask(0.5, 1.0), &cfg).unwrap();
        assert!(b.trajectories.iter().all(|t| t.aborted.is_some()));
        assert_eq!(summarize(&b).unwrap().aborted, 5);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let grid = UniformGrid::new(Region::new(vec![-2.0], vec![2.0]).unwrap(), vec![10]).unwrap();
        let r = simulate(&plant(), &Linear(0.0), &CellMask::empty(&grid), &SimConfig::default());
        assert!(r.is_err());
    }
}
