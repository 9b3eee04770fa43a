//! Volume of the largest admissible level set as a function of `Q`, and a
//! global-best particle swarm that maximizes it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::doa::{search_alpha, AlphaSchedule, AlphaSearchTrace, StateSamples};
use crate::error::{Error, Result};
use crate::grid::CellMask;
use crate::lyapunov::{check_full_rank, LyapunovSos, MonomialBasis, DEFAULT_RANK_TOLERANCE};
use crate::ndd::{NddEstimate, NddOptions, StateControlSamples};
use crate::par;
use crate::sampler::{CounterRng, Purpose, StreamKey};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Every coordinate stays in `[lower, upper]`.
    pub lower: f64,
    pub upper: f64,
    /// Largest velocity component; `None` uses half the width of the bounds.
    pub velocity_clamp: Option<f64>,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 20,
            iterations: 50,
            inertia: 0.729,
            cognitive: 1.49445,
            social: 1.49445,
            lower: -3.0,
            upper: 3.0,
            velocity_clamp: None,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::InvalidParameter("swarm_size must be at least 2".into()));
        }
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::InvalidParameter(format!(
                "PSO bounds [{}, {}] must be finite and ordered",
                self.lower, self.upper
            )));
        }
        for (name, v) in [("inertia", self.inertia), ("cognitive", self.cognitive), ("social", self.social)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be finite and non-negative")));
            }
        }
        if let Some(c) = self.velocity_clamp {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidParameter("velocity_clamp must be positive".into()));
            }
        }
        Ok(())
    }

    fn vmax(&self) -> f64 {
        self.velocity_clamp.unwrap_or(0.5 * (self.upper - self.lower))
    }
}

/// Result of a generic swarm run.
#[derive(Debug, Clone, PartialEq)]
pub struct PsoOutcome {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Global best after initialization and after every iteration.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

fn score(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximizes `objective` over `[lower, upper]^dim`.
///
/// Fitness values of one iteration are computed concurrently; the personal
/// and global bests are then updated in particle order, so the run depends
/// only on the seed.
pub fn pso_maximize<F>(dim: usize, cfg: &PsoConfig, objective: F) -> Result<PsoOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    cfg.validate()?;
    if dim == 0 {
        return Err(Error::InvalidParameter("PSO dimension must be positive".into()));
    }
    let swarm = cfg.swarm_size;
    let vmax = cfg.vmax();
    let key = StreamKey::new(cfg.seed, Purpose::Swarm, 0);
    let step_draws = 2 * dim as u64;

    let mut positions = vec![0.0; swarm * dim];
    let mut velocities = vec![0.0; swarm * dim];
    for p in 0..swarm {
        let mut rng = CounterRng::at(key.with_stream(p as u64), 0);
        for d in 0..dim {
            positions[p * dim + d] = rng.next_in(cfg.lower, cfg.upper);
            velocities[p * dim + d] = rng.next_in(-vmax, vmax);
        }
    }

    let evaluate = |positions: &[f64]| -> Result<Vec<f64>> {
        par::try_map_indexed(swarm, |p| objective(&positions[p * dim..(p + 1) * dim]).map(score))
    };

    let fitness = evaluate(&positions)?;
    let mut evaluations = swarm;
    let mut personal = positions.clone();
    let mut personal_value = fitness.clone();
    let mut best = 0;
    for p in 1..swarm {
        if personal_value[p] > personal_value[best] {
            best = p;
        }
    }
    let mut best_position = personal[best * dim..(best + 1) * dim].to_vec();
    let mut best_value = personal_value[best];
    let mut history = vec![best_value];

    for iteration in 1..=cfg.iterations {
        for p in 0..swarm {
            let mut rng = CounterRng::at(key.with_stream(p as u64), iteration as u64 * step_draws);
            for d in 0..dim {
                let i = p * dim + d;
                let r1 = rng.next_unit();
                let r2 = rng.next_unit();
                let v = cfg.inertia * velocities[i]
                    + cfg.cognitive * r1 * (personal[i] - positions[i])
                    + cfg.social * r2 * (best_position[d] - positions[i]);
                velocities[i] = v.clamp(-vmax, vmax);
                let next = positions[i] + velocities[i];
                if next < cfg.lower || next > cfg.upper {
                    velocities[i] = 0.0;
                }
                positions[i] = next.clamp(cfg.lower, cfg.upper);
            }
        }
        let fitness = evaluate(&positions)?;
        evaluations += swarm;
        for p in 0..swarm {
            if fitness[p] > personal_value[p] {
                personal_value[p] = fitness[p];
                personal[p * dim..(p + 1) * dim].copy_from_slice(&positions[p * dim..(p + 1) * dim]);
            }
            if fitness[p] > best_value {
                best_value = fitness[p];
                best_position.copy_from_slice(&positions[p * dim..(p + 1) * dim]);
            }
        }
        history.push(best_value);
    }
    Ok(PsoOutcome { best_position, best_value, history, evaluations })
}

/// Everything `m(Q)` depends on, drawn once per run.
pub struct DoaProblem<'a> {
    pub bank: &'a StateControlSamples,
    pub states: &'a StateSamples,
    pub basis: MonomialBasis,
    pub schedule: AlphaSchedule,
    pub options: NddOptions,
    pub rank_tolerance: f64,
}

/// One evaluation of `m(Q)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub m: f64,
    pub alpha_star: f64,
    pub level_set: CellMask,
    /// `false` when `Q` failed the rank check; `m` is then 0.
    pub full_rank: bool,
    pub ndd: Option<NddEstimate>,
    pub trace: Option<AlphaSearchTrace>,
}

impl<'a> DoaProblem<'a> {
    pub fn new(
        bank: &'a StateControlSamples,
        states: &'a StateSamples,
        basis: MonomialBasis,
        schedule: AlphaSchedule,
        options: NddOptions,
    ) -> Result<Self> {
        if basis.state_dim() != bank.grids().state_dim() {
            return Err(Error::Dimension { expected: bank.grids().state_dim(), got: basis.state_dim() });
        }
        if states.grid() != &bank.grids().state {
            return Err(Error::GridMismatch);
        }
        Ok(Self { bank, states, basis, schedule, options, rank_tolerance: DEFAULT_RANK_TOLERANCE })
    }

    /// Side length `r` of `Q`.
    pub fn q_side(&self) -> usize {
        self.basis.len()
    }

    /// Runs the negative-definite estimate, the level search and the volume
    /// for the candidate `‖Q S_d(x)‖²`.
    pub fn evaluate(&self, q: &[f64]) -> Result<Evaluation> {
        let r = self.q_side();
        if q.len() != r * r {
            return Err(Error::Dimension { expected: r * r, got: q.len() });
        }
        if q.iter().any(|v| !v.is_finite()) || !check_full_rank(q, r, self.rank_tolerance) {
            return Ok(Evaluation {
                m: 0.0,
                alpha_star: 0.0,
                level_set: CellMask::empty(&self.bank.grids().state),
                full_rank: false,
                ndd: None,
                trace: None,
            });
        }
        let lyap = LyapunovSos::new(self.basis.clone(), q.to_vec(), self.rank_tolerance)?;
        let ndd = self.bank.estimate(&lyap, &self.options)?;
        let table = self.states.table(&lyap)?;
        let doa = search_alpha(&table, &ndd.x_mask, &self.schedule)?;
        Ok(Evaluation {
            m: doa.volume(),
            alpha_star: doa.alpha_star(),
            level_set: doa.level_set.mask,
            full_rank: true,
            ndd: Some(ndd),
            trace: Some(doa.trace),
        })
    }

    /// `m(Q)` alone.
    pub fn volume(&self, q: &[f64]) -> Result<f64> {
        Ok(self.evaluate(q)?.m)
    }
}

/// Scales `q` to unit Frobenius norm; the zero matrix is returned as is.
pub fn normalize(q: &[f64]) -> Vec<f64> {
    let norm = libm::sqrt(q.iter().map(|v| v * v).sum::<f64>());
    if norm > 0.0 && norm.is_finite() {
        q.iter().map(|v| v / norm).collect()
    } else {
        q.to_vec()
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    /// Row-major, unit Frobenius norm.
    pub q_best: Vec<f64>,
    pub m_best: f64,
    pub alpha_best: f64,
    pub level_set: CellMask,
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// Maximizes `m(Q)` with the swarm. Particles are normalized before every
/// evaluation, and the winner is re-evaluated at the end.
pub fn optimize(problem: &DoaProblem<'_>, cfg: &PsoConfig) -> Result<OptimizationResult> {
    let r = problem.q_side();
    let outcome = pso_maximize(r * r, cfg, |q| problem.volume(&normalize(q)))?;
    let q_best = normalize(&outcome.best_position);
    let best = problem.evaluate(&q_best)?;
    if best.m != outcome.best_value {
        return Err(Error::InvalidParameter(format!(
            "m(Q_best) is not reproducible: {} vs {}",
            best.m, outcome.best_value
        )));
    }
    Ok(OptimizationResult {
        q_best,
        m_best: best.m,
        alpha_best: best.alpha_star,
        level_set: best.level_set,
        history: outcome.history,
        evaluations: outcome.evaluations + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Region, UniformGrid};
    use crate::ndd::NddGrids;
    use crate::plant::PlantSet;
    use crate::sampler::SampleConfig;

    #[test]
    fn stub_objective_converges() {
        let target = [0.7, -1.2, 2.1, 0.4];
        let cfg = PsoConfig { iterations: 200, seed: 3, ..PsoConfig::default() };
        let out = pso_maximize(4, &cfg, |q| {
            Ok(-q.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        })
        .unwrap();
        for (a, b) in out.best_position.iter().zip(&target) {
            assert!((a - b).abs() < 1e-2, "{:?}", out.best_position);
        }
        assert_eq!(out.history.len(), 201);
        assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(out.evaluations, 20 * 201);
    }

    #[test]
    fn swarm_is_deterministic_and_bounded() {
        let cfg = PsoConfig { iterations: 10, seed: 9, lower: -1.0, upper: 0.5, ..PsoConfig::default() };
        let f = |q: &[f64]| Ok(q.iter().sum::<f64>());
        let a = pso_maximize(3, &cfg, f).unwrap();
        assert_eq!(a, pso_maximize(3, &cfg, f).unwrap());
        assert!(a.best_position.iter().all(|v| (-1.0..=0.5).contains(v)));
    }

    #[test]
    fn nan_fitness_never_wins() {
        let cfg = PsoConfig { iterations: 5, ..PsoConfig::default() };
        let out = pso_maximize(2, &cfg, |q| Ok(if q[0] > 0.0 { f64::NAN } else { q[0] })).unwrap();
        assert!(out.best_value <= 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let f = |_: &[f64]| Ok(0.0);
        assert!(pso_maximize(2, &PsoConfig { swarm_size: 1, ..PsoConfig::default() }, f).is_err());
        assert!(pso_maximize(2, &PsoConfig { upper: f64::INFINITY, ..PsoConfig::default() }, f).is_err());
        assert!(pso_maximize(0, &PsoConfig::default(), f).is_err());
    }

    #[test]
    fn normalize_gives_unit_norm() {
        let q = normalize(&[3.0, 0.0, 0.0, 4.0]);
        assert_eq!(q, vec![0.6, 0.0, 0.0, 0.8]);
        assert_eq!(normalize(&[0.0; 4]), vec![0.0; 4]);
    }

    struct Fixture {
        bank: StateControlSamples,
        states: StateSamples,
    }

    fn fixture() -> Fixture {
        let plant = PlantSet::builtin("benchmark-1d").unwrap();
        let line = || UniformGrid::new(Region::new(vec![-2.0], vec![2.0]).unwrap(), vec![40]).unwrap();
        let grids = NddGrids::new(line(), line()).unwrap();
        let cfg = SampleConfig { seed: 4, n_xu: 20_000, n_succ: 20, n_x: 20_000 };
        let bank = StateControlSamples::draw(&plant, &grids, &cfg).unwrap();
        let states = StateSamples::draw(&grids.state, cfg.n_x, cfg.seed, 0).unwrap();
        Fixture { bank, states }
    }

    fn problem(f: &Fixture, scale: f64) -> DoaProblem<'_> {
        let schedule = AlphaSchedule::new(10.0, 0.001).unwrap().with_scale(scale);
        DoaProblem::new(&f.bank, &f.states, MonomialBasis::new(1, 2).unwrap(), schedule, NddOptions::default())
            .unwrap()
    }

    #[test]
    fn zero_matrix_scores_zero() {
        let f = fixture();
        let e = problem(&f, 1.0).evaluate(&[0.0; 4]).unwrap();
        assert!(!e.full_rank);
        assert_eq!(e.m, 0.0);
        assert_eq!(e.level_set.count(), 0);
        let e = problem(&f, 1.0).evaluate(&[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(!e.full_rank);
    }

    #[test]
    fn evaluation_is_pure() {
        let f = fixture();
        let p = problem(&f, 1.0);
        let q = [0.3587, 0.9232, 1.0, 0.8249];
        let a = p.evaluate(&q).unwrap();
        let b = p.evaluate(&q).unwrap();
        assert_eq!(a.m, b.m);
        assert_eq!(a.alpha_star, b.alpha_star);
        assert_eq!(a.level_set, b.level_set);
        assert!(a.m > 0.0);
    }

    #[test]
    fn scaled_q_gives_the_same_mask() {
        let f = fixture();
        let q = [0.3587, 0.9232, 1.0, 0.8249];
        let base = problem(&f, 1.0).evaluate(&q).unwrap();
        for c in [2.0, 10.0] {
            let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
            let e = problem(&f, c * c).evaluate(&scaled).unwrap();
            assert_eq!(e.level_set, base.level_set, "c = {c}");
            assert_eq!(e.ndd.unwrap().x_mask, base.ndd.as_ref().unwrap().x_mask);
        }
    }

    #[test]
    fn short_optimization_improves_on_nothing() {
        let f = fixture();
        let p = problem(&f, 1.0);
        let cfg = PsoConfig { swarm_size: 6, iterations: 3, seed: 1, ..PsoConfig::default() };
        let res = optimize(&p, &cfg).unwrap();
        assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(res.m_best, *res.history.last().unwrap());
        let norm: f64 = res.q_best.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(res.evaluations, 6 * 4 + 1);
    }
}
