//! Run configuration read from TOML.

use std::path::PathBuf;

use robust_doa_core::controller::default_length_cells;
use robust_doa_core::doa::AlphaSchedule;
use robust_doa_core::grid::{Region, UniformGrid};
use robust_doa_core::lyapunov::MonomialBasis;
use robust_doa_core::ndd::{NddGrids, NddOptions};
use robust_doa_core::optimizer::PsoConfig;
use robust_doa_core::plant::PlantSet;
use robust_doa_core::sampler::SampleConfig;
use robust_doa_core::simulator::SimConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_PLANT: &str = "benchmark-1d";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub plant: PlantSpec,
    pub region: RegionSpec,
    pub grid: GridSpec,
    pub sampling: SamplingSpec,
    pub ndd: NddSpec,
    pub lyapunov: LyapunovSpec,
    pub alpha: AlphaSpec,
    /// Optional reference candidate for the enlargement factor.
    pub baseline: Option<BaselineSpec>,
    pub controller: ControllerSpec,
    pub simulation: SimulationSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            plant: PlantSpec::default(),
            region: RegionSpec::default(),
            grid: GridSpec::default(),
            sampling: SamplingSpec::default(),
            ndd: NddSpec::default(),
            lyapunov: LyapunovSpec::default(),
            alpha: AlphaSpec::default(),
            baseline: None,
            controller: ControllerSpec::default(),
            simulation: SimulationSpec::default(),
        }
    }
}

/// A builtin plant by name, or expressions in `x1..xn`, `u1..um`. With
/// neither, the one-dimensional benchmark plant is used.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSpec {
    pub builtin: Option<String>,
    pub state_dim: Option<usize>,
    pub input_dim: Option<usize>,
    pub nominal: Vec<String>,
    pub delta: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSpec {
    pub state_lower: Vec<f64>,
    pub state_upper: Vec<f64>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self { state_lower: vec![-2.0], state_upper: vec![2.0], input_lower: vec![-2.0], input_upper: vec![2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub state_cells: Vec<usize>,
    pub input_cells: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { state_cells: vec![400], input_cells: vec![400] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSpec {
    pub seed: u64,
    pub n_xu: usize,
    pub n_succ: usize,
    pub n_x: usize,
    /// Extra boundary probes per region face (two or more state dimensions).
    pub boundary_per_face: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        let s = SampleConfig::default();
        Self { seed: s.seed, n_xu: s.n_xu, n_succ: s.n_succ, n_x: s.n_x, boundary_per_face: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NddSpec {
    pub margin: f64,
    pub min_samples_per_cell: usize,
    pub origin_fill_layers: usize,
}

impl Default for NddSpec {
    fn default() -> Self {
        let o = NddOptions::default();
        Self { margin: o.margin, min_samples_per_cell: o.min_samples_per_cell, origin_fill_layers: o.origin_fill_layers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LyapunovSpec {
    /// An expression in `x1..xn`.
    Fixed { expression: String },
    /// `‖Q S_d(x)‖²` with an explicit `Q`.
    Matrix { half_degree: usize, q: Vec<Vec<f64>> },
    /// `Q` found by the particle swarm.
    Optimize {
        half_degree: usize,
        #[serde(default)]
        pso: PsoSpec,
    },
}

impl Default for LyapunovSpec {
    fn default() -> Self {
        LyapunovSpec::Fixed { expression: "x1^2".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoSpec {
    pub swarm_size: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub lower: f64,
    pub upper: f64,
    pub velocity_clamp: Option<f64>,
    pub seed: u64,
}

impl Default for PsoSpec {
    fn default() -> Self {
        let p = PsoConfig::default();
        Self {
            swarm_size: p.swarm_size,
            iterations: p.iterations,
            inertia: p.inertia,
            cognitive: p.cognitive,
            social: p.social,
            lower: p.lower,
            upper: p.upper,
            velocity_clamp: p.velocity_clamp,
            seed: p.seed,
        }
    }
}

impl PsoSpec {
    pub fn to_core(&self) -> PsoConfig {
        PsoConfig {
            swarm_size: self.swarm_size,
            iterations: self.iterations,
            inertia: self.inertia,
            cognitive: self.cognitive,
            social: self.social,
            lower: self.lower,
            upper: self.upper,
            velocity_clamp: self.velocity_clamp,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaSpec {
    pub eps_init: f64,
    pub accuracy: f64,
    /// Defaults to ten times the largest corner value of the candidate.
    pub alpha_max: Option<f64>,
}

impl Default for AlphaSpec {
    fn default() -> Self {
        Self { eps_init: 10.0, accuracy: 0.001, alpha_max: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub expression: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSpec {
    pub stride: usize,
    /// Kernel length scale in state cell widths; half a cell for a single
    /// input, one cell otherwise.
    pub length_cells: Option<f64>,
    pub signal_variance: f64,
    pub jitter: f64,
    pub probe_count: usize,
    pub probe_seed: u64,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            length_cells: None,
            signal_variance: 1.0,
            jitter: 1e-8,
            probe_count: 10_000,
            probe_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSpec {
    pub trajectories: usize,
    pub max_steps: usize,
    pub radius: f64,
    pub seed: u64,
    pub zero_noise: bool,
    pub full_horizon: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            trajectories: s.trajectories,
            max_steps: s.max_steps,
            radius: s.radius,
            seed: s.seed,
            zero_noise: s.zero_noise,
            full_horizon: s.full_horizon,
        }
    }
}

impl SimulationSpec {
    pub fn to_core(&self) -> SimConfig {
        SimConfig {
            trajectories: self.trajectories,
            max_steps: self.max_steps,
            radius: self.radius,
            seed: self.seed,
            zero_noise: self.zero_noise,
            full_horizon: self.full_horizon,
        }
    }
}

fn invalid(field: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {message}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical text used for hashing and manifests.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let plant = self.plant_set()?;
        let grids = self.grids()?;
        if grids.state_dim() != plant.state_dim() {
            return Err(invalid("region.state_lower", format!("plant has {} states", plant.state_dim())));
        }
        if grids.input_dim() != plant.input_dim() {
            return Err(invalid("region.input_lower", format!("plant has {} inputs", plant.input_dim())));
        }
        self.sample_config().validate().map_err(|e| invalid("sampling", e))?;
        if self.sampling.n_x == 0 {
            return Err(invalid("sampling.n_x", "must be at least 1"));
        }
        self.schedule().map_err(|e| invalid("alpha", e))?;
        if !(self.ndd.margin.is_finite() && self.ndd.margin >= 0.0) {
            return Err(invalid("ndd.margin", "must be finite and non-negative"));
        }
        match &self.lyapunov {
            LyapunovSpec::Fixed { expression } => {
                robust_doa_core::lyapunov::FixedLyapunov::parse(expression, plant.state_dim())
                    .map_err(|e| invalid("lyapunov.expression", e))?;
            }
            LyapunovSpec::Matrix { half_degree, q } => {
                let basis =
                    MonomialBasis::new(plant.state_dim(), *half_degree).map_err(|e| invalid("lyapunov.half_degree", e))?;
                let r = basis.len();
                if q.len() != r || q.iter().any(|row| row.len() != r) {
                    return Err(invalid("lyapunov.q", format!("must be {r} x {r}")));
                }
            }
            LyapunovSpec::Optimize { half_degree, pso } => {
                MonomialBasis::new(plant.state_dim(), *half_degree).map_err(|e| invalid("lyapunov.half_degree", e))?;
                pso.to_core().validate().map_err(|e| invalid("lyapunov.pso", e))?;
            }
        }
        if let Some(b) = &self.baseline {
            robust_doa_core::lyapunov::FixedLyapunov::parse(&b.expression, plant.state_dim())
                .map_err(|e| invalid("baseline.expression", e))?;
        }
        let c = &self.controller;
        if c.stride == 0 {
            return Err(invalid("controller.stride", "must be at least 1"));
        }
        if c.length_cells.is_some_and(|l| !(l.is_finite() && l > 0.0)) {
            return Err(invalid("controller.length_cells", "must be positive"));
        }
        if !(c.signal_variance.is_finite() && c.signal_variance > 0.0) {
            return Err(invalid("controller.signal_variance", "must be positive"));
        }
        if !(c.jitter.is_finite() && c.jitter >= 0.0) {
            return Err(invalid("controller.jitter", "must be non-negative"));
        }
        self.simulation.to_core().validate().map_err(|e| invalid("simulation", e))?;
        Ok(())
    }

    pub fn plant_set(&self) -> Result<PlantSet, CliError> {
        let p = &self.plant;
        match &p.builtin {
            Some(name) => {
                if !p.nominal.is_empty() || !p.delta.is_empty() {
                    return Err(invalid("plant", "give either builtin or expressions, not both"));
                }
                PlantSet::builtin(name).map_err(|e| invalid("plant.builtin", e))
            }
            None if p.nominal.is_empty() && p.delta.is_empty() => {
                PlantSet::builtin(DEFAULT_PLANT).map_err(|e| invalid("plant.builtin", e))
            }
            None => {
                let n = p.state_dim.ok_or_else(|| invalid("plant.state_dim", "required with expressions"))?;
                let m = p.input_dim.ok_or_else(|| invalid("plant.input_dim", "required with expressions"))?;
                PlantSet::from_sources(n, m, &p.nominal, &p.delta).map_err(|e| invalid("plant", e))
            }
        }
    }

    pub fn grids(&self) -> Result<NddGrids, CliError> {
        let r = &self.region;
        let state = Region::around_origin(r.state_lower.clone(), r.state_upper.clone())
            .map_err(|e| invalid("region.state_lower/state_upper", e))?;
        let input = Region::around_origin(r.input_lower.clone(), r.input_upper.clone())
            .map_err(|e| invalid("region.input_lower/input_upper", e))?;
        let state = UniformGrid::new(state, self.grid.state_cells.clone()).map_err(|e| invalid("grid.state_cells", e))?;
        let input = UniformGrid::new(input, self.grid.input_cells.clone()).map_err(|e| invalid("grid.input_cells", e))?;
        NddGrids::new(state, input).map_err(|e| invalid("region", e))
    }

    pub fn sample_config(&self) -> SampleConfig {
        let s = &self.sampling;
        SampleConfig { seed: s.seed, n_xu: s.n_xu, n_succ: s.n_succ, n_x: s.n_x }
    }

    pub fn ndd_options(&self) -> NddOptions {
        NddOptions {
            margin: self.ndd.margin,
            min_samples_per_cell: self.ndd.min_samples_per_cell,
            origin_fill_layers: self.ndd.origin_fill_layers,
        }
    }

    pub fn length_cells(&self, input_dim: usize) -> f64 {
        self.controller.length_cells.unwrap_or_else(|| default_length_cells(input_dim))
    }

    pub fn schedule(&self) -> Result<AlphaSchedule, CliError> {
        let mut s = AlphaSchedule::new(self.alpha.eps_init, self.alpha.accuracy).map_err(|e| invalid("alpha", e))?;
        if let Some(cap) = self.alpha.alpha_max {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(invalid("alpha.alpha_max", "must be positive"));
            }
            s = s.with_alpha_max(cap);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_the_benchmark() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.grid.state_cells, vec![400]);
        assert_eq!(c.sampling.n_xu, 5_000_000);
        assert_eq!(c.sampling.n_succ, 500);
        assert_eq!(c.alpha.eps_init, 10.0);
        assert_eq!(c.alpha.accuracy, 0.001);
        assert_eq!(c.grids().unwrap().state.cell_width(0), 0.01);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.lyapunov = LyapunovSpec::Optimize { half_degree: 2, pso: PsoSpec { seed: 7, ..PsoSpec::default() } };
        c.baseline = Some(BaselineSpec { expression: "x1^2".into() });
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn region_without_origin_names_the_field() {
        let err = RunConfig::from_toml("[region]\nstate_lower = [0.5]\nstate_upper = [2.0]\n").unwrap_err();
        assert!(err.to_string().contains("region.state_lower"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_toml("[sampling]\nseeds = 3\n").is_err());
        assert!(RunConfig::from_toml("[lyapunov]\nkind = \"fixed\"\nexpression = \"x1^2\"\nq = []\n").is_err());
    }

    #[test]
    fn matrix_shape_is_checked() {
        let text = "[lyapunov]\nkind = \"matrix\"\nhalf_degree = 2\nq = [[1.0, 0.0, 0.0]]\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("lyapunov.q"));
    }

    #[test]
    fn expression_plant() {
        let text = "[plant]\nstate_dim = 1\ninput_dim = 1\nnominal = [\"0.5*x1 + u1\"]\ndelta = [\"0.1*abs(x1)\"]\n";
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.plant_set().unwrap().state_dim(), 1);
    }
}
