//! The pipeline stages and the commands built from them.

use std::cell::OnceCell;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use robust_doa_core::controller::{select_training, verify_membership, Controller, KernelHyper, MembershipReport, TrainingSet};
use robust_doa_core::doa::{search_alpha, DoaEstimate, StateSamples};
use robust_doa_core::grid::CellMask;
use robust_doa_core::lyapunov::{FixedLyapunov, Lyapunov, LyapunovSos, MonomialBasis, DEFAULT_RANK_TOLERANCE};
use robust_doa_core::ndd::{NddEstimate, NddGrids, StateControlSamples};
use robust_doa_core::optimizer::{optimize, DoaProblem, OptimizationResult};
use robust_doa_core::plant::PlantSet;
use robust_doa_core::simulator::{simulate, summarize, Summary, Trajectory, TrajectoryBatch};
use serde::{Deserialize, Serialize};

use crate::config::{LyapunovSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::maskfile;
use crate::output::{fmt_float, read_json, sha256_hex, ArtifactWriter, Manifest, Seeds};

pub const NDD_W: &str = "ndd_w.mask";
pub const NDD_X: &str = "ndd_x.mask";
pub const NDD_FILL: &str = "ndd_fill.mask";
pub const DOA_MASK: &str = "doa.mask";
pub const OPTIMIZE_JSON: &str = "optimize.json";
pub const TRAINING_CSV: &str = "training.csv";

/// Configuration plus lazily drawn sample banks shared between stages.
pub struct Context {
    pub config: RunConfig,
    pub config_text: String,
    pub out: PathBuf,
    pub plant: PlantSet,
    pub grids: NddGrids,
    bank: OnceCell<StateControlSamples>,
    states: OnceCell<StateSamples>,
}

impl Context {
    pub fn new(config: RunConfig) -> CliResult<Self> {
        config.validate()?;
        let plant = config.plant_set()?;
        let grids = config.grids()?;
        Ok(Self {
            config_text: config.to_toml(),
            out: config.output_dir.clone(),
            config,
            plant,
            grids,
            bank: OnceCell::new(),
            states: OnceCell::new(),
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::new(RunConfig::from_toml(&text)?)
    }

    pub fn bank(&self) -> CliResult<&StateControlSamples> {
        if let Some(b) = self.bank.get() {
            return Ok(b);
        }
        let b = StateControlSamples::draw(&self.plant, &self.grids, &self.config.sample_config())?;
        Ok(self.bank.get_or_init(|| b))
    }

    pub fn states(&self) -> CliResult<&StateSamples> {
        if let Some(s) = self.states.get() {
            return Ok(s);
        }
        let s = &self.config.sampling;
        let drawn = StateSamples::draw(&self.grids.state, s.n_x, s.seed, s.boundary_per_face)?;
        Ok(self.states.get_or_init(|| drawn))
    }

    fn seeds(&self) -> Seeds {
        Seeds {
            sampling: self.config.sampling.seed,
            pso: match &self.config.lyapunov {
                LyapunovSpec::Optimize { pso, .. } => Some(pso.seed),
                _ => None,
            },
            probe: self.config.controller.probe_seed,
            simulation: self.config.simulation.seed,
        }
    }

    fn writer(&self) -> CliResult<ArtifactWriter> {
        ArtifactWriter::new(&self.out)
    }

    fn finish(&self, w: ArtifactWriter, command: &str) -> CliResult<Manifest> {
        w.finish(command, &self.config_text, self.seeds())
    }
}

/// A Lyapunov candidate resolved from the configuration.
pub enum Candidate {
    Fixed(FixedLyapunov),
    Sos(LyapunovSos),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateInfo {
    pub kind: String,
    pub expression: Option<String>,
    pub half_degree: Option<usize>,
    pub q: Option<Vec<Vec<f64>>>,
    pub polynomial: Option<Vec<Term>>,
}

impl Candidate {
    pub fn sos(half_degree: usize, n: usize, q: Vec<f64>) -> CliResult<Self> {
        let basis = MonomialBasis::new(n, half_degree)?;
        Ok(Candidate::Sos(LyapunovSos::new(basis, q, DEFAULT_RANK_TOLERANCE)?))
    }

    pub fn lyapunov(&self) -> &dyn Lyapunov {
        match self {
            Candidate::Fixed(l) => l,
            Candidate::Sos(l) => l,
        }
    }

    pub fn info(&self) -> CandidateInfo {
        match self {
            Candidate::Fixed(l) => CandidateInfo {
                kind: "fixed".into(),
                expression: Some(l.source().to_string()),
                half_degree: None,
                q: None,
                polynomial: None,
            },
            Candidate::Sos(l) => {
                let r = l.basis().len();
                CandidateInfo {
                    kind: "sos".into(),
                    expression: None,
                    half_degree: Some(l.basis().half_degree()),
                    q: Some(l.q().chunks(r).map(<[f64]>::to_vec).collect()),
                    polynomial: Some(
                        l.expand()
                            .terms
                            .into_iter()
                            .map(|(exponents, coefficient)| Term { exponents, coefficient })
                            .collect(),
                    ),
                }
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Candidate::Fixed(l) => l.source().to_string(),
            Candidate::Sos(l) => {
                let mut s = String::new();
                for (e, c) in l.expand().terms {
                    if !s.is_empty() {
                        s.push_str(" + ");
                    }
                    let _ = write!(s, "{}", fmt_sig(c, 5));
                    for (i, p) in e.iter().enumerate() {
                        match p {
                            0 => {}
                            1 => {
                                let _ = write!(s, "*x{}", i + 1);
                            }
                            _ => {
                                let _ = write!(s, "*x{}^{p}", i + 1);
                            }
                        }
                    }
                }
                s
            }
        }
    }
}

fn fmt_sig(v: f64, digits: usize) -> String {
    let text = format!("{:.*e}", digits - 1, v);
    let parsed: f64 = text.parse().unwrap_or(v);
    format!("{parsed}")
}

/// Resolves the configured candidate; an optimized one is read from the
/// optimize artifact.
pub fn resolve_candidate(ctx: &Context, w: Option<&mut ArtifactWriter>) -> CliResult<Candidate> {
    let n = ctx.plant.state_dim();
    match &ctx.config.lyapunov {
        LyapunovSpec::Fixed { expression } => Ok(Candidate::Fixed(FixedLyapunov::parse(expression, n)?)),
        LyapunovSpec::Matrix { half_degree, q } => Candidate::sos(*half_degree, n, q.concat()),
        LyapunovSpec::Optimize { half_degree, .. } => {
            let path = ctx.out.join(OPTIMIZE_JSON);
            let record: OptimizeRecord = read_json(&path, "optimize")?;
            if record.half_degree != *half_degree {
                return Err(CliError::Validation(format!(
                    "{} has half_degree {}, config asks for {half_degree}; rerun `optimize`",
                    path.display(),
                    record.half_degree
                )));
            }
            if let Some(w) = w {
                w.input(OPTIMIZE_JSON)?;
            }
            Candidate::sos(*half_degree, n, record.q_exact()?)
        }
    }
}

fn centre_columns(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

fn floats(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|v| format!("{v:?}"))
}

/// Smallest box holding every set cell, `None` for an empty mask.
pub fn bounding_box(mask: &CellMask) -> Option<(Vec<f64>, Vec<f64>)> {
    let grid = mask.grid();
    let mut bounds: Option<(Vec<f64>, Vec<f64>)> = None;
    for c in mask.ones() {
        let (lo, hi) = grid.cell_bounds(c);
        match &mut bounds {
            None => bounds = Some((lo, hi)),
            Some((l, h)) => {
                for i in 0..lo.len() {
                    l[i] = l[i].min(lo[i]);
                    h[i] = h[i].max(hi[i]);
                }
            }
        }
    }
    bounds
}

// ---------------------------------------------------------------- ndd

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NddRecord {
    pub candidate: CandidateInfo,
    pub product_cells: usize,
    pub kept_product_cells: usize,
    pub state_cells: usize,
    pub projected_state_cells: usize,
    pub origin_fill_cells: usize,
    pub state_volume: f64,
    pub sparse_product_cells: usize,
    pub state_bounding_box: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn stage_ndd(ctx: &Context, w: &mut ArtifactWriter, candidate: &Candidate, prefix: &str) -> CliResult<NddEstimate> {
    let ndd = ctx.bank()?.estimate(candidate.lyapunov(), &ctx.config.ndd_options())?;
    w.mask(&format!("{prefix}{NDD_W}"), &ndd.w_mask)?;
    w.mask(&format!("{prefix}{NDD_X}"), &ndd.x_mask)?;
    w.mask(&format!("{prefix}{NDD_FILL}"), &ndd.origin_fill)?;
    let min = ctx.config.ndd.min_samples_per_cell as u32;
    let record = NddRecord {
        candidate: candidate.info(),
        product_cells: ndd.w_mask.len(),
        kept_product_cells: ndd.w_mask.count(),
        state_cells: ndd.x_mask.count(),
        projected_state_cells: ndd.x_mask.count() - ndd.origin_fill.count(),
        origin_fill_cells: ndd.origin_fill.count(),
        state_volume: ndd.x_mask.volume(),
        sparse_product_cells: ndd.counts.iter().filter(|&&c| c < min.max(1)).count(),
        state_bounding_box: bounding_box(&ndd.x_mask),
    };
    w.json(&format!("{prefix}ndd.json"), &record)?;

    let product = &ctx.grids.product;
    let (n, m) = (ctx.grids.state_dim(), ctx.grids.input_dim());
    let mut header = centre_columns("x", n);
    header.extend(centre_columns("u", m));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = ndd.w_mask.ones().map(|c| floats(&product.cell_center(c)).collect());
    w.csv(&format!("{prefix}plot_ndd.csv"), &header, rows)?;
    Ok(ndd)
}

pub fn cmd_ndd(ctx: &Context) -> CliResult<NddEstimate> {
    let mut w = ctx.writer()?;
    let candidate = resolve_candidate(ctx, Some(&mut w))?;
    let ndd = stage_ndd(ctx, &mut w, &candidate, "")?;
    ctx.finish(w, "ndd")?;
    Ok(ndd)
}

// ---------------------------------------------------------------- alpha

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaRecord {
    pub candidate: CandidateInfo,
    pub alpha_star: f64,
    pub volume: f64,
    pub cells: usize,
    pub containment_checks: usize,
    pub cap_hit: bool,
    pub within_region: bool,
    pub bounding_box: Option<(Vec<f64>, Vec<f64>)>,
    pub warnings: Vec<String>,
}

pub fn stage_alpha(
    ctx: &Context,
    w: &mut ArtifactWriter,
    candidate: &Candidate,
    ndd_x: &CellMask,
    prefix: &str,
) -> CliResult<(DoaEstimate, DoaRecord)> {
    let table = ctx.states()?.table(candidate.lyapunov())?;
    let doa = search_alpha(&table, ndd_x, &ctx.config.schedule()?)?;
    w.mask(&format!("{prefix}{DOA_MASK}"), &doa.level_set.mask)?;
    let record = DoaRecord {
        candidate: candidate.info(),
        alpha_star: doa.alpha_star(),
        volume: doa.volume(),
        cells: doa.level_set.mask.count(),
        containment_checks: doa.trace.check_count(),
        cap_hit: doa.trace.cap_hit,
        within_region: doa.level_set.within_region,
        bounding_box: bounding_box(&doa.level_set.mask),
        warnings: doa.trace.warnings.clone(),
    };
    w.json(&format!("{prefix}doa.json"), &record)?;
    let trace = doa.trace.checks.iter().zip(&doa.trace.epsilons).enumerate().map(|(i, ((a, ok), e))| {
        vec![i.to_string(), format!("{a:?}"), format!("{e:?}"), u8::from(*ok).to_string()]
    });
    w.csv(&format!("{prefix}alpha_trace.csv"), &["check", "alpha", "epsilon", "admissible"], trace)?;

    let grid = &ctx.grids.state;
    let mut header = centre_columns("x", grid.dim());
    header.extend(["l_centre", "l_cell_max", "in_ndd", "in_doa"].map(String::from));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(grid.len());
    for c in 0..grid.len() {
        let centre = grid.cell_center(c);
        let value = candidate.lyapunov().value(&centre)?;
        let mut row: Vec<String> = floats(&centre).collect();
        row.push(format!("{value:?}"));
        row.push(format!("{:?}", table.cell_max()[c]));
        row.push(u8::from(ndd_x.get(c)).to_string());
        row.push(u8::from(doa.level_set.mask.get(c)).to_string());
        rows.push(row);
    }
    w.csv(&format!("{prefix}plot_levelset.csv"), &header, rows)?;
    Ok((doa, record))
}

pub fn cmd_alpha(ctx: &Context) -> CliResult<DoaRecord> {
    let mut w = ctx.writer()?;
    let candidate = resolve_candidate(ctx, Some(&mut w))?;
    let ndd_x = maskfile::read(&w.path(NDD_X), &ctx.grids.state, "ndd")?;
    w.input(NDD_X)?;
    let (_, record) = stage_alpha(ctx, &mut w, &candidate, &ndd_x, "")?;
    ctx.finish(w, "alpha")?;
    Ok(record)
}

// ---------------------------------------------------------------- optimize

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRecord {
    pub half_degree: usize,
    pub q_best: Vec<Vec<f64>>,
    /// `q_best` row-major in round-trip notation.
    pub q_exact: Vec<String>,
    pub m_best: f64,
    pub alpha_best: f64,
    pub evaluations: usize,
    pub polynomial: Vec<Term>,
}

impl OptimizeRecord {
    pub fn q_exact(&self) -> CliResult<Vec<f64>> {
        self.q_exact
            .iter()
            .map(|s| s.parse().map_err(|_| CliError::Validation(format!("optimize.json: bad q_exact entry `{s}`"))))
            .collect()
    }
}

pub fn stage_optimize(ctx: &Context, w: &mut ArtifactWriter) -> CliResult<(OptimizationResult, OptimizeRecord)> {
    let LyapunovSpec::Optimize { half_degree, pso } = &ctx.config.lyapunov else {
        return Err(CliError::Validation("lyapunov.kind: `optimize` needs kind = \"optimize\"".into()));
    };
    let basis = MonomialBasis::new(ctx.plant.state_dim(), *half_degree)?;
    let problem =
        DoaProblem::new(ctx.bank()?, ctx.states()?, basis, ctx.config.schedule()?, ctx.config.ndd_options())?;
    let result = optimize(&problem, &pso.to_core())?;
    let r = problem.q_side();
    let candidate = Candidate::sos(*half_degree, ctx.plant.state_dim(), result.q_best.clone())?;
    let record = OptimizeRecord {
        half_degree: *half_degree,
        q_best: result.q_best.chunks(r).map(<[f64]>::to_vec).collect(),
        q_exact: result.q_best.iter().map(|v| format!("{v:?}")).collect(),
        m_best: result.m_best,
        alpha_best: result.alpha_best,
        evaluations: result.evaluations,
        polynomial: candidate.info().polynomial.unwrap_or_default(),
    };
    w.json(OPTIMIZE_JSON, &record)?;
    w.mask("optimize_doa.mask", &result.level_set)?;
    let history = result.history.iter().enumerate().map(|(i, v)| vec![i.to_string(), format!("{v:?}")]);
    w.csv("pso_history.csv", &["iteration", "best_volume"], history)?;
    Ok((result, record))
}

pub fn cmd_optimize(ctx: &Context) -> CliResult<OptimizeRecord> {
    let mut w = ctx.writer()?;
    let (_, record) = stage_optimize(ctx, &mut w)?;
    ctx.finish(w, "optimize")?;
    Ok(record)
}

// ---------------------------------------------------------------- controller

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub state_cell: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipRecord {
    pub probes: usize,
    pub exempt: usize,
    pub violations: usize,
    pub violation_fraction: f64,
    pub worst: Vec<ViolationRecord>,
}

impl From<&MembershipReport> for MembershipRecord {
    fn from(r: &MembershipReport) -> Self {
        Self {
            probes: r.probes,
            exempt: r.exempt,
            violations: r.violations,
            violation_fraction: r.violation_fraction,
            worst: r
                .worst
                .iter()
                .map(|v| ViolationRecord { state_cell: v.state_cell, x: v.x.clone(), u: v.u.clone(), distance: v.distance })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerRecord {
    pub training_pairs: usize,
    pub warnings: Vec<String>,
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    pub jitter: f64,
    pub jitter_used: f64,
    pub membership: MembershipRecord,
}

fn hyper(ctx: &Context) -> KernelHyper {
    let c = &ctx.config.controller;
    let cells = ctx.config.length_cells(ctx.plant.input_dim());
    KernelHyper { signal_variance: c.signal_variance, jitter: c.jitter, ..KernelHyper::for_grid(&ctx.grids.state, cells) }
}

/// Fits the controller and checks it against the kept cells. The artifacts
/// are written before a failed check is reported.
pub fn stage_controller(
    ctx: &Context,
    w: &mut ArtifactWriter,
    ndd: &NddEstimate,
) -> CliResult<(Controller, ControllerRecord)> {
    let c = &ctx.config.controller;
    let training = select_training(ndd, c.stride)?;
    let (n, m) = (training.state_dim(), training.input_dim());
    let mut header = centre_columns("x", n);
    header.extend(centre_columns("u", m));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..training.len()).map(|i| floats(training.state(i)).chain(floats(training.input(i))).collect());
    w.csv(TRAINING_CSV, &header_ref, rows)?;
    let warnings = training.warnings.clone();
    let controller = Controller::fit(training, hyper(ctx))?;
    let report = verify_membership(&controller, ndd, c.probe_count, c.probe_seed)?;
    let record = ControllerRecord {
        training_pairs: controller.training().len(),
        warnings,
        length_scales: controller.hyper().length_scales.clone(),
        signal_variance: controller.hyper().signal_variance,
        jitter: controller.hyper().jitter,
        jitter_used: controller.jitter_used(),
        membership: (&report).into(),
    };
    w.json("controller.json", &record)?;

    let grid = &ctx.grids.state;
    let mut header = centre_columns("x", n);
    header.extend(centre_columns("mu", m));
    header.push("in_ndd".into());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows = Vec::with_capacity(grid.len());
    for cell in 0..grid.len() {
        let centre = grid.cell_center(cell);
        let u = controller.evaluate(&centre)?;
        let mut row: Vec<String> = floats(&centre).chain(floats(&u)).collect();
        row.push(u8::from(ndd.x_mask.get(cell)).to_string());
        rows.push(row);
    }
    w.csv("plot_controller.csv", &header_ref, rows)?;
    Ok((controller, record))
}

fn membership_error(record: &ControllerRecord) -> CliError {
    let worst = record.membership.worst.first().map_or(String::new(), |v| {
        format!("; worst at x = {:?}, u = {:?}, distance {}", v.x, v.u, fmt_float(v.distance))
    });
    CliError::Assertion(format!(
        "controller leaves the negative-definite domain at {} of {} probes{worst}",
        record.membership.violations, record.membership.probes
    ))
}

/// Reads the negative-definite domain written by `ndd`.
pub fn load_ndd(ctx: &Context, w: &mut ArtifactWriter) -> CliResult<NddEstimate> {
    let w_mask = maskfile::read(&w.path(NDD_W), &ctx.grids.product, "ndd")?;
    let x_mask = maskfile::read(&w.path(NDD_X), &ctx.grids.state, "ndd")?;
    w.input(NDD_W)?;
    w.input(NDD_X)?;
    let ndd = NddEstimate::from_w_mask(w_mask, &ctx.grids.state, vec![], vec![], ctx.config.ndd.origin_fill_layers)?;
    if ndd.x_mask != x_mask {
        return Err(CliError::Validation(format!(
            "{} does not match {}; rerun `ndd`",
            NDD_X, NDD_W
        )));
    }
    Ok(ndd)
}

pub fn cmd_controller(ctx: &Context) -> CliResult<ControllerRecord> {
    let mut w = ctx.writer()?;
    let ndd = load_ndd(ctx, &mut w)?;
    let (_, record) = stage_controller(ctx, &mut w, &ndd)?;
    ctx.finish(w, "controller")?;
    if record.membership.violations > 0 {
        return Err(membership_error(&record));
    }
    Ok(record)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub trajectories: usize,
    pub converged: usize,
    pub aborted: usize,
    pub fraction: f64,
    pub median_step: Option<f64>,
    pub p95_step: Option<usize>,
    pub max_excursion: f64,
    pub radius: f64,
    pub max_steps: usize,
    pub converged_at: Vec<Option<usize>>,
    pub aborted_reasons: Vec<(usize, String)>,
}

pub fn stage_simulate(
    ctx: &Context,
    w: &mut ArtifactWriter,
    controller: &Controller,
    doa: &CellMask,
) -> CliResult<(TrajectoryBatch, SimulationRecord)> {
    let cfg = ctx.config.simulation.to_core();
    let batch = simulate(&ctx.plant, controller, doa, &cfg)?;
    let s: Summary = summarize(&batch)?;
    let record = SimulationRecord {
        trajectories: s.trajectories,
        converged: s.converged,
        aborted: s.aborted,
        fraction: s.fraction,
        median_step: s.median_step,
        p95_step: s.p95_step,
        max_excursion: s.max_excursion,
        radius: cfg.radius,
        max_steps: cfg.max_steps,
        converged_at: batch.trajectories.iter().map(|t| t.converged_at).collect(),
        aborted_reasons: batch
            .trajectories
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.aborted.clone().map(|a| (i, a)))
            .collect(),
    };
    w.json("simulation.json", &record)?;
    let header = ["k", "trajectory", "component", "value"];
    let (n, m) = (batch.state_dim, batch.input_dim);
    w.csv("trajectories.csv", &header, long_rows(&batch, n, |t| &t.states))?;
    w.csv("noises.csv", &header, long_rows(&batch, n, |t| &t.noises))?;
    w.csv("inputs.csv", &header, long_rows(&batch, m, |t| &t.inputs))?;
    Ok((batch, record))
}

/// One row per `(k, trajectory, component)`.
fn long_rows(batch: &TrajectoryBatch, dim: usize, pick: fn(&Trajectory) -> &[f64]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (id, t) in batch.trajectories.iter().enumerate() {
        for (k, chunk) in pick(t).chunks(dim).enumerate() {
            for (comp, v) in chunk.iter().enumerate() {
                rows.push(vec![k.to_string(), id.to_string(), (comp + 1).to_string(), format!("{v:?}")]);
            }
        }
    }
    rows
}

/// Refits the controller from the saved training pairs.
pub fn load_controller(ctx: &Context, w: &mut ArtifactWriter) -> CliResult<Controller> {
    let path = w.path(TRAINING_CSV);
    if !path.exists() {
        return Err(CliError::MissingArtifact { path, command: "controller" });
    }
    let (n, m) = (ctx.plant.state_dim(), ctx.plant.input_dim());
    let mut reader = csv::Reader::from_path(&path).map_err(|e| CliError::format(&path, e.to_string()))?;
    let (mut states, mut inputs) = (Vec::new(), Vec::new());
    for row in reader.records() {
        let row = row.map_err(|e| CliError::format(&path, e.to_string()))?;
        if row.len() != n + m {
            return Err(CliError::format(&path, format!("expected {} columns, found {}", n + m, row.len())));
        }
        for (i, field) in row.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| CliError::format(&path, format!("bad number `{field}`")))?;
            if i < n {
                states.push(v);
            } else {
                inputs.push(v);
            }
        }
    }
    w.input(TRAINING_CSV)?;
    let training = TrainingSet::new(n, m, states, inputs)?;
    Ok(Controller::fit(training, hyper(ctx))?)
}

pub fn cmd_simulate(ctx: &Context) -> CliResult<SimulationRecord> {
    let mut w = ctx.writer()?;
    let controller = load_controller(ctx, &mut w)?;
    let doa = maskfile::read(&w.path(DOA_MASK), &ctx.grids.state, "alpha")?;
    w.input(DOA_MASK)?;
    let (_, record) = stage_simulate(ctx, &mut w, &controller, &doa)?;
    ctx.finish(w, "simulate")?;
    Ok(record)
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub plant: String,
    pub candidate: String,
    pub optimized_volume: Option<f64>,
    pub ndd_state_volume: f64,
    pub alpha_star: f64,
    pub doa_volume: f64,
    pub doa_bounding_box: Option<(Vec<f64>, Vec<f64>)>,
    pub baseline: Option<BaselineSummary>,
    pub enlargement_factor: Option<f64>,
    pub training_pairs: usize,
    pub membership_probes: usize,
    pub membership_violations: usize,
    pub simulated: usize,
    pub converged: usize,
    pub converged_fraction: f64,
    pub median_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub expression: String,
    pub alpha_star: f64,
    pub volume: f64,
    pub bounding_box: Option<(Vec<f64>, Vec<f64>)>,
}

impl PipelineSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let bbox = |b: &Option<(Vec<f64>, Vec<f64>)>| match b {
            Some((lo, hi)) => {
                let parts: Vec<String> =
                    lo.iter().zip(hi).map(|(l, h)| format!("[{}, {}]", fmt_sig(*l, 6), fmt_sig(*h, 6))).collect();
                parts.join(" x ")
            }
            None => "empty".into(),
        };
        let _ = writeln!(s, "plant                 {}", self.plant);
        let _ = writeln!(s, "lyapunov candidate    {}", self.candidate);
        let _ = writeln!(s, "negative-def. volume  {}", fmt_sig(self.ndd_state_volume, 6));
        let _ = writeln!(s, "alpha*                {}", fmt_sig(self.alpha_star, 6));
        let _ = writeln!(s, "DOA volume            {}", fmt_sig(self.doa_volume, 6));
        let _ = writeln!(s, "DOA bounding box      {}", bbox(&self.doa_bounding_box));
        if let Some(b) = &self.baseline {
            let _ = writeln!(s, "baseline candidate    {}", b.expression);
            let _ = writeln!(s, "baseline alpha*       {}", fmt_sig(b.alpha_star, 6));
            let _ = writeln!(s, "baseline DOA volume   {}", fmt_sig(b.volume, 6));
            let _ = writeln!(s, "baseline bounding box {}", bbox(&b.bounding_box));
        }
        if let Some(f) = self.enlargement_factor {
            let _ = writeln!(s, "enlargement factor    {}", fmt_sig(f, 6));
        }
        let _ = writeln!(s, "training pairs        {}", self.training_pairs);
        let _ = writeln!(
            s,
            "membership            {} violations in {} probes",
            self.membership_violations, self.membership_probes
        );
        let median = self.median_step.map_or("-".to_string(), |m| fmt_sig(m, 6));
        let _ = writeln!(
            s,
            "simulation            {}/{} converged (fraction {}), median step {median}",
            self.converged,
            self.simulated,
            fmt_sig(self.converged_fraction, 6)
        );
        s
    }
}

pub struct PipelineOutcome {
    pub summary: PipelineSummary,
    pub doa: DoaRecord,
    pub controller: ControllerRecord,
    pub simulation: SimulationRecord,
    pub optimize: Option<OptimizeRecord>,
}

/// Runs every stage in one output directory with a single manifest.
pub fn cmd_pipeline(ctx: &Context) -> CliResult<PipelineOutcome> {
    let mut w = ctx.writer()?;
    let optimized = match ctx.config.lyapunov {
        LyapunovSpec::Optimize { .. } => Some(stage_optimize(ctx, &mut w)?.1),
        _ => None,
    };
    let candidate = resolve_candidate(ctx, None)?;
    let ndd = stage_ndd(ctx, &mut w, &candidate, "")?;
    let (doa, doa_record) = stage_alpha(ctx, &mut w, &candidate, &ndd.x_mask, "")?;

    let baseline = match &ctx.config.baseline {
        Some(b) => {
            let base = Candidate::Fixed(FixedLyapunov::parse(&b.expression, ctx.plant.state_dim())?);
            let base_ndd = stage_ndd(ctx, &mut w, &base, "baseline_")?;
            let (_, rec) = stage_alpha(ctx, &mut w, &base, &base_ndd.x_mask, "baseline_")?;
            Some(BaselineSummary {
                expression: b.expression.clone(),
                alpha_star: rec.alpha_star,
                volume: rec.volume,
                bounding_box: rec.bounding_box,
            })
        }
        None => None,
    };

    let (controller, controller_record) = stage_controller(ctx, &mut w, &ndd)?;
    if controller_record.membership.violations > 0 {
        ctx.finish(w, "pipeline")?;
        return Err(membership_error(&controller_record));
    }
    let (_, sim) = stage_simulate(ctx, &mut w, &controller, &doa.level_set.mask)?;

    let summary = PipelineSummary {
        plant: ctx.plant.name().map_or_else(|| "custom".to_string(), str::to_string),
        candidate: candidate.describe(),
        optimized_volume: optimized.as_ref().map(|o| o.m_best),
        ndd_state_volume: ndd.x_mask.volume(),
        alpha_star: doa_record.alpha_star,
        doa_volume: doa_record.volume,
        doa_bounding_box: doa_record.bounding_box.clone(),
        enlargement_factor: baseline.as_ref().and_then(|b| (b.volume > 0.0).then(|| doa_record.volume / b.volume)),
        baseline,
        training_pairs: controller_record.training_pairs,
        membership_probes: controller_record.membership.probes,
        membership_violations: controller_record.membership.violations,
        simulated: sim.trajectories,
        converged: sim.converged,
        converged_fraction: sim.fraction,
        median_step: sim.median_step,
    };
    w.json("summary.json", &summary)?;
    w.bytes("summary.txt", summary.render().as_bytes())?;
    ctx.finish(w, "pipeline")?;
    Ok(PipelineOutcome { summary, doa: doa_record, controller: controller_record, simulation: sim, optimize: optimized })
}

// ---------------------------------------------------------------- replay

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub command: String,
    pub matched: Vec<String>,
    pub mismatched: Vec<String>,
    /// The replayed command's own error, if any.
    pub error: Option<String>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.mismatched.is_empty()
    }
}

/// Reruns the command recorded in `manifest_path` inside `target` and
/// compares every output hash.
pub fn cmd_replay(manifest_path: &Path, target: &Path) -> CliResult<ReplayReport> {
    let manifest: Manifest = read_json(manifest_path, "the recorded command")?;
    if sha256_hex(manifest.config.as_bytes()) != manifest.config_sha256 {
        return Err(CliError::format(manifest_path, "config hash does not match the embedded config"));
    }
    let source = manifest_path.parent().unwrap_or(Path::new("."));
    if source.canonicalize().ok() == target.canonicalize().ok() {
        return Err(CliError::Validation("replay target must differ from the recorded output directory".into()));
    }
    fs::create_dir_all(target).map_err(|e| CliError::io(target, e))?;
    for (name, hash) in &manifest.inputs {
        let from = source.join(name);
        let bytes = fs::read(&from).map_err(|e| CliError::io(&from, e))?;
        if &sha256_hex(&bytes) != hash {
            return Err(CliError::format(&from, "input changed since the recorded run"));
        }
        let to = target.join(name);
        fs::write(&to, bytes).map_err(|e| CliError::io(&to, e))?;
    }
    let mut config = RunConfig::from_toml(&manifest.config)?;
    config.output_dir = PathBuf::from(target);
    let mut ctx = Context::new(config)?;
    ctx.config_text = manifest.config.clone();
    let error = run_command(&ctx, &manifest.command)?.err().map(|e| e.to_string());
    let mut report = ReplayReport { command: manifest.command.clone(), matched: vec![], mismatched: vec![], error };
    for (name, hash) in &manifest.outputs {
        let path = target.join(name);
        match fs::read(&path) {
            Ok(bytes) if &sha256_hex(&bytes) == hash => report.matched.push(name.clone()),
            _ => report.mismatched.push(name.clone()),
        }
    }
    Ok(report)
}

/// Runs a named command; the outer error is for unknown names, the inner
/// one is the command's own result.
fn run_command(ctx: &Context, command: &str) -> CliResult<CliResult<()>> {
    Ok(match command {
        "ndd" => cmd_ndd(ctx).map(drop),
        "alpha" => cmd_alpha(ctx).map(drop),
        "optimize" => cmd_optimize(ctx).map(drop),
        "controller" => cmd_controller(ctx).map(drop),
        "simulate" => cmd_simulate(ctx).map(drop),
        "pipeline" => cmd_pipeline(ctx).map(drop),
        other => return Err(CliError::Validation(format!("manifest names unknown command `{other}`"))),
    })
}
