//! Scenario driver: builds a simulation from a [`RunConfig`], runs it and
//! writes the logs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::adaptivity::{adapt_step, MarkingPolicy};
use crate::boussinesq::{AdaptOptions, Flow, PotentialSource, Simulation, SimulationSetup};
use crate::coef::{Coef, Potential};
use crate::config::{ManufacturedKind, RunConfig, ScenarioId};
use crate::error::{Error, Result};
use crate::estimator::{stationary_estimate, StepRecord};
use crate::fem::DgSpace;
use crate::fitting::{weighted_dg_error, DeltaPolicy, Fitting, FittingData};
use crate::ipdg::{default_penalty, solve_stationary, TransportProblem};
use crate::mesh::{BoundaryLabels, Domain, Mesh};
use crate::output::{snapshot_name, write_vtu, CsvLog, Snapshot, DIAGNOSTICS_COLUMNS};
use crate::scenario::{self, Manufactured};

/// Quadrature points per direction for a degree unless configured.
pub fn estimator_points(cfg: &RunConfig) -> usize {
    cfg.discretisation.quadrature.unwrap_or(cfg.discretisation.degree + 2)
}

fn domain_of(cfg: &RunConfig, default: Domain) -> Result<Domain> {
    match cfg.mesh.domain {
        Some([x0, x1, y0, y1]) => Domain::new(x0, x1, y0, y1),
        None => Ok(default),
    }
}

fn adapt_options(cfg: &RunConfig) -> Option<AdaptOptions> {
    cfg.adaptivity.enabled.then(|| AdaptOptions {
        policy: cfg.adaptivity.marking.clone(),
        every: cfg.adaptivity.every,
        indicator: cfg.adaptivity.indicator,
    })
}

/// Transient setup for every scenario except `manufactured`.
pub fn simulation_setup(cfg: &RunConfig) -> Result<SimulationSetup> {
    cfg.validate()?;
    let degree = cfg.discretisation.degree;
    let nq = estimator_points(cfg);
    let penalty = cfg.discretisation.penalty.unwrap_or(default_penalty(degree));
    let floor = cfg.fitting.epsilon_floor;
    match cfg.scenario {
        ScenarioId::Manufactured => Err(Error::Config("manufactured runs are stationary".into())),
        ScenarioId::VanKeken => {
            let eps = cfg.physics.epsilon.unwrap_or(0.0);
            // temperature frozen to the initial trace on the walls
            let labels = BoundaryLabels::all_dirichlet();
            let mesh = Arc::new(Mesh::create_uniform(
                domain_of(cfg, scenario::van_keken_domain())?,
                cfg.mesh.levels,
                labels,
            )?);
            let mut problem = TransportProblem::new(eps, crate::coef::Convection::zero(), degree);
            problem.penalty = penalty;
            problem.unsteady_convection = true;
            problem.dirichlet = Coef::analytic(|x, _| scenario::van_keken_initial(x));
            Ok(SimulationSetup {
                mesh,
                degree,
                problem,
                flow: Flow::Coupled(scenario::van_keken_coupling()),
                potential: PotentialSource::Discrete(cfg.fitting.sign),
                alpha: cfg.fitting.alpha.unwrap_or(1.0),
                delta: cfg.fitting.delta.unwrap_or(DeltaPolicy::Auto),
                epsilon_estimator: eps.max(floor),
                initial: Arc::new(|x, _| scenario::van_keken_initial(x)),
                adapt: adapt_options(cfg),
                nq,
            })
        }
        s => {
            let base = scenario::case(s.case_number().unwrap_or(1)).expect("cases 1 to 4 exist");
            let (convection, potential, source) = match s {
                ScenarioId::Custom => {
                    let c = cfg.custom.as_ref().expect("validated");
                    (
                        scenario::linear_flow(c.convection),
                        PotentialSource::Discrete(cfg.fitting.sign),
                        Coef::Const(c.source),
                    )
                }
                _ => (
                    base.convection.clone(),
                    PotentialSource::Given(base.potential.clone()),
                    base.source.clone(),
                ),
            };
            let eps = cfg.physics.epsilon.unwrap_or(base.epsilon);
            let mesh = Arc::new(Mesh::create_uniform(domain_of(cfg, base.domain)?, cfg.mesh.levels, base.labels)?);
            let mut problem = TransportProblem::new(eps, convection.clone(), degree);
            problem.penalty = penalty;
            problem.source = source;
            problem.dirichlet = base.dirichlet.clone();
            Ok(SimulationSetup {
                mesh,
                degree,
                problem,
                flow: Flow::Prescribed(convection),
                potential,
                alpha: cfg.fitting.alpha.unwrap_or(base.alpha),
                delta: cfg.fitting.delta.unwrap_or(base.delta),
                epsilon_estimator: eps.max(floor),
                initial: base.initial.clone(),
                adapt: adapt_options(cfg),
                nq,
            })
        }
    }
}

/// Outcome of a transient run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub records: Vec<StepRecord>,
    pub diagnostics: Vec<crate::boussinesq::StepDiagnostics>,
    pub out_dir: PathBuf,
}

/// Steps a simulation to `end`, calling `each` after every step.
pub fn drive(
    sim: &mut Simulation,
    cfg: &RunConfig,
    mut each: impl FnMut(&Simulation, &StepRecord) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    let end = cfg.time.end;
    let mut out = Vec::new();
    while sim.t < end * (1.0 - 1e-12) {
        if cfg.time.max_steps.is_some_and(|m| sim.step >= m) {
            break;
        }
        let mut dt = cfg.time.dt.min(end - sim.t);
        if let Some(c) = cfg.time.cfl {
            dt = dt.min(sim.cfl_limit(c));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::TimeStep(format!("step size {dt} at t = {}", sim.t)));
        }
        let rec = sim.advance(dt)?;
        each(sim, &rec)?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes the config echo, estimator log, diagnostics and snapshots of a
/// transient run into `out_dir`.
pub fn run_transient(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    let mut sim = Simulation::new(simulation_setup(cfg)?)?;
    let mut log = CsvLog::estimator(&out_dir.join("estimator.csv"))?;
    let mut diag = CsvLog::create(&out_dir.join("diagnostics.csv"), None, &DIAGNOSTICS_COLUMNS)?;
    let every = cfg.output.vtk_every;
    let snap = |sim: &Simulation| -> Result<()> {
        write_vtu(
            &out_dir.join(snapshot_name(sim.step)),
            &Snapshot {
                u: &sim.u,
                t: sim.t,
                fitting: Some(&sim.fitting),
                stokes: sim.stokes.as_ref(),
                indicator: Some(&sim.indicators),
            },
        )
    };
    if every > 0 {
        snap(&sim)?;
    }
    let records = drive(&mut sim, cfg, |sim, rec| {
        log.record(rec)?;
        if let Some(d) = sim.diagnostics.last() {
            diag.diagnostics(d, sim.mesh.n_cells())?;
        }
        if every > 0 && sim.step % every == 0 {
            snap(sim)?;
        }
        Ok(())
    })?;
    Ok(RunSummary {
        records,
        diagnostics: sim.diagnostics.clone(),
        out_dir: out_dir.to_path_buf(),
    })
}

/// One row of a convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n_cells: usize,
    pub n_dofs: usize,
    pub h_max: f64,
    pub error: f64,
    pub estimate: f64,
}

impl ConvergenceRow {
    pub fn effectivity(&self) -> f64 {
        self.estimate / self.error
    }
}

/// Stationary solve, error and estimate for a manufactured solution on one
/// mesh; returns the row and the cell indicators.
pub fn manufactured_solve(
    m: &Manufactured,
    mesh: Arc<Mesh>,
    degree: usize,
    penalty: f64,
    nq: usize,
) -> Result<(ConvergenceRow, Vec<f64>)> {
    let mut pb = TransportProblem::new(m.epsilon, m.convection.clone(), degree);
    pb.penalty = penalty;
    pb.source = m.source.clone();
    pb.dirichlet = m.dirichlet();
    let space = DgSpace::new(degree);
    let u = solve_stationary(mesh.clone(), space, &pb)?;
    let fit = Arc::new(Fitting::new(
        0.0,
        m.epsilon,
        m.convection.clone(),
        Potential::Zero,
        DeltaPolicy::Zero,
    )?);
    let data = FittingData::new(fit.clone(), mesh.clone(), 0.0, nq)?;
    let ind = stationary_estimate(&u, &pb, &data, nq)?;
    let exact = m.exact.clone();
    let ex = move |x: [f64; 2]| exact(x);
    let error = weighted_dg_error(&u, Some(&ex), &fit, m.epsilon, penalty, 0.0, nq + 2)?;
    let h_max = (0..mesh.n_cells()).map(|c| mesh.h(c)).fold(0.0, f64::max);
    Ok((
        ConvergenceRow {
            n_cells: mesh.n_cells(),
            n_dofs: u.n_dofs(),
            h_max,
            error,
            estimate: ind.total(),
        },
        ind.values(),
    ))
}

pub fn manufactured_problem(kind: ManufacturedKind, epsilon: f64) -> Manufactured {
    match kind {
        ManufacturedKind::Smooth => scenario::manufactured_smooth(epsilon),
        ManufacturedKind::Peak => scenario::manufactured_peak(epsilon),
    }
}

/// Uniform refinement study over `cycles` levels starting at `level`.
pub fn uniform_study(
    m: &Manufactured,
    domain: Domain,
    level: u8,
    cycles: usize,
    degree: usize,
    penalty: f64,
    nq: usize,
) -> Result<Vec<ConvergenceRow>> {
    (0..cycles)
        .map(|i| {
            let mesh = Arc::new(Mesh::create_uniform(
                domain,
                level + i as u8,
                BoundaryLabels::all_dirichlet(),
            )?);
            manufactured_solve(m, mesh, degree, penalty, nq).map(|r| r.0)
        })
        .collect()
}

/// Refine-only adaptive sequence driven by the stationary indicators; stops
/// once the error reaches `target` or after `max_cycles` solves.
pub fn adaptive_study(
    m: &Manufactured,
    mesh: Arc<Mesh>,
    policy: &MarkingPolicy,
    degree: usize,
    penalty: f64,
    nq: usize,
    target: f64,
    max_cycles: usize,
) -> Result<Vec<ConvergenceRow>> {
    let policy = MarkingPolicy {
        coarsen_fraction: 0.0,
        ..policy.clone()
    };
    let mut mesh = mesh;
    let mut rows = Vec::new();
    for _ in 0..max_cycles {
        let (row, ind) = manufactured_solve(m, mesh.clone(), degree, penalty, nq)?;
        let done = row.error <= target;
        rows.push(row);
        if done {
            break;
        }
        let next = adapt_step(&mesh, &ind, &[], &policy)?;
        if next.flags.refine.is_empty() {
            break;
        }
        mesh = next.mesh;
    }
    Ok(rows)
}

fn write_convergence(path: &Path, rows: &[ConvergenceRow]) -> Result<()> {
    let mut log = CsvLog::create(
        path,
        None,
        &["n_cells", "n_dofs", "h_max", "error", "estimate", "effectivity"],
    )?;
    for r in rows {
        log.row(&format!(
            "{},{},{:e},{:e},{:e},{:e}",
            r.n_cells,
            r.n_dofs,
            r.h_max,
            r.error,
            r.estimate,
            r.effectivity()
        ))?;
    }
    Ok(())
}

/// Manufactured stationary study: uniform table, and optionally the
/// adaptive sequence down to the finest uniform error.
pub fn run_manufactured(cfg: &RunConfig, out_dir: &Path) -> Result<(Vec<ConvergenceRow>, Vec<ConvergenceRow>)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    let ms = cfg.manufactured.as_ref().expect("validated");
    let degree = cfg.discretisation.degree;
    let penalty = cfg.discretisation.penalty.unwrap_or(default_penalty(degree));
    let nq = estimator_points(cfg);
    let m = manufactured_problem(ms.kind, cfg.physics.epsilon.unwrap_or(1e-2));
    let domain = domain_of(cfg, Domain::unit_square())?;
    let uniform = uniform_study(&m, domain, cfg.mesh.levels, ms.cycles, degree, penalty, nq)?;
    write_convergence(&out_dir.join("convergence.csv"), &uniform)?;
    let mut adaptive = Vec::new();
    if ms.adaptive {
        let target = uniform.last().map(|r| r.error).unwrap_or(0.0);
        let mesh = Arc::new(Mesh::create_uniform(domain, cfg.mesh.levels, BoundaryLabels::all_dirichlet())?);
        adaptive = adaptive_study(&m, mesh, &cfg.adaptivity.marking, degree, penalty, nq, target, 40)?;
        write_convergence(&out_dir.join("convergence_adaptive.csv"), &adaptive)?;
    }
    Ok((uniform, adaptive))
}

/// Runs any scenario, writing into `cfg.output.dir`.
pub fn run_scenario(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.output.dir.clone();
    match cfg.scenario {
        ScenarioId::Manufactured => run_manufactured(cfg, &dir).map(|_| ()),
        _ => run_transient(cfg, &dir).map(|_| ()),
    }
}
