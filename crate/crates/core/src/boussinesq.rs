//! Transient driver: implicit Euler transport with per-step estimation and
//! adaptivity, for a prescribed flow or a flow recomputed from the
//! temperature by a Stokes solve after each step.
//!
//! Step n uses the convection of step n - 1's end state (for a coupled run,
//! the Stokes velocity computed from u^{n-1}). The fitting of step n is built
//! from that same convection, so the residual seen by the estimator is the
//! one of the scheme actually solved.

use std::sync::Arc;

use crate::adaptivity::{adapt_step, MarkingPolicy};
use crate::cg::CgSpace;
use crate::coef::{Convection, Point, Potential, ScalarFn};
use crate::error::{Error, Result};
use crate::estimator::{
    kelly_indicator, local_indicator, residual_operand, spatial_residual, timestep_terms, weighted_jump_sq,
    EstimatorReport, StepInfo, StepInput, StepRecord, StepTerms,
};
use crate::fem::{l2_project_cellwise, transfer, DgField, DgSpace};
use crate::fitting::{solve_potential, DeltaPolicy, Fitting, FittingData, PotentialSign};
use crate::ipdg::{implicit_euler_step, StepCache, TransportProblem};
use crate::mesh::Mesh;
use crate::stokes::{solve_stokes, StokesSolution, VELOCITY_DEGREE};

/// Buoyancy-driven flow: constant viscosity, density `rho_scale * u` and
/// body force `-rho g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub viscosity: f64,
    pub density_scale: f64,
    pub gravity: [f64; 2],
}

impl Coupling {
    pub fn solve(&self, u: &DgField) -> Result<StokesSolution> {
        let mu = self.viscosity;
        let rho = self.density_scale;
        let g = self.gravity;
        let force = |p: &Point| {
            let r = rho * u.at(p.cell, p.rect.to_ref(p.x)).value;
            [-r * g[0], -r * g[1]]
        };
        solve_stokes(u.mesh().clone(), &|_| mu, &force)
    }
}

/// Convection of the transport equation.
#[derive(Clone, Debug)]
pub enum Flow {
    Prescribed(Convection),
    Coupled(Coupling),
}

/// Where the Helmholtz potential comes from.
#[derive(Clone, Debug)]
pub enum PotentialSource {
    Given(Potential),
    /// continuous Poisson solve on each mesh
    Discrete(PotentialSign),
}

/// Which per-cell indicator drives marking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    Fitted,
    Kelly,
}

#[derive(Clone, Debug)]
pub struct AdaptOptions {
    pub policy: MarkingPolicy,
    pub every: usize,
    pub indicator: IndicatorKind,
}

/// Everything defining a transient run.
#[derive(Clone)]
pub struct SimulationSetup {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    pub problem: TransportProblem,
    pub flow: Flow,
    pub potential: PotentialSource,
    pub alpha: f64,
    pub delta: DeltaPolicy,
    /// diffusivity used by the fitting and the estimator weights
    pub epsilon_estimator: f64,
    pub initial: ScalarFn,
    pub adapt: Option<AdaptOptions>,
    /// quadrature points per direction for estimator terms
    pub nq: usize,
}

/// Diagnostics of one step besides the estimator terms.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub n_refine: usize,
    pub n_coarsen: usize,
    pub mass: f64,
    pub mass_change: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub max_speed: f64,
    pub max_peclet: f64,
}

pub struct Simulation {
    setup: SimulationSetup,
    /// mesh of the last computed state
    pub mesh: Arc<Mesh>,
    /// mesh and auxiliary mesh for the next step
    next: Option<(Arc<Mesh>, Arc<Mesh>)>,
    pub u: DgField,
    pub operand: DgField,
    pub fitting: Arc<Fitting>,
    pub stokes: Option<StokesSolution>,
    pub t: f64,
    pub step: usize,
    pub report: EstimatorReport,
    pub indicators: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
    cache: StepCache,
    potential_cache: Option<(u64, Arc<Fitting>)>,
}

fn mass_of(u: &DgField) -> f64 {
    let mesh = u.mesh();
    let sp = u.space();
    let w = sp.apply_mass(&vec![1.0; sp.n_local()]);
    (0..mesh.n_cells())
        .map(|c| mesh.rect(c).area() * u.local(c).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

impl Simulation {
    pub fn new(setup: SimulationSetup) -> Result<Self> {
        if setup.degree == 0 {
            return Err(Error::Config("polynomial degree must be at least 1".into()));
        }
        let space = DgSpace::new(setup.degree);
        let mesh = setup.mesh.clone();
        let init = setup.initial.clone();
        let u = l2_project_cellwise(mesh.clone(), space.clone(), setup.nq.max(setup.degree + 4), |_, x| init(x, 0.0));
        let stokes = match &setup.flow {
            Flow::Coupled(c) => Some(c.solve(&u)?),
            Flow::Prescribed(_) => None,
        };
        let mut sim = Simulation {
            mesh: mesh.clone(),
            next: None,
            operand: u.clone(),
            fitting: Arc::new(Fitting::new(
                setup.alpha,
                setup.epsilon_estimator,
                Convection::zero(),
                Potential::Zero,
                setup.delta,
            )?),
            u,
            stokes,
            t: 0.0,
            step: 0,
            report: EstimatorReport::default(),
            indicators: Vec::new(),
            diagnostics: Vec::new(),
            cache: StepCache::new(),
            potential_cache: None,
            setup,
        };
        let st = sim.stokes.clone();
        let fit = sim.fitting_on(&mesh, st.as_ref())?;
        let mut pb = sim.setup.problem.clone();
        pb.convection = fit.convection.clone();
        let data = FittingData::new(fit.clone(), mesh.clone(), 0.0, sim.setup.nq)?;
        let a0 = residual_operand(&sim.u, None, 1.0, &pb.source, &fit, 0.0, sim.setup.nq)?;
        let s1 = spatial_residual(&sim.u, &a0, &pb, &data, sim.setup.nq)?.total();
        let s3 = weighted_jump_sq(&sim.u, &data, &pb.dirichlet, sim.setup.nq).sqrt();
        sim.report = EstimatorReport::new(s1, s3);
        sim.operand = a0;
        sim.fitting = fit;
        sim.indicators = vec![0.0; mesh.n_cells()];
        Ok(sim)
    }

    pub fn setup(&self) -> &SimulationSetup {
        &self.setup
    }

    /// Fitting for a mesh and the convection of the step run on it.
    fn fitting_on(&mut self, mesh: &Arc<Mesh>, stokes: Option<&StokesSolution>) -> Result<Arc<Fitting>> {
        let s = &self.setup;
        let convection = match (&s.flow, stokes) {
            (Flow::Prescribed(c), _) => c.clone(),
            (Flow::Coupled(_), Some(st)) => {
                let vs = CgSpace::new(mesh.clone(), VELOCITY_DEGREE)?;
                let vx = st.velocity[0].transfer(vs.clone());
                let vy = st.velocity[1].transfer(vs);
                Convection::Discrete(Arc::new([vx, vy]))
            }
            (Flow::Coupled(_), None) => return Err(Error::Config("coupled run without a flow field".into())),
        };
        let prescribed = matches!(s.flow, Flow::Prescribed(_));
        match &s.potential {
            PotentialSource::Given(p) => {
                if prescribed {
                    if let Some((_, f)) = &self.potential_cache {
                        return Ok(f.clone());
                    }
                }
                let f = Arc::new(Fitting::new(s.alpha, s.epsilon_estimator, convection, p.clone(), s.delta)?);
                if prescribed {
                    self.potential_cache = Some((0, f.clone()));
                }
                Ok(f)
            }
            PotentialSource::Discrete(sign) => {
                if prescribed {
                    if let Some((id, f)) = &self.potential_cache {
                        if *id == mesh.id() {
                            return Ok(f.clone());
                        }
                    }
                }
                let eta = solve_potential(mesh.clone(), &convection, VELOCITY_DEGREE.max(s.degree), *sign)?;
                let f = Arc::new(Fitting::new(
                    s.alpha,
                    s.epsilon_estimator,
                    convection,
                    Potential::Discrete(Arc::new(eta)),
                    s.delta,
                )?);
                if prescribed {
                    self.potential_cache = Some((mesh.id(), f.clone()));
                }
                Ok(f)
            }
        }
    }

    /// Largest admissible step for a Courant number `c`.
    pub fn cfl_limit(&self, c: f64) -> f64 {
        let speed = match &self.stokes {
            Some(s) => s.max_speed(),
            None => {
                let conv = match &self.setup.flow {
                    Flow::Prescribed(c) => c,
                    Flow::Coupled(_) => unreachable!("coupled runs carry a Stokes solution"),
                };
                (0..self.mesh.n_cells())
                    .map(|k| {
                        let p = Point::new(&self.mesh, k, [0.5, 0.5], self.t);
                        let b = conv.eval(&p).b;
                        b[0].hypot(b[1])
                    })
                    .fold(0.0, f64::max)
            }
        };
        let h = (0..self.mesh.n_cells()).map(|k| self.mesh.h(k)).fold(f64::INFINITY, f64::min);
        if speed > 0.0 {
            c * h / speed
        } else {
            f64::INFINITY
        }
    }

    /// Advances by `dt`, estimates, and adapts for the next step.
    pub fn advance(&mut self, dt: f64) -> Result<StepRecord> {
        let (mesh_n, aux) = self.next.take().unwrap_or_else(|| (self.mesh.clone(), self.mesh.clone()));
        let nq = self.setup.nq;
        let t_prev = self.t;
        let t_next = t_prev + dt;
        let stokes_prev = self.stokes.clone();
        let fit_next = self.fitting_on(&mesh_n, stokes_prev.as_ref())?;
        let mut pb = self.setup.problem.clone();
        pb.convection = fit_next.convection.clone();
        pb.unsteady_convection = matches!(self.setup.flow, Flow::Coupled(_)) || pb.unsteady_convection;
        let u_proj = transfer(&self.u, mesh_n.clone())?;
        let u_next = implicit_euler_step(&u_proj, &pb, t_next, dt, &mut self.cache)?;
        let data_next = FittingData::new(fit_next.clone(), mesh_n.clone(), t_next, nq)?;
        let terms: StepTerms = timestep_terms(&StepInput {
            u_prev: &self.u,
            u_prev_proj: &u_proj,
            u_next: &u_next,
            a_prev: &self.operand,
            aux: &aux,
            pb: &pb,
            fit_prev: &self.fitting,
            fit_next: &fit_next,
            data_next: &data_next,
            t_prev,
            t_next,
            nq,
        })?;
        self.step += 1;
        let rec = self
            .report
            .accumulate(
                StepInfo {
                    step: self.step,
                    t: t_next,
                    dt,
                    n_cells: mesh_n.n_cells(),
                    n_dofs: u_next.n_dofs(),
                },
                &terms,
            )
            .clone();
        if let Some(c) = &self.setup.flow_coupling() {
            self.stokes = Some(c.solve(&u_next)?);
        }
        let mass_prev = mass_of(&self.u);
        let mass = mass_of(&u_next);
        let (u_min, u_max) = u_next
            .coeffs()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let max_peclet = data_next.faces.iter().map(|f| f.peclet).fold(0.0, f64::max);
        let max_speed = data_next.cells.iter().map(|c| c.b_max).fold(0.0, f64::max);
        let mut n_refine = 0;
        let mut n_coarsen = 0;
        self.indicators = match self.setup.adapt.as_ref().map(|a| a.indicator) {
            Some(IndicatorKind::Kelly) => kelly_indicator(&u_next, pb.epsilon.max(self.setup.epsilon_estimator), nq),
            _ => local_indicator(&u_next, &u_proj, dt, &pb, &data_next, nq)?,
        };
        if let Some(ad) = &self.setup.adapt {
            if ad.every > 0 && self.step % ad.every == 0 {
                let out = adapt_step(&mesh_n, &self.indicators, &[], &ad.policy)?;
                n_refine = out.flags.refine.len();
                n_coarsen = out.flags.coarsen.len();
                self.next = Some((out.mesh, out.aux));
            }
        }
        self.diagnostics.push(StepDiagnostics {
            step: self.step,
            n_refine,
            n_coarsen,
            mass,
            mass_change: mass - mass_prev,
            u_min,
            u_max,
            max_speed,
            max_peclet,
        });
        self.mesh = mesh_n;
        self.u = u_next;
        self.operand = terms.operand;
        self.fitting = fit_next;
        self.t = t_next;
        Ok(rec)
    }
}

impl SimulationSetup {
    fn flow_coupling(&self) -> Option<Coupling> {
        match self.flow {
            Flow::Coupled(c) => Some(c),
            Flow::Prescribed(_) => None,
        }
    }
}
