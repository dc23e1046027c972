//! The Monte Carlo Physarum Machine: an agent swarm that grows a transport
//! network over the point cloud.
//!
//! Two lattices drive the simulation. The *deposit* field is the attractor:
//! every step the data points re-emit into it, agents add a little of their
//! own, and the whole field decays and diffuses. The *trace* field records
//! where agents are; averaged over the final steps it is the fitted network.
//!
//! Each step runs, in order: sense (forward probe plus one probe inside the
//! sensing cone), steer (switch to the cone probe with probability
//! `p1^s / (p0^s + p1^s)`), move (respawn at a data point on leaving the
//! cube), deposit, data re-emission, then decay and blur of the deposit.

use std::f32::consts::FRAC_PI_2;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::field::{deterministic_sum, Dims, ScalarField, SplatAccumulator};
use crate::geom::{self, Vec3};
use crate::rng::{self, RngStreams};

const SORT_INTERVAL: usize = 4;

/// Below this final convergence value a fit counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpawnMode {
    /// Spawn and respawn at uniformly chosen data points.
    #[default]
    DataPoints,
    /// Spawn and respawn uniformly in the unit cube.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McpmParams {
    pub n_agents: usize,
    pub n_steps: usize,
    pub grid_res: Dims,
    pub sense_distance: f32,
    pub sense_angle: f32,
    pub move_distance: f32,
    /// Mass emitted by each data point per step.
    pub data_deposit: f32,
    /// Mass emitted by each agent per step.
    pub agent_deposit: f32,
    /// Fraction of the deposit removed per step.
    pub decay: f32,
    pub diffusion_passes: usize,
    pub sharpness: f32,
    /// Number of final steps averaged into the trace.
    pub trace_window: usize,
    pub spawn: SpawnMode,
}

impl Default for McpmParams {
    fn default() -> Self {
        Self {
            n_agents: 1_000_000,
            n_steps: 600,
            grid_res: Dims::cube(256),
            sense_distance: 0.005,
            sense_angle: 0.35,
            move_distance: 0.0025,
            data_deposit: 10.0,
            agent_deposit: 0.1,
            decay: 0.1,
            diffusion_passes: 1,
            sharpness: 2.0,
            trace_window: 100,
            spawn: SpawnMode::DataPoints,
        }
    }
}

impl McpmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1".into());
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay must be in (0, 1), got {}", self.decay));
        }
        if !(self.move_distance > 0.0 && self.sense_distance > self.move_distance) {
            return bad(format!(
                "need sense_distance > move_distance > 0, got {} and {}",
                self.sense_distance, self.move_distance
            ));
        }
        if !(self.sense_angle > 0.0 && self.sense_angle < FRAC_PI_2) {
            return bad(format!("sense_angle must be in (0, pi/2), got {}", self.sense_angle));
        }
        if self.grid_res.is_empty() {
            return bad("grid_res must be positive on every axis".into());
        }
        if self.trace_window == 0 {
            return bad("trace_window must be at least 1".into());
        }
        if !(self.sharpness >= 0.0) || !(self.data_deposit >= 0.0) || !(self.agent_deposit >= 0.0) {
            return bad("sharpness and deposit amounts must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

#[derive(Debug, Clone)]
pub struct McpmResult {
    /// Agent density averaged over the final `trace_window` steps.
    pub trace: ScalarField,
    pub deposit: ScalarField,
    pub steps_run: usize,
    /// Per-step L1 change of the windowed trace, relative to its total mass.
    pub convergence_series: Vec<f64>,
    pub trace_window: usize,
}

/// Probability of switching to the cone probe: `p1^s / (p0^s + p1^s)`,
/// one half when both samples vanish.
#[inline]
pub fn mutation_probability(p0: f32, p1: f32, sharpness: f32) -> f32 {
    let (a, b) = if sharpness == 2.0 {
        (p0 * p0, p1 * p1)
    } else if sharpness == 1.0 {
        (p0, p1)
    } else {
        (p0.powf(sharpness), p1.powf(sharpness))
    };
    let sum = a + b;
    if sum > 0.0 {
        b / sum
    } else {
        0.5
    }
}

/// Initial deposit field: `data_deposit` splatted trilinearly at every token.
pub fn splat_data(cloud: &PointCloud, params: &McpmParams) -> Result<ScalarField> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut field = ScalarField::zeros(params.grid_res);
    for &p in &cloud.positions {
        field.splat_trilinear(p, params.data_deposit);
    }
    Ok(field)
}

/// Runs the full fit: `n_steps` steps from agents spawned at data points.
pub fn fit_trace(cloud: &PointCloud, params: &McpmParams, streams: RngStreams) -> Result<McpmResult> {
    params.validate()?;
    let mut sim = Simulation::new(cloud, params.clone(), streams)?;
    sim.run(params.n_steps);
    Ok(sim.into_result())
}

/// Final value of the convergence series, or `None` before the trace window
/// has filled.
pub fn convergence_metric(result: &McpmResult) -> Option<f64> {
    if result.steps_run < result.trace_window {
        return None;
    }
    result.convergence_series.last().copied()
}

/// Stepwise MCPM state. [`fit_trace`] is the usual entry point; this type
/// exposes the per-step loop for inspection and testing.
pub struct Simulation {
    params: McpmParams,
    streams: RngStreams,
    spawn_points: Vec<Vec3>,
    agents: Vec<AgentState>,
    deposit: ScalarField,
    source: ScalarField,
    trace_acc: SplatAccumulator,
    step_density: Vec<f32>,
    windowed: Vec<f32>,
    window_sum: Vec<f32>,
    window_count: usize,
    scratch: Vec<f32>,
    step: usize,
    convergence: Vec<f64>,
}

impl Simulation {
    /// Sets up the data source field and spawns agents. Only structural
    /// parameters are checked here; see [`McpmParams::validate`].
    pub fn new(cloud: &PointCloud, params: McpmParams, streams: RngStreams) -> Result<Self> {
        let source = splat_data(cloud, &params)?;
        let spawn_points = match params.spawn {
            SpawnMode::DataPoints => cloud.positions.clone(),
            SpawnMode::Uniform => Vec::new(),
        };
        Self::with_source(source, spawn_points, params, streams)
    }

    /// Simulation over an explicit per-step source field. Agents spawn and
    /// respawn at `spawn_points`, or uniformly in the cube when it is empty.
    pub fn with_source(
        source: ScalarField,
        spawn_points: Vec<Vec3>,
        params: McpmParams,
        streams: RngStreams,
    ) -> Result<Self> {
        if params.n_agents == 0 || params.trace_window == 0 || params.grid_res.is_empty() {
            return Err(Error::InvalidParam("n_agents, trace_window and grid_res must be positive".into()));
        }
        if source.dims != params.grid_res {
            return Err(Error::Dimension("source field does not match grid_res".into()));
        }
        let dims = params.grid_res;
        let agents = (0..params.n_agents)
            .into_par_iter()
            .map(|i| {
                let mut r = streams.stream(i as u64, 0);
                spawn(&mut r, &spawn_points)
            })
            .collect();
        Ok(Self {
            deposit: source.clone(),
            source,
            spawn_points,
            agents,
            trace_acc: SplatAccumulator::new(dims),
            step_density: vec![0.0; dims.len()],
            windowed: vec![0.0; dims.len()],
            window_sum: vec![0.0; dims.len()],
            window_count: 0,
            scratch: Vec::new(),
            step: 0,
            convergence: Vec::new(),
            params,
            streams,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn deposit(&self) -> &ScalarField {
        &self.deposit
    }

    /// Agent density of the most recent step.
    pub fn step_density(&self) -> &[f32] {
        &self.step_density
    }

    pub fn steps_run(&self) -> usize {
        self.step
    }

    pub fn convergence_series(&self) -> &[f64] {
        &self.convergence
    }

    pub fn run(&mut self, steps: usize) {
        let total = self.step + steps;
        for _ in 0..steps {
            self.step_with_horizon(total);
        }
    }

    /// One full step; the trace window is anchored at `params.n_steps`.
    pub fn step(&mut self) {
        let horizon = self.params.n_steps.max(self.step + 1);
        self.step_with_horizon(horizon);
    }

    fn step_with_horizon(&mut self, horizon: usize) {
        if self.step % SORT_INTERVAL == 0 {
            self.sort_agents();
        }
        let p = &self.params;
        let deposit = &self.deposit;
        let spawn_points = &self.spawn_points;
        let trace_acc = &self.trace_acc;
        let streams = self.streams;
        let block = self.step as u64 + 1;

        self.agents.par_iter_mut().enumerate().for_each(|(i, agent)| {
            let mut r = streams.stream(i as u64, block);
            let pos = agent.position;
            let dir = agent.direction;

            let p0 = deposit.sample_trilinear(geom::madd(pos, dir, p.sense_distance));
            let probe = rng::cone_uniform_solid(&mut r, dir, p.sense_angle);
            let p1 = deposit.sample_trilinear(geom::madd(pos, probe, p.sense_distance));
            let new_dir = if r.random::<f32>() < mutation_probability(p0, p1, p.sharpness) {
                probe
            } else {
                dir
            };

            let moved = geom::madd(pos, new_dir, p.move_distance);
            *agent = if geom::inside_unit_cube(moved) {
                AgentState {
                    position: moved,
                    direction: new_dir,
                }
            } else {
                spawn(&mut r, spawn_points)
            };

            trace_acc.splat(agent.position, 1.0);
        });

        // Every agent emits the same amount, so its deposit is the scaled
        // agent density. Then data re-emission, decay and diffusion.
        self.trace_acc.drain_into(&mut self.step_density);
        let keep = 1.0 - self.params.decay;
        let emit = self.params.agent_deposit;
        self.deposit
            .values
            .par_iter_mut()
            .zip(self.source.values.par_iter())
            .zip(self.step_density.par_iter())
            .for_each(|((d, &s), &a)| *d = (*d + a * emit + s) * keep);
        self.deposit
            .box_blur(self.params.diffusion_passes, &mut self.scratch);

        self.update_trace(horizon);
        self.step += 1;
    }

    /// Orders agents by the 4-voxel brick they occupy so that neighbouring
    /// agents touch the same cache lines. The key is a pure function of the
    /// state, so the order is the same for any thread count.
    fn sort_agents(&mut self) {
        let d = self.params.grid_res;
        let b = [d.nx.div_ceil(4), d.ny.div_ceil(4)];
        self.agents.par_sort_by_cached_key(|a| {
            let [x, y, z] = d.voxel_of(a.position);
            ((z / 4) * b[1] + y / 4) * b[0] + x / 4
        });
    }

    /// Updates the running window average used for convergence tracking and
    /// the exact average over the final window used for the result.
    fn update_trace(&mut self, horizon: usize) {
        let w = self.params.trace_window;
        let k = (self.step + 1).min(w) as f32;
        let change: Vec<f32> = {
            let density = &self.step_density;
            self.windowed
                .par_iter_mut()
                .zip(density.par_iter())
                .map(|(a, &d)| {
                    let delta = (d - *a) / k;
                    *a += delta;
                    delta.abs()
                })
                .collect()
        };
        let l1 = deterministic_sum(&change, |v| v as f64);
        let mass = deterministic_sum(&self.windowed, |v| v as f64);
        self.convergence.push(if mass > 0.0 { l1 / mass } else { 0.0 });

        if self.step + w >= horizon {
            self.window_sum
                .par_iter_mut()
                .zip(self.step_density.par_iter())
                .for_each(|(s, &d)| *s += d);
            self.window_count += 1;
        }
    }

    pub fn into_result(self) -> McpmResult {
        let dims = self.params.grid_res;
        let trace = if self.window_count > 0 {
            let inv = 1.0 / self.window_count as f32;
            ScalarField::from_values(dims, self.window_sum.iter().map(|&s| s * inv).collect())
        } else {
            ScalarField::zeros(dims)
        };
        McpmResult {
            trace,
            deposit: self.deposit,
            steps_run: self.step,
            convergence_series: self.convergence,
            trace_window: self.params.trace_window,
        }
    }
}

fn spawn<R: Rng + ?Sized>(r: &mut R, points: &[Vec3]) -> AgentState {
    let position = if points.is_empty() {
        rng::unit_cube_point(r)
    } else {
        points[r.random_range(0..points.len())]
    };
    AgentState {
        position,
        direction: rng::unit_vector(r),
    }
}
