//! Trace-guided exploration with read-only probe agents.
//!
//! A probe step has two phases. *Sensing*: sample the trace at `p0` straight
//! ahead and at `p1` along a direction drawn from the sensing cone. *Steering*:
//! turn with probability `(p1 + eps) / (p0 + p1 + 2 eps)`; a turn rotates the
//! heading part of the way toward the sensed direction. The probe then moves
//! and reflects off the cube faces. Probes never write to the trace.
//!
//! Tokens passed within `discovery_radius` of a probe vertex are counted, and
//! the normalized counts rank tokens by how reachable they are from the seed.

use std::f32::consts::{FRAC_PI_2, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{PointCloud, TokenId};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geom::{self, Vec3};
use crate::mcpm::AgentState;
use crate::ranking::{Metric, RankEntry, Ranking};
use crate::rng::{self, RngStreams};
use crate::spatial::PointIndex;

/// Recommended discovery radius range, as fractions of the domain size.
pub const DISCOVERY_RADIUS_MIN: f32 = 1.0 / 400.0;
pub const DISCOVERY_RADIUS_MAX: f32 = 1.0 / 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// One event per (probe, vertex) inside the discovery ball.
    #[default]
    PerStep,
    /// At most one event per probe and token.
    PerAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Start exactly at the query position.
    #[default]
    Exact,
    /// Start at the highest-trace voxel centre within `discovery_radius`.
    SnapToTraceMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeParams {
    pub n_probes: usize,
    pub n_steps: usize,
    pub sense_distance: f32,
    pub sense_angle: f32,
    pub move_distance: f32,
    /// In world units; the domain is the unit cube.
    pub discovery_radius: f32,
    pub trace_floor: f32,
    pub count_mode: CountMode,
    pub seed_mode: SeedMode,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            n_probes: 900,
            n_steps: 500,
            sense_distance: 0.01,
            sense_angle: 0.5,
            move_distance: 0.004,
            discovery_radius: 1.0 / 300.0,
            trace_floor: 1e-9,
            count_mode: CountMode::PerStep,
            seed_mode: SeedMode::Exact,
        }
    }
}

impl ProbeParams {
    /// Hard constraints are errors; a discovery radius outside the
    /// recommended range only logs a warning.
    pub fn validate(&self) -> Result<()> {
        if self.n_probes == 0 {
            return Err(Error::InvalidParam("n_probes must be at least 1".into()));
        }
        if !(self.sense_angle > 0.0 && self.sense_angle < FRAC_PI_2) {
            return Err(Error::InvalidParam(format!(
                "probe sense_angle must be in (0, pi/2), got {}",
                self.sense_angle
            )));
        }
        if !(self.sense_distance > 0.0) || !(self.move_distance >= 0.0) {
            return Err(Error::InvalidParam("probe sense_distance must be positive, move_distance non-negative".into()));
        }
        if !(self.discovery_radius > 0.0) || !(self.trace_floor >= 0.0) {
            return Err(Error::InvalidParam("discovery_radius must be positive, trace_floor non-negative".into()));
        }
        if !self.discovery_radius_in_range() {
            log::warn!(
                "discovery_radius {} is outside the recommended [1/400, 1/200] of the domain",
                self.discovery_radius
            );
        }
        Ok(())
    }

    pub fn discovery_radius_in_range(&self) -> bool {
        (DISCOVERY_RADIUS_MIN..=DISCOVERY_RADIUS_MAX).contains(&self.discovery_radius)
    }
}

/// Probe walks from one seed. Each polyline has `n_steps + 1` vertices, the
/// first being the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub seed: Vec3,
    pub n_probes: usize,
    pub n_steps: usize,
    points: Vec<Vec3>,
    directions: Vec<Vec3>,
}

impl TrajectorySet {
    pub fn polyline(&self, probe: usize) -> &[Vec3] {
        let n = self.n_steps + 1;
        &self.points[probe * n..(probe + 1) * n]
    }

    /// Heading used for each move of `probe`.
    pub fn step_directions(&self, probe: usize) -> &[Vec3] {
        let n = self.n_steps;
        &self.directions[probe * n..(probe + 1) * n]
    }

    pub fn polylines(&self) -> impl Iterator<Item = &[Vec3]> {
        (0..self.n_probes).map(move |i| self.polyline(i))
    }

    pub fn all_points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn all_directions(&self) -> &[Vec3] {
        &self.directions
    }

    /// Every `stride`-th polyline, keeping at most `max` of them.
    pub fn decimated(&self, max: usize) -> Vec<Vec<Vec3>> {
        if max == 0 || self.n_probes == 0 {
            return Vec::new();
        }
        let stride = self.n_probes.div_ceil(max);
        (0..self.n_probes)
            .step_by(stride)
            .take(max)
            .map(|i| self.polyline(i).to_vec())
            .collect()
    }
}

/// Per-token discovery counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryCounts {
    pub counts: Vec<u64>,
    /// `counts / sum(counts)` with the excluded token left at zero.
    pub normalized: Vec<f64>,
    pub excluded: Option<TokenId>,
}

impl DiscoveryCounts {
    fn from_counts(counts: Vec<u64>, excluded: Option<TokenId>) -> Self {
        let total: u64 = counts
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != excluded)
            .map(|(_, &c)| c)
            .sum();
        let normalized = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if Some(i) == excluded || total == 0 {
                    0.0
                } else {
                    c as f64 / total as f64
                }
            })
            .collect();
        Self {
            counts,
            normalized,
            excluded,
        }
    }

    pub fn discovered(&self) -> Vec<TokenId> {
        self.counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Turn probability of the steering phase.
#[inline]
pub fn turn_probability(p0: f32, p1: f32, floor: f32) -> f32 {
    let denom = p0 + p1 + 2.0 * floor;
    if denom > 0.0 {
        (p1 + floor) / denom
    } else {
        0.5
    }
}

/// One sensing + steering + move step.
pub fn probe_step<R: Rng + ?Sized>(agent: AgentState, trace: &ScalarField, params: &ProbeParams, rng: &mut R) -> AgentState {
    step_inner(agent, trace, params, rng).0
}

/// Returns the new state and the heading used for the move.
#[inline]
fn step_inner<R: Rng + ?Sized>(agent: AgentState, trace: &ScalarField, params: &ProbeParams, rng: &mut R) -> (AgentState, Vec3) {
    let AgentState { position, mut direction } = agent;
    let p0 = trace.sample_trilinear(geom::madd(position, direction, params.sense_distance));
    let theta = rng.random::<f32>() * params.sense_angle;
    let phi = rng.random::<f32>() * TAU;
    let sensed = geom::direction_in_cone(direction, theta, phi);
    let p1 = trace.sample_trilinear(geom::madd(position, sensed, params.sense_distance));

    if rng.random::<f32>() < turn_probability(p0, p1, params.trace_floor) {
        // Capped at the cone offset so the turn never overshoots the sensed
        // direction.
        let turn = (rng.random::<f32>() * params.sense_angle).min(theta);
        direction = geom::rotate_toward(direction, sensed, turn);
    }
    let heading = direction;
    let (position, direction) = reflect(geom::madd(position, direction, params.move_distance), direction);
    (AgentState { position, direction }, heading)
}

/// Mirrors a point that left the unit cube back inside, flipping the matching
/// heading components.
fn reflect(mut p: Vec3, mut d: Vec3) -> (Vec3, Vec3) {
    for k in 0..3 {
        if p[k] < 0.0 {
            p[k] = -p[k];
            d[k] = -d[k];
        } else if p[k] > 1.0 {
            p[k] = 2.0 - p[k];
            d[k] = -d[k];
        }
        p[k] = p[k].clamp(0.0, 1.0);
    }
    (p, d)
}

/// `n_probes` independent walks of `n_steps` from `seed`. Probe `i` draws from
/// stream `i` of `streams`.
pub fn run_probes(trace: &ScalarField, seed: Vec3, params: &ProbeParams, streams: RngStreams) -> TrajectorySet {
    let n = params.n_steps;
    let walks: Vec<(Vec<Vec3>, Vec<Vec3>)> = (0..params.n_probes)
        .into_par_iter()
        .map(|i| {
            let mut r = streams.stream(i as u64, 0);
            let mut agent = AgentState {
                position: seed,
                direction: rng::unit_vector(&mut r),
            };
            let mut pts = Vec::with_capacity(n + 1);
            let mut dirs = Vec::with_capacity(n);
            pts.push(seed);
            for _ in 0..n {
                let (next, heading) = step_inner(agent, trace, params, &mut r);
                agent = next;
                pts.push(agent.position);
                dirs.push(heading);
            }
            (pts, dirs)
        })
        .collect();
    let mut points = Vec::with_capacity(params.n_probes * (n + 1));
    let mut directions = Vec::with_capacity(params.n_probes * n);
    for (p, d) in walks {
        points.extend(p);
        directions.extend(d);
    }
    TrajectorySet {
        seed,
        n_probes: params.n_probes,
        n_steps: n,
        points,
        directions,
    }
}

/// Counts discovery events; the token nearest the seed (within
/// `discovery_radius`) is excluded from the normalized scores.
pub fn discover(traj: &TrajectorySet, cloud: &PointCloud, params: &ProbeParams) -> DiscoveryCounts {
    let index = PointIndex::new(&cloud.positions, params.discovery_radius);
    let excluded = index
        .nearest_within(traj.seed, params.discovery_radius)
        .map(|i| i as TokenId);
    count_with_index(traj, cloud.len(), &index, params, excluded)
}

/// Like [`discover`] with an explicit excluded token.
pub fn discover_excluding(
    traj: &TrajectorySet,
    cloud: &PointCloud,
    params: &ProbeParams,
    excluded: Option<TokenId>,
) -> DiscoveryCounts {
    let index = PointIndex::new(&cloud.positions, params.discovery_radius);
    count_with_index(traj, cloud.len(), &index, params, excluded)
}

fn count_with_index(
    traj: &TrajectorySet,
    n_tokens: usize,
    index: &PointIndex,
    params: &ProbeParams,
    excluded: Option<TokenId>,
) -> DiscoveryCounts {
    let radius = params.discovery_radius;
    let hits: Vec<Vec<u32>> = (0..traj.n_probes)
        .into_par_iter()
        .map(|i| {
            let mut found = Vec::new();
            for &p in traj.polyline(i) {
                index.for_each_within(p, radius, |id| found.push(id));
            }
            if params.count_mode == CountMode::PerAgent {
                found.sort_unstable();
                found.dedup();
            }
            found
        })
        .collect();
    let mut counts = vec![0u64; n_tokens];
    for h in hits {
        for id in h {
            counts[id as usize] += 1;
        }
    }
    DiscoveryCounts::from_counts(counts, excluded)
}

/// Result of [`explore`]: the ranking plus the raw material behind it.
#[derive(Debug, Clone)]
pub struct Exploration {
    pub ranking: Ranking,
    /// Normalized scores averaged over repeats, indexed by token id.
    pub scores: Vec<f64>,
    /// Counts of the first repeat.
    pub counts: DiscoveryCounts,
    /// Walks of the first repeat.
    pub trajectories: TrajectorySet,
    pub seed: Vec3,
}

/// Runs probes from `seed`, `n_repeats` times with independent streams, and
/// ranks tokens by their averaged normalized discovery counts.
pub fn explore(
    trace: &ScalarField,
    cloud: &PointCloud,
    seed: Vec3,
    excluded: Option<TokenId>,
    params: &ProbeParams,
    streams: RngStreams,
    n_repeats: usize,
) -> Result<Exploration> {
    params.validate()?;
    if n_repeats == 0 {
        return Err(Error::InvalidParam("n_repeats must be at least 1".into()));
    }
    if !geom::inside_unit_cube(seed) {
        return Err(Error::InvalidParam(format!("seed {seed:?} is outside the unit cube")));
    }
    let seed = match params.seed_mode {
        SeedMode::Exact => seed,
        SeedMode::SnapToTraceMax => snap_to_trace_max(trace, seed, params.discovery_radius),
    };
    let index = PointIndex::new(&cloud.positions, params.discovery_radius);
    let mut scores = vec![0.0f64; cloud.len()];
    let mut first = None;
    for rep in 0..n_repeats {
        let s = if rep == 0 { streams } else { streams.fork(rep as u64) };
        let traj = run_probes(trace, seed, params, s);
        let counts = count_with_index(&traj, cloud.len(), &index, params, excluded);
        for (acc, v) in scores.iter_mut().zip(&counts.normalized) {
            *acc += v;
        }
        if first.is_none() {
            first = Some((counts, traj));
        }
    }
    scores.iter_mut().for_each(|s| *s /= n_repeats as f64);
    let entries = scores
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s > 0.0)
        .map(|(token, &score)| RankEntry { token, score })
        .collect();
    let ranking = Ranking::from_scores(excluded, Metric::Mcpm, entries);
    let (counts, trajectories) = first.expect("n_repeats >= 1");
    Ok(Exploration {
        ranking,
        scores,
        counts,
        trajectories,
        seed,
    })
}

/// Ranks tokens by reachability from `query` along the trace.
pub fn mcpm_similarity(
    trace: &ScalarField,
    cloud: &PointCloud,
    query: TokenId,
    params: &ProbeParams,
    streams: RngStreams,
    n_repeats: usize,
) -> Result<Ranking> {
    let seed = cloud.position(query).ok_or(Error::UnknownToken(query))?;
    Ok(explore(trace, cloud, seed, Some(query), params, streams, n_repeats)?.ranking)
}

/// Like [`mcpm_similarity`] from a free position; the token nearest the
/// position within `discovery_radius`, if any, plays the query.
pub fn mcpm_similarity_at(
    trace: &ScalarField,
    cloud: &PointCloud,
    seed: Vec3,
    params: &ProbeParams,
    streams: RngStreams,
    n_repeats: usize,
) -> Result<Exploration> {
    let index = PointIndex::new(&cloud.positions, params.discovery_radius);
    let query = index
        .nearest_within(seed, params.discovery_radius)
        .map(|i| i as TokenId);
    explore(trace, cloud, seed, query, params, streams, n_repeats)
}

fn snap_to_trace_max(trace: &ScalarField, p: Vec3, radius: f32) -> Vec3 {
    let d = trace.dims;
    let [cx, cy, cz] = d.voxel_of(p);
    let reach = (radius * d.nx.max(d.ny).max(d.nz) as f32).ceil() as isize;
    let mut best = (trace.get(cx, cy, cz), d.voxel_center(cx, cy, cz));
    for dz in -reach..=reach {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y, z) = (cx as isize + dx, cy as isize + dy, cz as isize + dz);
                if x < 0 || y < 0 || z < 0 || x >= d.nx as isize || y >= d.ny as isize || z >= d.nz as isize {
                    continue;
                }
                let (x, y, z) = (x as usize, y as usize, z as usize);
                let c = d.voxel_center(x, y, z);
                if geom::dist(c, p) <= radius && trace.get(x, y, z) > best.0 {
                    best = (trace.get(x, y, z), c);
                }
            }
        }
    }
    best.1
}
