use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::field::{Dims, ScalarField};
use crate::geom;

/// Share of total trace mass kept by the automatic threshold.
pub const DEFAULT_MASS_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Value(f32),
    /// Smallest tau whose supra-threshold voxels hold at least this share of
    /// the total mass.
    Auto { mass_fraction: f64 },
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Auto {
            mass_fraction: DEFAULT_MASS_FRACTION,
        }
    }
}

/// 26-connected components of `{voxel : trace >= tau}`. Label 0 marks voxels
/// below the threshold; components are numbered from 1 by descending mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentLabels {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub n_components: usize,
    /// Trace mass of component `k + 1` at index `k`.
    pub component_mass: Vec<f64>,
    /// Component voxel counts, same indexing.
    pub component_size: Vec<usize>,
    pub tau: f32,
}

impl ComponentLabels {
    pub fn supra_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    pub voxel_labels: ComponentLabels,
    /// Component of each token, `None` when no labelled voxel is in reach.
    pub token_labels: Vec<Option<u32>>,
}

impl ClusterLabeling {
    pub fn n_components(&self) -> usize {
        self.voxel_labels.n_components
    }

    pub fn component_mass(&self) -> &[f64] {
        &self.voxel_labels.component_mass
    }

    pub fn unassigned(&self) -> usize {
        self.token_labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Value above which the top `mass_fraction` of total mass lies. Returns
/// infinity for an all-zero field.
pub fn auto_threshold(trace: &ScalarField, mass_fraction: f64) -> f32 {
    let total = trace.total_mass();
    if total <= 0.0 {
        return f32::INFINITY;
    }
    let mut vals: Vec<f32> = trace.values.iter().copied().filter(|&v| v > 0.0).collect();
    vals.par_sort_unstable_by(|a, b| b.total_cmp(a));
    let target = mass_fraction.clamp(0.0, 1.0) * total;
    let mut acc = 0.0f64;
    for &v in &vals {
        acc += v as f64;
        if acc >= target {
            return v;
        }
    }
    *vals.last().unwrap_or(&f32::INFINITY)
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Labels the 26-connected components of the voxels at or above the threshold.
pub fn threshold_components(trace: &ScalarField, threshold: Threshold) -> ComponentLabels {
    let tau = match threshold {
        Threshold::Value(t) => t,
        Threshold::Auto { mass_fraction } => auto_threshold(trace, mass_fraction),
    };
    let d = trace.dims;
    let n = d.len();
    let on = |i: usize| trace.values[i] >= tau;
    let mut uf = UnionFind::new(n);

    // Scan order x-fastest; only the 13 already-visited neighbours are joined.
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = d.index(x, y, z);
                if !on(i) {
                    continue;
                }
                for dz in -1isize..=0 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if (dz, dy, dx) >= (0, 0, 0) {
                                continue;
                            }
                            let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                            if nx < 0 || ny < 0 || nz < 0 || nx >= d.nx as isize || ny >= d.ny as isize {
                                continue;
                            }
                            let j = d.index(nx as usize, ny as usize, nz as usize);
                            if on(j) {
                                uf.union(i as u32, j as u32);
                            }
                        }
                    }
                }
            }
        }
    }

    // Per-root mass, size and first voxel, then order by descending mass.
    let mut root_slot = vec![u32::MAX; n];
    let mut comps: Vec<(f64, usize, usize)> = Vec::new();
    let mut roots = vec![0u32; n];
    for i in 0..n {
        if !on(i) {
            continue;
        }
        let r = uf.find(i as u32) as usize;
        roots[i] = r as u32;
        if root_slot[r] == u32::MAX {
            root_slot[r] = comps.len() as u32;
            comps.push((0.0, 0, i));
        }
        let c = &mut comps[root_slot[r] as usize];
        c.0 += trace.values[i] as f64;
        c.1 += 1;
    }
    let mut order: Vec<usize> = (0..comps.len()).collect();
    order.sort_by(|&a, &b| comps[b].0.total_cmp(&comps[a].0).then(comps[a].2.cmp(&comps[b].2)));
    let mut label_of_slot = vec![0u32; comps.len()];
    for (rank, &slot) in order.iter().enumerate() {
        label_of_slot[slot] = rank as u32 + 1;
    }
    let labels = (0..n)
        .map(|i| {
            if on(i) {
                label_of_slot[root_slot[roots[i] as usize] as usize]
            } else {
                0
            }
        })
        .collect();
    ComponentLabels {
        dims: d,
        labels,
        n_components: comps.len(),
        component_mass: order.iter().map(|&s| comps[s].0).collect(),
        component_size: order.iter().map(|&s| comps[s].1).collect(),
        tau,
    }
}

/// Gives each token the label of the nearest labelled voxel centre within
/// `assign_radius` voxels.
pub fn assign_clusters(cloud: &PointCloud, labels: ComponentLabels, assign_radius: f32) -> ClusterLabeling {
    let d = labels.dims;
    let voxel = 1.0 / d.nx.max(d.ny).max(d.nz) as f32;
    let radius = assign_radius * voxel;
    let reach = assign_radius.ceil() as isize + 1;
    let token_labels = cloud
        .positions
        .par_iter()
        .map(|&p| {
            let [cx, cy, cz] = d.voxel_of(p);
            let mut best: Option<(f32, usize)> = None;
            for dz in -reach..=reach {
                for dy in -reach..=reach {
                    for dx in -reach..=reach {
                        let (x, y, z) = (cx as isize + dx, cy as isize + dy, cz as isize + dz);
                        if x < 0 || y < 0 || z < 0 || x >= d.nx as isize || y >= d.ny as isize || z >= d.nz as isize {
                            continue;
                        }
                        let (x, y, z) = (x as usize, y as usize, z as usize);
                        let i = d.index(x, y, z);
                        if labels.labels[i] == 0 {
                            continue;
                        }
                        let dist = geom::dist(p, d.voxel_center(x, y, z));
                        if dist > radius {
                            continue;
                        }
                        match best {
                            Some((bd, bi)) if dist > bd || (dist == bd && i > bi) => {}
                            _ => best = Some((dist, i)),
                        }
                    }
                }
            }
            best.map(|(_, i)| labels.labels[i])
        })
        .collect();
    ClusterLabeling {
        voxel_labels: labels,
        token_labels,
    }
}
