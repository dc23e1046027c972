use std::collections::{HashMap, VecDeque};

use mcpm_core::analysis::{assign_clusters, threshold_components, Threshold};
use mcpm_core::mcpm::fit_trace;
use mcpm_core::{Dims, McpmParams, PointCloud, RngStreams, ScalarField};
use rand::Rng;

/// Breadth-first flood fill over 26-neighbourhoods; labels in discovery order.
fn flood_fill(d: Dims, on: &[bool]) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; on.len()];
    let mut next = 0;
    for start in 0..on.len() {
        if !on[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let [x, y, z] = d.coords(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if nx < 0 || ny < 0 || nz < 0 || nx >= d.nx as i64 || ny >= d.ny as i64 || nz >= d.nz as i64 {
                            continue;
                        }
                        let j = d.index(nx as usize, ny as usize, nz as usize);
                        if on[j] && labels[j] == 0 {
                            labels[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// True when the two labelings induce the same partition of the voxels.
fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        (x == 0) == (y == 0) && *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x
    })
}

#[test]
fn labels_match_flood_fill_on_random_fields() {
    let d = Dims::cube(32);
    let streams = RngStreams::new(21);
    for k in 0..100u64 {
        let mut r = streams.stream(k, 0);
        // Densities around the percolation range give many components.
        let density = 0.05 + 0.25 * (k as f64 / 100.0);
        let values: Vec<f32> = (0..d.len()).map(|_| if r.random::<f64>() < density { 1.0 } else { 0.0 }).collect();
        let on: Vec<bool> = values.iter().map(|&v| v >= 0.5).collect();
        let field = ScalarField::from_values(d, values);
        let got = threshold_components(&field, Threshold::Value(0.5));
        let (want, n) = flood_fill(d, &on);
        assert_eq!(got.n_components, n, "field {k}");
        assert!(same_partition(&got.labels, &want), "field {k}");
        assert!(got.component_mass.windows(2).all(|w| w[0] >= w[1]));
    }
}

fn normal<R: Rng>(r: &mut R) -> f32 {
    let u: f32 = r.random::<f32>().max(1e-12);
    (-2.0 * u.ln()).sqrt() * (std::f32::consts::TAU * r.random::<f32>()).cos()
}

#[test]
fn single_blob_is_one_cluster() {
    let mut r = RngStreams::new(3).stream(0, 0);
    let centre = [0.5f32, 0.45, 0.55];
    let sigma = 0.02;
    let pts: Vec<[f32; 3]> = (0..300).map(|_| centre.map(|c| c + sigma * normal(&mut r))).collect();
    let cloud = PointCloud::from_positions(pts.clone());
    let params = McpmParams {
        n_agents: 50_000,
        n_steps: 200,
        grid_res: Dims::cube(64),
        sense_distance: 0.02,
        move_distance: 0.01,
        trace_window: 50,
        ..Default::default()
    };
    let res = fit_trace(&cloud, &params, RngStreams::new(1)).unwrap();
    let c = assign_clusters(&cloud, threshold_components(&res.trace, Threshold::default()), 2.0);
    assert_eq!(c.n_components(), 1);
    for (p, l) in pts.iter().zip(&c.token_labels) {
        let dist = ((0..3).map(|k| (p[k] - centre[k]).powi(2)).sum::<f32>()).sqrt();
        if dist <= 3.0 * sigma {
            assert_eq!(*l, Some(1), "token at {dist} unassigned");
        }
    }
}

#[test]
fn assigned_tokens_lie_near_their_label() {
    let d = Dims::cube(32);
    let mut r = RngStreams::new(5).stream(0, 0);
    let field = ScalarField::from_values(d, (0..d.len()).map(|_| r.random::<f32>()).collect());
    let labels = threshold_components(&field, Threshold::Value(0.97));
    let cloud = PointCloud::from_positions((0..500).map(|_| [r.random(), r.random(), r.random()]).collect());
    let c = assign_clusters(&cloud, labels, 2.0);
    let reach = 2.0 / 32.0;
    for (p, l) in cloud.positions.iter().zip(&c.token_labels) {
        if let Some(l) = l {
            let ok = (0..d.len()).any(|i| {
                let [x, y, z] = d.coords(i);
                c.voxel_labels.labels[i] == *l && mcpm_core::geom::dist(*p, d.voxel_center(x, y, z)) <= reach
            });
            assert!(ok);
        }
    }
    assert!(c.unassigned() > 0);
}
