use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::probe::TrajectorySet;
use crate::rng::RngStreams;

pub const DEFAULT_BINS: usize = 36;

/// Orientation summary of a set of step directions, measured in the plane of
/// the two dominant axes of their scatter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionStats {
    /// Azimuth histogram weighted by in-plane length, sums to 1.
    pub histogram: Vec<f64>,
    /// Smoothed peaks above twice the uniform level.
    pub n_modes: usize,
    /// Mass of the strongest antipodal bin pair over twice the tallest bin.
    pub bimodality: f64,
    /// Mean resultant length of the doubled angles (`R2`).
    pub axial_concentration: f64,
    /// `1 - R1`, with `R1` the weighted mean resultant length.
    pub circular_variance: f64,
    /// Dominant axes, strongest first.
    pub axes: [[f64; 3]; 2],
    /// Scatter-matrix eigenvalues, descending, normalised to sum 1.
    pub eigenvalues: [f64; 3],
    pub n_samples: usize,
}

pub fn direction_stats(traj: &TrajectorySet, bins: usize) -> Result<DirectionStats> {
    direction_stats_from(traj.all_directions(), bins)
}

pub fn direction_stats_from(dirs: &[Vec3], bins: usize) -> Result<DirectionStats> {
    if bins < 2 || bins % 2 != 0 {
        return Err(Error::InvalidParam(format!("bins must be even and >= 2, got {bins}")));
    }
    if dirs.is_empty() {
        return Err(Error::InvalidParam("no step directions".into()));
    }
    let mut m = Matrix3::<f64>::zeros();
    for d in dirs {
        let v = Vector3::new(d[0] as f64, d[1] as f64, d[2] as f64);
        m += v * v.transpose();
    }
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> [f64; 3] {
        let c = eig.eigenvectors.column(order[k]);
        let mut a = [c[0], c[1], c[2]];
        let big = a.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            a.iter_mut().for_each(|x| *x = -*x);
        }
        a
    };
    let (e1, e2) = (axis(0), axis(1));
    let ev_sum: f64 = eig.eigenvalues.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let eigenvalues = [0, 1, 2].map(|k| eig.eigenvalues[order[k]].max(0.0) / ev_sum);

    let mut hist = vec![0.0f64; bins];
    let (mut cx, mut cy, mut wsum) = (0.0f64, 0.0f64, 0.0f64);
    let (mut ax, mut ay) = (0.0f64, 0.0f64);
    for d in dirs {
        let d = [d[0] as f64, d[1] as f64, d[2] as f64];
        let x = d[0] * e1[0] + d[1] * e1[1] + d[2] * e1[2];
        let y = d[0] * e2[0] + d[1] * e2[1] + d[2] * e2[2];
        let w = x.hypot(y);
        if w == 0.0 {
            continue;
        }
        let phi = y.atan2(x).rem_euclid(TAU);
        let b = ((phi / TAU * bins as f64) as usize).min(bins - 1);
        hist[b] += w;
        cx += x;
        cy += y;
        // w * (cos 2phi, sin 2phi)
        ax += (x * x - y * y) / w;
        ay += 2.0 * x * y / w;
        wsum += w;
    }
    if wsum > 0.0 {
        hist.iter_mut().for_each(|h| *h /= wsum);
    } else {
        hist.iter_mut().for_each(|h| *h = 1.0 / bins as f64);
    }
    let (r1, r2) = if wsum > 0.0 { (cx.hypot(cy) / wsum, ax.hypot(ay) / wsum) } else { (0.0, 0.0) };

    let half = bins / 2;
    let max_bin = hist.iter().copied().fold(0.0, f64::max);
    let pair = (0..half).map(|i| hist[i] + hist[i + half]).fold(0.0, f64::max);
    let bimodality = if max_bin > 0.0 { pair / (2.0 * max_bin) } else { 0.0 };

    let smooth: Vec<f64> = (0..bins)
        .map(|i| (hist[(i + bins - 1) % bins] + 2.0 * hist[i] + hist[(i + 1) % bins]) / 4.0)
        .collect();
    let level = 2.0 / bins as f64;
    let n_modes = (0..bins)
        .filter(|&i| {
            let (l, r) = (smooth[(i + bins - 1) % bins], smooth[(i + 1) % bins]);
            smooth[i] > level && smooth[i] > l && smooth[i] >= r
        })
        .count();

    Ok(DirectionStats {
        histogram: hist,
        n_modes,
        bimodality,
        axial_concentration: r2,
        circular_variance: 1.0 - r1,
        axes: [e1, e2],
        eigenvalues,
        n_samples: dirs.len(),
    })
}

/// Uniformly random rotation matrix (Shoemake's quaternion construction).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(r: &[[f64; 3]; 3], d: Vec3) -> Vec3 {
    let d = [d[0] as f64, d[1] as f64, d[2] as f64];
    [0, 1, 2].map(|i| (r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2]) as f32)
}

/// Bimodality scores of `n_null` surrogates in which every probe's directions
/// are turned by its own random rotation. This keeps the within-walk
/// persistence but destroys any shared orientation.
pub fn isotropy_null(traj: &TrajectorySet, bins: usize, n_null: usize, streams: RngStreams) -> Result<Vec<f64>> {
    (0..n_null)
        .map(|k| {
            let mut dirs = Vec::with_capacity(traj.all_directions().len());
            for p in 0..traj.n_probes {
                let mut rng = streams.stream(p as u64, k as u64);
                let r = random_rotation(&mut rng);
                dirs.extend(traj.step_directions(p).iter().map(|&d| rotate(&r, d)));
            }
            direction_stats_from(&dirs, bins).map(|s| s.bimodality)
        })
        .collect()
}

/// Share of null scores at least as large as `observed`, with the usual +1
/// correction.
pub fn null_p_value(observed: f64, null: &[f64]) -> f64 {
    let above = null.iter().filter(|&&v| v >= observed).count();
    (above + 1) as f64 / (null.len() + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::unit_vector;

    fn line_dirs(n: usize) -> Vec<Vec3> {
        (0..n).map(|i| if i % 2 == 0 { [1.0, 0.0, 0.0] } else { [-1.0, 0.0, 0.0] }).collect()
    }

    #[test]
    fn back_and_forth_is_bimodal() {
        let mut dirs = line_dirs(1000);
        // small off-axis spread to define the second axis
        dirs.extend((0..10).map(|_| [0.0, 1.0, 0.0]));
        let s = direction_stats_from(&dirs, 36).unwrap();
        assert!(s.bimodality > 0.99, "{}", s.bimodality);
        assert!(s.axial_concentration > 0.97);
        assert_eq!(s.n_modes, 2);
        assert!(s.circular_variance > 0.95);
        assert!((s.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.axes[0][0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_heading_is_unimodal() {
        let mut dirs = vec![[0.0, 0.0, 1.0f32]; 500];
        dirs.extend((0..5).map(|_| [1.0, 0.0, 0.0]));
        let s = direction_stats_from(&dirs, 36).unwrap();
        assert_eq!(s.n_modes, 1);
        assert!(s.circular_variance < 0.05);
        assert!((s.bimodality - 0.5).abs() < 0.02);
        assert!(s.axial_concentration > 0.95);
    }

    #[test]
    fn isotropic_has_flat_histogram() {
        let mut rng = RngStreams::new(3).stream(0, 0);
        let dirs: Vec<Vec3> = (0..200_000).map(|_| unit_vector(&mut rng)).collect();
        let s = direction_stats_from(&dirs, 36).unwrap();
        let u = 1.0 / 36.0;
        assert!(s.histogram.iter().all(|&h| (h - u).abs() < 0.2 * u));
        assert_eq!(s.n_modes, 0);
        assert!(s.circular_variance > 0.95);
        assert!(s.axial_concentration < 0.05);
    }

    #[test]
    fn crossing_lines_are_not_bimodal() {
        let mut dirs = line_dirs(1000);
        dirs.extend((0..1000).map(|i| if i % 2 == 0 { [0.0, 1.0, 0.0] } else { [0.0, -1.0, 0.0] }));
        let s = direction_stats_from(&dirs, 36).unwrap();
        assert!(s.axial_concentration < 0.01);
        assert_eq!(s.n_modes, 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(direction_stats_from(&[], 36).is_err());
        assert!(direction_stats_from(&[[1.0, 0.0, 0.0]], 35).is_err());
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = RngStreams::new(9).stream(0, 0);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn p_value_counts() {
        assert_eq!(null_p_value(0.9, &[0.1, 0.2, 0.95]), 0.5);
        assert_eq!(null_p_value(1.0, &[0.1; 99]), 0.01);
    }
}
