//! Dense 3D scalar lattices over the unit cube.
//!
//! Values are stored x-fastest: `index = x + nx * (y + ny * z)`. Voxel `i`
//! along an axis of `n` cells covers `[i/n, (i+1)/n]` and is centred at
//! `(i + 0.5)/n`.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

/// Chunk length for deterministic parallel reductions. Fixed so the
/// summation tree does not depend on the thread count.
const REDUCE_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.nx;
        let y = (index / self.nx) % self.ny;
        let z = index / (self.nx * self.ny);
        [x, y, z]
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// World-space centre of voxel `(x, y, z)`.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        [
            (x as f32 + 0.5) / self.nx as f32,
            (y as f32 + 0.5) / self.ny as f32,
            (z as f32 + 0.5) / self.nz as f32,
        ]
    }

    /// Voxel containing `p`, clamped to the lattice.
    pub fn voxel_of(&self, p: Vec3) -> [usize; 3] {
        let n = self.as_array();
        let mut out = [0; 3];
        for k in 0..3 {
            let g = (p[k] * n[k] as f32).floor();
            out[k] = (g.max(0.0) as usize).min(n[k] - 1);
        }
        out
    }

    /// Trilinear stencil of `p`: the eight voxel indices and their weights.
    /// Coordinates are clamped to the outermost voxel centres, so the weights
    /// always sum to one.
    #[inline]
    pub fn trilinear_stencil(&self, p: Vec3) -> [(usize, f32); 8] {
        let n = self.as_array();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0f32; 3];
        for k in 0..3 {
            let g = (p[k] * n[k] as f32 - 0.5).clamp(0.0, (n[k] - 1) as f32);
            let i0 = (g.floor() as usize).min(n[k].saturating_sub(2));
            lo[k] = i0;
            hi[k] = (i0 + 1).min(n[k] - 1);
            t[k] = if hi[k] == lo[k] { 0.0 } else { g - i0 as f32 };
        }
        let mut out = [(0usize, 0f32); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let x = if bx == 1 { hi[0] } else { lo[0] };
            let y = if by == 1 { hi[1] } else { lo[1] };
            let z = if bz == 1 { hi[2] } else { lo[2] };
            let wx = if bx == 1 { t[0] } else { 1.0 - t[0] };
            let wy = if by == 1 { t[1] } else { 1.0 - t[1] };
            let wz = if bz == 1 { t[2] } else { 1.0 - t[2] };
            *slot = (self.index(x, y, z), wx * wy * wz);
        }
        out
    }
}

/// Non-negative scalar lattice spanning the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub dims: Dims,
    pub values: Vec<f32>,
}

impl ScalarField {
    pub fn zeros(dims: Dims) -> Self {
        Self::constant(dims, 0.0)
    }

    pub fn constant(dims: Dims, value: f32) -> Self {
        assert!(!dims.is_empty(), "field dims must be positive");
        assert!(value >= 0.0);
        Self {
            dims,
            values: vec![value; dims.len()],
        }
    }

    /// Wraps raw values; panics on a length mismatch.
    pub fn from_values(dims: Dims, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), dims.len(), "values.len() must equal nx*ny*nz");
        Self { dims, values }
    }

    /// Fills every voxel with `f(voxel centre)`.
    pub fn from_fn(dims: Dims, f: impl Fn(Vec3) -> f32 + Sync) -> Self {
        let values = (0..dims.len())
            .into_par_iter()
            .map(|i| {
                let [x, y, z] = dims.coords(i);
                f(dims.voxel_center(x, y, z)).max(0.0)
            })
            .collect();
        Self { dims, values }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.dims.index(x, y, z);
        self.values[i] = v;
    }

    /// Edge length of one voxel along x (fields are expected to be cubic).
    pub fn voxel_size(&self) -> f32 {
        1.0 / self.dims.nx as f32
    }

    /// Trilinear interpolation of the eight voxels around `p`, clamped to the
    /// edge voxels outside the lattice of centres.
    #[inline]
    pub fn sample_trilinear(&self, p: Vec3) -> f32 {
        self.dims
            .trilinear_stencil(p)
            .iter()
            .map(|&(i, w)| w * self.values[i])
            .sum()
    }

    /// Adds `amount` distributed over the trilinear stencil of `p`. Points
    /// outside the unit cube are dropped.
    #[inline]
    pub fn splat_trilinear(&mut self, p: Vec3, amount: f32) {
        debug_assert!(amount >= 0.0);
        if !crate::geom::inside_unit_cube(p) {
            return;
        }
        for (i, w) in self.dims.trilinear_stencil(p) {
            self.values[i] += w * amount;
        }
    }

    /// Sum of all values in double precision. Deterministic for any thread count.
    pub fn total_mass(&self) -> f64 {
        deterministic_sum(&self.values, |v| v as f64)
    }

    pub fn max_value(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn scale(&mut self, factor: f32) {
        self.values.par_iter_mut().for_each(|v| *v *= factor);
    }

    /// `passes` rounds of a normalized 3x3x3 box blur with replicated edges,
    /// applied separably. Total mass is preserved.
    pub fn box_blur(&mut self, passes: usize, scratch: &mut Vec<f32>) {
        scratch.resize(self.values.len(), 0.0);
        for _ in 0..passes {
            blur_x(&self.values, scratch, self.dims);
            blur_y(scratch, &mut self.values, self.dims);
            blur_z(&self.values, scratch, self.dims);
            std::mem::swap(&mut self.values, scratch);
        }
    }

    /// 2D slice perpendicular to `axis` (0 = x, 1 = y, 2 = z) at `index`.
    /// Returned row-major with the lower remaining axis fastest, together with
    /// its `(width, height)`.
    pub fn slice(&self, axis: usize, index: usize) -> Option<(Vec<f32>, [usize; 2])> {
        let n = self.dims.as_array();
        if axis > 2 || index >= n[axis] {
            return None;
        }
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut out = Vec::with_capacity(n[a] * n[b]);
        for j in 0..n[b] {
            for i in 0..n[a] {
                let mut c = [0; 3];
                c[axis] = index;
                c[a] = i;
                c[b] = j;
                out.push(self.get(c[0], c[1], c[2]));
            }
        }
        Some((out, [n[a], n[b]]))
    }

    /// FNV-1a over the raw bits; used to check that read-only passes stay read-only.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Sum with a fixed reduction tree, independent of rayon's scheduling.
pub(crate) fn deterministic_sum<T: Sync>(xs: &[T], f: impl Fn(T) -> f64 + Sync) -> f64
where
    T: Copy,
{
    let partials: Vec<f64> = xs
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().map(|&v| f(v)).sum::<f64>())
        .collect();
    partials.iter().sum()
}

fn blur_x(src: &[f32], dst: &mut [f32], d: Dims) {
    let nx = d.nx;
    dst.par_chunks_mut(nx)
        .zip(src.par_chunks(nx))
        .for_each(|(out, row)| {
            for x in 0..nx {
                let l = row[x.saturating_sub(1)];
                let r = row[(x + 1).min(nx - 1)];
                out[x] = (l + row[x] + r) * (1.0 / 3.0);
            }
        });
}

fn blur_y(src: &[f32], dst: &mut [f32], d: Dims) {
    let (nx, ny) = (d.nx, d.ny);
    dst.par_chunks_mut(nx * ny)
        .zip(src.par_chunks(nx * ny))
        .for_each(|(out, slab)| {
            for y in 0..ny {
                let ym = y.saturating_sub(1) * nx;
                let yp = (y + 1).min(ny - 1) * nx;
                let y0 = y * nx;
                for x in 0..nx {
                    out[y0 + x] = (slab[ym + x] + slab[y0 + x] + slab[yp + x]) * (1.0 / 3.0);
                }
            }
        });
}

fn blur_z(src: &[f32], dst: &mut [f32], d: Dims) {
    let plane = d.nx * d.ny;
    let nz = d.nz;
    dst.par_chunks_mut(plane).enumerate().for_each(|(z, out)| {
        let zm = z.saturating_sub(1) * plane;
        let zp = (z + 1).min(nz - 1) * plane;
        let z0 = z * plane;
        for i in 0..plane {
            out[i] = (src[zm + i] + src[z0 + i] + src[zp + i]) * (1.0 / 3.0);
        }
    });
}

/// Fixed-point accumulation buffer for concurrent splatting.
///
/// Amounts are quantized to multiples of 2^-32 and summed with atomic integer
/// adds. Integer addition is associative, so the result is bit-identical for
/// any thread count or interleaving.
pub struct SplatAccumulator {
    dims: Dims,
    cells: Vec<AtomicU64>,
}

const FIXED_SCALE: f64 = 4_294_967_296.0;

impl SplatAccumulator {
    pub fn new(dims: Dims) -> Self {
        let cells = (0..dims.len()).map(|_| AtomicU64::new(0)).collect();
        Self { dims, cells }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Thread-safe trilinear splat. The eight quantized shares sum exactly to
    /// the quantized `amount`. Points outside the unit cube are dropped.
    #[inline]
    pub fn splat(&self, p: Vec3, amount: f32) {
        if amount <= 0.0 || !crate::geom::inside_unit_cube(p) {
            return;
        }
        let total = (amount as f64 * FIXED_SCALE).round() as u64;
        let stencil = self.dims.trilinear_stencil(p);
        let mut assigned = 0u64;
        let mut heaviest = 0;
        for (c, &(i, w)) in stencil.iter().enumerate() {
            if w > stencil[heaviest].1 {
                heaviest = c;
            }
            let q = (w as f64 * total as f64).floor() as u64;
            if q > 0 {
                assigned += q;
                self.cells[i].fetch_add(q, Ordering::Relaxed);
            }
        }
        let rem = total.saturating_sub(assigned);
        if rem > 0 {
            self.cells[stencil[heaviest].0].fetch_add(rem, Ordering::Relaxed);
        }
    }

    /// Adds the accumulated values into `out` and resets the buffer.
    pub fn drain_add(&mut self, out: &mut [f32]) {
        assert_eq!(out.len(), self.cells.len());
        out.par_iter_mut()
            .zip(self.cells.par_iter_mut())
            .for_each(|(o, c)| {
                let v = std::mem::take(c.get_mut());
                if v != 0 {
                    *o += (v as f64 / FIXED_SCALE) as f32;
                }
            });
    }

    /// Overwrites `out` with the accumulated values and resets the buffer.
    pub fn drain_into(&mut self, out: &mut [f32]) {
        assert_eq!(out.len(), self.cells.len());
        out.par_iter_mut()
            .zip(self.cells.par_iter_mut())
            .for_each(|(o, c)| {
                let v = std::mem::take(c.get_mut());
                *o = (v as f64 / FIXED_SCALE) as f32;
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn center(d: Dims, x: usize, y: usize, z: usize) -> Vec3 {
        d.voxel_center(x, y, z)
    }

    #[test]
    fn constant_field_samples_constant() {
        let f = ScalarField::constant(Dims::cube(8), 5.0);
        for p in [[0.0, 0.0, 0.0], [0.31, 0.77, 0.5], [1.0, 1.0, 1.0], [0.999, 0.001, 0.4]] {
            assert_relative_eq!(f.sample_trilinear(p), 5.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn voxel_center_returns_voxel_value() {
        let d = Dims::new(5, 6, 7);
        let f = ScalarField::from_values(d, (0..d.len()).map(|i| i as f32).collect());
        for (x, y, z) in [(0, 0, 0), (2, 3, 4), (4, 5, 6), (1, 0, 6)] {
            assert_relative_eq!(f.sample_trilinear(center(d, x, y, z)), f.get(x, y, z), epsilon = 1e-3);
        }
    }

    #[test]
    fn midpoint_between_zero_and_one_is_half() {
        let d = Dims::cube(4);
        let mut f = ScalarField::zeros(d);
        f.set(2, 1, 1, 1.0);
        // Halfway between centres of (1,1,1) and (2,1,1): weights 0.5 / 0.5.
        let a = center(d, 1, 1, 1);
        let b = center(d, 2, 1, 1);
        let mid = [(a[0] + b[0]) / 2.0, a[1], a[2]];
        assert_relative_eq!(f.sample_trilinear(mid), 0.5, epsilon = 1e-6);
    }

    #[test]
    fn splat_at_center_touches_one_voxel() {
        let d = Dims::cube(6);
        let mut f = ScalarField::zeros(d);
        f.splat_trilinear(center(d, 3, 2, 4), 1.0);
        for (i, &v) in f.values.iter().enumerate() {
            if i == d.index(3, 2, 4) {
                assert_relative_eq!(v, 1.0, epsilon = 1e-6);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn splat_at_axis_midpoint_halves() {
        let d = Dims::cube(6);
        let mut f = ScalarField::zeros(d);
        let a = center(d, 2, 2, 2);
        let b = center(d, 2, 3, 2);
        f.splat_trilinear([a[0], (a[1] + b[1]) / 2.0, a[2]], 1.0);
        assert_relative_eq!(f.get(2, 2, 2), 0.5, epsilon = 1e-6);
        assert_relative_eq!(f.get(2, 3, 2), 0.5, epsilon = 1e-6);
        assert_relative_eq!(f.total_mass(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn splat_outside_is_dropped() {
        let mut f = ScalarField::zeros(Dims::cube(4));
        f.splat_trilinear([1.2, 0.5, 0.5], 3.0);
        f.splat_trilinear([0.5, -0.01, 0.5], 3.0);
        assert_eq!(f.total_mass(), 0.0);
    }

    #[test]
    fn splat_mass_matches_summation_oracle() {
        let mut f = ScalarField::zeros(Dims::cube(16));
        let mut rng = crate::rng::RngStreams::new(9).stream(0, 0);
        let mut expected = 0.0f64;
        for _ in 0..100 {
            let p = crate::rng::unit_cube_point(&mut rng);
            let a: f32 = rng.random_range(0.0..4.0);
            let before = f.total_mass();
            f.splat_trilinear(p, a);
            assert_relative_eq!(f.total_mass() - before, a as f64, epsilon = 1e-5);
            expected += a as f64;
        }
        assert_relative_eq!(f.total_mass(), expected, max_relative = 1e-6);
    }

    #[test]
    fn million_splats_conserve_mass() {
        let acc_dims = Dims::cube(32);
        let mut acc = SplatAccumulator::new(acc_dims);
        let mut rng = crate::rng::RngStreams::new(3).stream(0, 0);
        let mut expected = 0.0f64;
        for _ in 0..1_000_000 {
            let p = crate::rng::unit_cube_point(&mut rng);
            acc.splat(p, 0.1);
            expected += ((0.1f32 as f64) * FIXED_SCALE).round() / FIXED_SCALE;
        }
        let mut out = vec![0.0f32; acc_dims.len()];
        acc.drain_into(&mut out);
        let got = deterministic_sum(&out, |v| v as f64);
        assert!(((got - expected) / expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn accumulator_is_order_independent() {
        let d = Dims::cube(8);
        let pts: Vec<Vec3> = {
            let mut rng = crate::rng::RngStreams::new(11).stream(0, 0);
            (0..500).map(|_| crate::rng::unit_cube_point(&mut rng)).collect()
        };
        let mut a = SplatAccumulator::new(d);
        let mut b = SplatAccumulator::new(d);
        for p in &pts {
            a.splat(*p, 0.37);
        }
        pts.par_iter().rev().for_each(|p| b.splat(*p, 0.37));
        let mut fa = vec![0.0; d.len()];
        let mut fb = vec![0.0; d.len()];
        a.drain_into(&mut fa);
        b.drain_into(&mut fb);
        assert_eq!(fa, fb);
        // drained buffers are reset
        a.drain_into(&mut fa);
        assert!(fa.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blur_preserves_mass_and_constants() {
        let d = Dims::new(7, 5, 6);
        let mut f = ScalarField::constant(d, 2.0);
        let mut scratch = Vec::new();
        f.box_blur(2, &mut scratch);
        assert!(f.values.iter().all(|&v| (v - 2.0).abs() < 1e-5));

        let mut g = ScalarField::zeros(d);
        g.set(0, 0, 0, 27.0);
        g.set(3, 2, 3, 5.0);
        g.box_blur(3, &mut scratch);
        assert_relative_eq!(g.total_mass(), 32.0, epsilon = 1e-4);
        assert!(g.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn blur_spreads_to_26_neighbours() {
        let d = Dims::cube(5);
        let mut f = ScalarField::zeros(d);
        f.set(2, 2, 2, 27.0);
        f.box_blur(1, &mut Vec::new());
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    assert_relative_eq!(f.get(x, y, z), 1.0, epsilon = 1e-5);
                }
            }
        }
        assert_eq!(f.get(0, 2, 2), 0.0);
    }

    #[test]
    fn slice_shape() {
        let d = Dims::new(4, 5, 6);
        let f = ScalarField::from_values(d, (0..d.len()).map(|i| i as f32).collect());
        let (s, wh) = f.slice(2, 3).unwrap();
        assert_eq!(wh, [4, 5]);
        assert_eq!(s.len(), 20);
        assert_eq!(s[0], f.get(0, 0, 3));
        assert_eq!(s[5], f.get(1, 1, 3));
        let (s, wh) = f.slice(0, 1).unwrap();
        assert_eq!(wh, [5, 6]);
        assert_eq!(s[6], f.get(1, 1, 1));
        assert!(f.slice(1, 5).is_none());
    }

    proptest! {
        #[test]
        fn sample_is_convex_combination(
            vals in proptest::collection::vec(0.0f32..10.0, 64),
            p in proptest::array::uniform3(-0.2f32..1.2),
        ) {
            let f = ScalarField::from_values(Dims::cube(4), vals.clone());
            let s = f.sample_trilinear(p);
            let stencil = f.dims.trilinear_stencil(p);
            let wsum: f32 = stencil.iter().map(|&(_, w)| w).sum();
            prop_assert!((wsum - 1.0).abs() < 1e-5);
            prop_assert!(stencil.iter().all(|&(_, w)| w >= 0.0));
            let lo = stencil.iter().map(|&(i, _)| vals[i]).fold(f32::INFINITY, f32::min);
            let hi = stencil.iter().map(|&(i, _)| vals[i]).fold(0.0, f32::max);
            prop_assert!(s >= lo - 1e-4 && s <= hi + 1e-4);
        }

        #[test]
        fn unit_splat_dominates_far_splats(
            p in proptest::array::uniform3(0.0f32..=1.0),
            q in proptest::array::uniform3(0.0f32..=1.0),
        ) {
            let d = Dims::cube(16);
            let diag = 3f32.sqrt() / 16.0;
            prop_assume!(crate::geom::dist(p, q) > 2.0 * diag);
            let mut near = ScalarField::zeros(d);
            near.splat_trilinear(p, 1.0);
            let mut far = ScalarField::zeros(d);
            far.splat_trilinear(q, 1.0);
            prop_assert!(near.sample_trilinear(p) >= far.sample_trilinear(p));
        }
    }
}
