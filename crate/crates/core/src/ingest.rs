//! Dataset loading, PCA projection to 3D and unit-cube normalization.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{bounds, PointCloud, Token, TokenId};
use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Tokens with their native high-dimensional vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub tokens: Vec<Token>,
    pub vectors: Vec<f32>,
    pub dim: usize,
}

impl EmbeddingSet {
    pub fn new(tokens: Vec<Token>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("vector dimension must be at least 1".into()));
        }
        if tokens.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if vectors.len() != tokens.len() * dim {
            return Err(Error::Dimension(format!(
                "{} values for {} tokens of dimension {dim}",
                vectors.len(),
                tokens.len()
            )));
        }
        Ok(Self { tokens, vectors, dim })
    }

    /// Builds a set from rows with synthetic surfaces `t0`, `t1`, ...
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Dimension(format!("row {bad} has {} components, expected {dim}", rows[bad].len())));
        }
        let tokens = (0..rows.len()).map(|i| Token::new(i, format!("t{i}"))).collect();
        Self::new(tokens, rows.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    #[inline]
    pub fn row(&self, id: TokenId) -> &[f32] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn find_surface(&self, surface: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t.surface == surface)
    }
}

impl From<&PointCloud> for EmbeddingSet {
    fn from(cloud: &PointCloud) -> Self {
        Self {
            tokens: cloud.tokens.clone(),
            vectors: cloud.positions.iter().flatten().copied().collect(),
            dim: 3,
        }
    }
}

/// Reads the word2vec text layout: a `N D` header line followed by `N` lines of
/// `surface v1 ... vD`.
pub fn load_word2vec_text(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (n, dim) = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut it = line.split_whitespace();
            let n = it.next().and_then(|s| s.parse::<usize>().ok());
            let d = it.next().and_then(|s| s.parse::<usize>().ok());
            match (n, d, it.next()) {
                (Some(n), Some(d), None) if d > 0 => (n, d),
                _ => return Err(Error::parse(path, 1, "expected header \"N D\" with D >= 1")),
            }
        }
        None => return Err(Error::parse(path, 1, "empty file")),
    };

    let mut tokens = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n * dim);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut it = line.split_whitespace();
        let Some(surface) = it.next() else {
            continue;
        };
        if tokens.len() == n {
            return Err(Error::parse(path, lineno, format!("more rows than the {n} declared in the header")));
        }
        let start = vectors.len();
        for s in it {
            let v: f32 = s
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric component {s:?}")))?;
            vectors.push(v);
        }
        let got = vectors.len() - start;
        if got != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("{got} components, expected {dim}"),
            ));
        }
        tokens.push(Token::new(tokens.len(), surface));
    }
    if tokens.len() != n {
        return Err(Error::parse(
            path,
            tokens.len() + 2,
            format!("header declares {n} rows but file has {}", tokens.len()),
        ));
    }
    EmbeddingSet::new(tokens, vectors, dim)
}

/// Reads a tab-separated `surface x y z [meta]` file with a header row. The
/// cloud is returned unnormalized with `bbox_original` set to its tight bounds.
pub fn load_points_3d(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let cols: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
    let col = |name: &str| cols.iter().position(|c| c.trim() == name);
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(["surface", "x", "y", "z"]) {
        *slot = col(name).ok_or_else(|| Error::parse(path, 1, format!("missing column {name:?}")))?;
    }
    let meta_col = col("meta");

    let mut tokens = Vec::new();
    let mut positions = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let get = |c: usize| {
            fields
                .get(c)
                .copied()
                .ok_or_else(|| Error::parse(path, lineno, format!("row has {} columns", fields.len())))
        };
        let surface = get(idx[0])?;
        if surface.is_empty() {
            return Err(Error::parse(path, lineno, "empty surface"));
        }
        let mut p = [0f32; 3];
        for k in 0..3 {
            let s = get(idx[k + 1])?;
            let v: f32 = s
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric coordinate {s:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite coordinate {s:?}")));
            }
            p[k] = v;
        }
        let meta = meta_col
            .and_then(|c| fields.get(c))
            .filter(|m| !m.is_empty())
            .map(|m| m.to_string());
        tokens.push(Token {
            id: tokens.len(),
            surface: surface.to_string(),
            meta,
        });
        positions.push(p);
    }
    Ok(PointCloud::new(tokens, positions))
}

/// Writes the format read by [`load_points_3d`]. A `meta` column is emitted
/// when any token carries metadata.
pub fn save_points_3d(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let with_meta = cloud.tokens.iter().any(|t| t.meta.is_some());
    let io = |e| Error::io(path, e);
    if with_meta {
        writeln!(w, "surface\tx\ty\tz\tmeta").map_err(io)?;
    } else {
        writeln!(w, "surface\tx\ty\tz").map_err(io)?;
    }
    for (t, p) in cloud.tokens.iter().zip(&cloud.positions) {
        write!(w, "{}\t{}\t{}\t{}", t.surface, p[0], p[1], p[2]).map_err(io)?;
        if with_meta {
            write!(w, "\t{}", t.meta.as_deref().unwrap_or("")).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone)]
pub struct PcaProjection {
    pub cloud: PointCloud,
    /// `out_dim` orthonormal directions, each of length `D`. Degenerate
    /// trailing directions are all zeros.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each direction, non-increasing.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
    /// Set when the covariance has rank below `out_dim`.
    pub degenerate: bool,
}

/// Projects centred vectors onto their top `out_dim` principal directions,
/// found by eigendecomposition of the sample covariance.
pub fn pca_project(set: &EmbeddingSet, out_dim: usize) -> Result<PcaProjection> {
    let (n, d) = (set.len(), set.dim);
    if out_dim == 0 || out_dim > 3 {
        return Err(Error::InvalidParam(format!("out_dim must be 1..=3, got {out_dim}")));
    }
    if n <= out_dim {
        return Err(Error::InvalidParam(format!("need more than {out_dim} tokens for PCA, got {n}")));
    }

    let mut mean = vec![0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(set.row(i)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let cov = covariance(set, &mean);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank_tol = 1e-10 * top.max(f64::MIN_POSITIVE);
    let mut components = Vec::with_capacity(out_dim);
    let mut explained_variance = Vec::with_capacity(out_dim);
    let mut degenerate = false;
    for &k in order.iter().take(out_dim) {
        let lambda = eig.eigenvalues[k];
        if top <= 0.0 || lambda <= rank_tol {
            degenerate = true;
            components.push(vec![0.0; d]);
            explained_variance.push(0.0);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        // Sign convention: largest-magnitude entry positive.
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(lambda);
    }
    if degenerate {
        log::warn!("PCA: covariance rank below {out_dim}; trailing components zero-padded");
    }

    let positions: Vec<Vec3> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = set.row(i);
            let mut p = [0f32; 3];
            for (c, comp) in components.iter().enumerate() {
                let s: f64 = row
                    .iter()
                    .zip(&mean)
                    .zip(comp)
                    .map(|((&x, &m), &w)| (x as f64 - m) * w)
                    .sum();
                p[c] = s as f32;
            }
            p
        })
        .collect();

    Ok(PcaProjection {
        cloud: PointCloud::new(set.tokens.clone(), positions),
        components,
        explained_variance,
        mean,
        degenerate,
    })
}

/// Sample covariance (denominator `n - 1`). Rows are accumulated in fixed
/// blocks summed in order, so the result is reproducible.
fn covariance(set: &EmbeddingSet, mean: &[f64]) -> DMatrix<f64> {
    const BLOCK: usize = 512;
    let (n, d) = (set.len(), set.dim);
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let partials: Vec<DMatrix<f64>> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + BLOCK).min(n);
            let x = DMatrix::from_fn(e - s, d, |r, c| set.row(s + r)[c] as f64 - mean[c]);
            x.transpose() * &x
        })
        .collect();
    let mut cov = DMatrix::zeros(d, d);
    for p in partials {
        cov += p;
    }
    cov / (n as f64 - 1.0)
}

/// Maps positions into `[margin, 1 - margin]^3` with one uniform scale
/// (aspect ratio preserved), centring the cloud on every axis.
pub fn normalize_to_unit_cube(cloud: &PointCloud, margin: f32) -> Result<PointCloud> {
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::InvalidParam(format!("margin must be in [0, 0.5), got {margin}")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let [lo, hi] = bounds(&cloud.positions);
    let extent = (0..3).map(|k| hi[k] as f64 - lo[k] as f64).fold(0.0, f64::max);
    if extent <= 0.0 {
        return Err(Error::Coincident);
    }
    let t_lo = margin as f64;
    let t_hi = (1.0 - margin) as f64;
    let s = (t_hi - t_lo) / extent;
    let mid = (t_lo + t_hi) / 2.0;
    let c: [f64; 3] = std::array::from_fn(|k| (lo[k] as f64 + hi[k] as f64) / 2.0);
    let positions = cloud
        .positions
        .iter()
        .map(|p| std::array::from_fn(|k| ((mid + (p[k] as f64 - c[k]) * s) as f32).clamp(margin, 1.0 - margin)))
        .collect();
    Ok(PointCloud {
        tokens: cloud.tokens.clone(),
        positions,
        bbox_original: [lo, hi],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_word2vec_file() {
        let f = write_tmp("2 3\na 1 0 0\nb 0 1 0\n");
        let set = load_word2vec_text(f.path()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.dim, 3);
        assert_eq!(set.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(set.row(1), &[0.0, 1.0, 0.0]);
        assert_eq!(set.tokens[1].surface, "b");
        assert_eq!(set.tokens[1].id, 1);
    }

    #[test]
    fn pos_suffixes_preserved() {
        let f = write_tmp("2 2\nwind_NOUN 0.5 1\nwind_VERB -1 2e-3\n");
        let set = load_word2vec_text(f.path()).unwrap();
        assert_eq!(set.tokens[0].surface, "wind_NOUN");
        assert_eq!(set.find_surface("wind_VERB"), Some(1));
    }

    #[test]
    fn short_row_reports_line() {
        let f = write_tmp("1 3\na 1 0");
        match load_word2vec_text(f.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("2 components, expected 3"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_count_mismatch() {
        let f = write_tmp("1 2\na 1 x\n");
        assert!(matches!(load_word2vec_text(f.path()), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("3 2\na 1 2\nb 3 4\n");
        assert!(matches!(load_word2vec_text(f.path()), Err(Error::Parse { .. })));
        let f = write_tmp("1 2\na 1 2\nb 3 4\n");
        assert!(matches!(load_word2vec_text(f.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn points_bbox_and_nan() {
        let f = write_tmp("surface\tx\ty\tz\na\t0\t0\t0\nb\t1\t1\t1\n");
        let c = load_points_3d(f.path()).unwrap();
        assert_eq!(c.bbox_original, [[0.0; 3], [1.0; 3]]);

        let f = write_tmp("surface\tx\ty\tz\na\t0\t0\t0\nb\t1\t1\tnan\n");
        match load_points_3d(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let f = write_tmp("surface\tx\ty\na\t0\t0\n");
        assert!(matches!(load_points_3d(f.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn points_round_trip() {
        let mut cloud = PointCloud::from_positions(vec![[0.1, 0.2, 0.3], [0.123_456_79, 7.5, -2.0], [1e-7, 0.0, 3.0]]);
        cloud.tokens[1].meta = Some("He ends by saying that".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.tsv");
        save_points_3d(&cloud, &p).unwrap();
        let back = load_points_3d(&p).unwrap();
        assert_eq!(back.tokens, cloud.tokens);
        for (a, b) in back.positions.iter().zip(&cloud.positions) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::from_positions(vec![[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let n = normalize_to_unit_cube(&c, 0.05).unwrap();
        assert_relative_eq!(n.positions[0][0], 0.05, epsilon = 1e-7);
        assert_relative_eq!(n.positions[1][0], 0.95, epsilon = 1e-7);
        for p in &n.positions {
            assert_relative_eq!(p[1], 0.5, epsilon = 1e-7);
            assert_relative_eq!(p[2], 0.5, epsilon = 1e-7);
        }
        assert_eq!(n.bbox_original, [[0.0; 3], [10.0, 0.0, 0.0]]);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = crate::rng::RngStreams::new(4).stream(0, 0);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| {
                let p = crate::rng::unit_cube_point(&mut rng);
                [p[0] * 40.0 - 3.0, p[1] * 5.0, p[2] * 12.0 + 100.0]
            })
            .collect();
        let once = normalize_to_unit_cube(&PointCloud::from_positions(pts), 0.05).unwrap();
        let twice = normalize_to_unit_cube(&once, 0.05).unwrap();
        for (a, b) in once.positions.iter().zip(&twice.positions) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn coincident_points_rejected() {
        let c = PointCloud::from_positions(vec![[1.0, 2.0, 3.0]; 4]);
        assert!(matches!(normalize_to_unit_cube(&c, 0.05), Err(Error::Coincident)));
    }

    #[test]
    fn pca_identical_points_degenerate() {
        let set = EmbeddingSet::from_rows(&vec![vec![1.0, 2.0, 3.0, 4.0]; 10]).unwrap();
        let p = pca_project(&set, 3).unwrap();
        assert!(p.degenerate);
        assert!(p.cloud.positions.iter().all(|q| q == &[0.0; 3]));
    }

    #[test]
    fn pca_high_dim_to_3d() {
        let mut rng = crate::rng::RngStreams::new(8).stream(0, 0);
        use rand::Rng;
        let rows: Vec<Vec<f32>> = (0..40).map(|_| (0..768).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let set = EmbeddingSet::from_rows(&rows).unwrap();
        let p = pca_project(&set, 3).unwrap();
        assert_eq!(p.cloud.len(), 40);
        assert!(!p.degenerate);
        assert!(p.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = p.components[a].iter().zip(&p.components[b]).map(|(x, y)| x * y).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_needs_more_tokens_than_dims() {
        let set = EmbeddingSet::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
        assert!(pca_project(&set, 3).is_err());
    }
}
