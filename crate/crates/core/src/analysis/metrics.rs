use rayon::prelude::*;

use crate::cloud::TokenId;
use crate::error::{Error, Result};
use crate::ingest::EmbeddingSet;
use crate::ranking::{Metric, RankEntry, Ranking};

/// Tokens by ascending Euclidean distance to `query` in the native space.
pub fn euclidean_ranking(set: &EmbeddingSet, query: TokenId) -> Result<Ranking> {
    if query >= set.len() {
        return Err(Error::UnknownToken(query));
    }
    let q = set.row(query);
    let entries = (0..set.len())
        .into_par_iter()
        .filter(|&i| i != query)
        .map(|i| {
            let d2: f64 = set
                .row(i)
                .iter()
                .zip(q)
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            RankEntry {
                token: i,
                score: d2.sqrt(),
            }
        })
        .collect();
    Ok(Ranking::from_scores(Some(query), Metric::Euclidean, entries))
}

/// Tokens by descending cosine similarity to `query`. Zero vectors rank last
/// with a score of negative infinity.
pub fn cosine_ranking(set: &EmbeddingSet, query: TokenId) -> Result<Ranking> {
    if query >= set.len() {
        return Err(Error::UnknownToken(query));
    }
    let norm = |v: &[f32]| v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    let q = set.row(query);
    let qn = norm(q);
    if qn == 0.0 {
        return Err(Error::ZeroNormQuery(query));
    }
    let entries = (0..set.len())
        .into_par_iter()
        .filter(|&i| i != query)
        .map(|i| {
            let v = set.row(i);
            let vn = norm(v);
            let score = if vn == 0.0 {
                f64::NEG_INFINITY
            } else {
                let dot: f64 = v.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum();
                dot / (vn * qn)
            };
            RankEntry { token: i, score }
        })
        .collect();
    Ok(Ranking::from_scores(Some(query), Metric::Cosine, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn duplicate_vector_ranks_first() {
        let set = EmbeddingSet::from_rows(&[vec![1.0, 2.0], vec![3.0, 3.0], vec![1.0, 2.0]]).unwrap();
        let r = euclidean_ranking(&set, 0).unwrap();
        assert_eq!(r.entries[0].token, 2);
        assert_eq!(r.entries[0].score, 0.0);
    }

    #[test]
    fn one_dimensional_order() {
        let set = EmbeddingSet::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(euclidean_ranking(&set, 0).unwrap().tokens(), vec![1, 2]);
    }

    #[test]
    fn euclidean_matches_brute_force_sort() {
        let mut r = crate::rng::RngStreams::new(12).stream(0, 0);
        use rand::Rng;
        let rows: Vec<Vec<f32>> = (0..50).map(|_| (0..10).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let set = EmbeddingSet::from_rows(&rows).unwrap();
        for q in [0, 17, 49] {
            let mut brute: Vec<(f64, usize)> = (0..50)
                .filter(|&i| i != q)
                .map(|i| {
                    let d: f64 = rows[i].iter().zip(&rows[q]).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                    (d, i)
                })
                .collect();
            brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = brute.into_iter().map(|(_, i)| i).collect();
            assert_eq!(euclidean_ranking(&set, q).unwrap().tokens(), want);
        }
    }

    #[test]
    fn cosine_basics() {
        let set = EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let r = cosine_ranking(&set, 0).unwrap();
        assert_eq!(r.tokens(), vec![1, 2, 3]);
        assert_relative_eq!(r.entries[0].score, 1.0);
        assert_relative_eq!(r.entries[1].score, 0.0);
        assert_eq!(r.entries[2].score, f64::NEG_INFINITY);
        assert!(matches!(cosine_ranking(&set, 3), Err(Error::ZeroNormQuery(3))));
        assert!(matches!(cosine_ranking(&set, 9), Err(Error::UnknownToken(9))));
    }

    proptest! {
        #[test]
        fn euclidean_order_invariant_under_uniform_scale(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f32..10.0, 4), 3..20),
            s in 0.5f32..4.0,
        ) {
            let set = EmbeddingSet::from_rows(&rows).unwrap();
            let scaled: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|x| x * s).collect()).collect();
            let set2 = EmbeddingSet::from_rows(&scaled).unwrap();
            let a = euclidean_ranking(&set, 0).unwrap();
            let b = euclidean_ranking(&set2, 0).unwrap();
            // Distinct distances keep their order; exact ties may resolve by id either way.
            let ta = a.rank_table(rows.len());
            let tb = b.rank_table(rows.len());
            for i in 1..rows.len() {
                for j in 1..rows.len() {
                    let (da, db) = (a.entries[ta[i].unwrap() - 1].score, a.entries[ta[j].unwrap() - 1].score);
                    if da < db * (1.0 - 1e-5) {
                        prop_assert!(tb[i] < tb[j]);
                    }
                }
            }
        }

        #[test]
        fn cosine_order_invariant_under_per_vector_scale(
            rows in proptest::collection::vec(proptest::collection::vec(0.1f32..10.0, 3), 3..20),
            scales in proptest::collection::vec(0.25f32..8.0, 20),
        ) {
            let set = EmbeddingSet::from_rows(&rows).unwrap();
            let scaled: Vec<Vec<f32>> = rows.iter().zip(&scales).map(|(r, s)| r.iter().map(|x| x * s).collect()).collect();
            let a = cosine_ranking(&set, 0).unwrap();
            let b = cosine_ranking(&EmbeddingSet::from_rows(&scaled).unwrap(), 0).unwrap();
            // Scores are unchanged, so the order can only differ among near-ties.
            for ea in &a.entries {
                let eb = b.entries[b.rank_of(ea.token).unwrap() - 1];
                prop_assert!((ea.score - eb.score).abs() < 1e-5);
            }
            for w in b.entries.windows(2) {
                let (x, y) = (a.rank_of(w[0].token).unwrap(), a.rank_of(w[1].token).unwrap());
                let gap = a.entries[x - 1].score - a.entries[y - 1].score;
                prop_assert!(x < y || gap.abs() < 1e-5);
            }
        }
    }
}
