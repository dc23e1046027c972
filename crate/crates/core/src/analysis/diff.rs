use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cloud::TokenId;
use crate::error::{Error, Result};
use crate::ranking::Ranking;

/// Number of entries in a word-cloud export.
pub const WORD_CLOUD_SIZE: usize = 30;

/// `rank_b - rank_a`, with infinities for tokens missing from one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delta {
    /// Ranked by `a`, absent from `b`.
    PosInf,
    Finite(i64),
    /// Ranked by `b`, absent from `a`.
    NegInf,
}

impl Ord for Delta {
    fn cmp(&self, other: &Self) -> Ordering {
        let key = |d: &Delta| match *d {
            Delta::NegInf => (0, 0),
            Delta::Finite(v) => (1, v),
            Delta::PosInf => (2, 0),
        };
        key(self).cmp(&key(other))
    }
}

impl PartialOrd for Delta {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delta::PosInf => f.write_str("inf"),
            Delta::NegInf => f.write_str("-inf"),
            Delta::Finite(v) => write!(f, "{v}"),
        }
    }
}

/// One row of a ranking difference table. A `None` rank means the token is
/// absent from that ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub token: TokenId,
    pub surface: String,
    pub rank_a: Option<usize>,
    pub rank_b: Option<usize>,
    pub rank_c: Option<usize>,
    pub delta: Delta,
}

/// Compares three rankings of the same query. Rows cover the union of the
/// `top_k` entries of each ranking, ordered by descending `rank_b - rank_a`
/// (ties by token id).
pub fn rank_diff_table(
    a: &Ranking,
    b: &Ranking,
    c: &Ranking,
    top_k: usize,
    surface: impl Fn(TokenId) -> String,
) -> Result<Vec<DiffRow>> {
    for other in [b, c] {
        if other.query != a.query {
            return Err(Error::MismatchedQuery(
                a.query.unwrap_or(usize::MAX),
                other.query.unwrap_or(usize::MAX),
            ));
        }
    }
    let tokens: BTreeSet<TokenId> = [a, b, c]
        .iter()
        .flat_map(|r| r.top(top_k).iter().map(|e| e.token))
        .collect();
    let mut rows: Vec<DiffRow> = tokens
        .into_iter()
        .map(|t| {
            let (ra, rb, rc) = (a.rank_of(t), b.rank_of(t), c.rank_of(t));
            let delta = match (ra, rb) {
                (Some(x), Some(y)) => Delta::Finite(y as i64 - x as i64),
                (Some(_), None) => Delta::PosInf,
                (None, _) => Delta::NegInf,
            };
            DiffRow {
                token: t,
                surface: surface(t),
                rank_a: ra,
                rank_b: rb,
                rank_c: rc,
                delta,
            }
        })
        .collect();
    rows.sort_by(|x, y| y.delta.cmp(&x.delta).then(x.token.cmp(&y.token)));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCloudEntry {
    pub surface: String,
    /// Score rescaled to `[0, 1]` within the cloud, 1 for the best entry.
    pub weight: f64,
    pub score: f64,
}

/// Top `WORD_CLOUD_SIZE` entries of a ranking with display weights. Distance
/// metrics are inverted so closer tokens get larger weights.
pub fn word_cloud(ranking: &Ranking, surface: impl Fn(TokenId) -> String) -> Vec<WordCloudEntry> {
    let top = ranking.top(WORD_CLOUD_SIZE);
    let finite: Vec<f64> = top.iter().map(|e| e.score).filter(|s| s.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let higher = ranking.metric.higher_is_better();
    top.iter()
        .map(|e| {
            let weight = if !e.score.is_finite() {
                0.0
            } else if hi > lo {
                let t = (e.score - lo) / (hi - lo);
                if higher {
                    t
                } else {
                    1.0 - t
                }
            } else {
                1.0
            };
            WordCloudEntry {
                surface: surface(e.token),
                weight,
                score: e.score,
            }
        })
        .collect()
}
