use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cloud::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mcpm,
    Euclidean,
    Cosine,
}

impl Metric {
    /// Whether larger scores rank first.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Euclidean)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Mcpm => "mcpm",
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mcpm" => Ok(Metric::Mcpm),
            "euclidean" | "euclid" => Ok(Metric::Euclidean),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub token: TokenId,
    pub score: f64,
}

/// Tokens ordered best first for one query under one metric. The query itself
/// never appears in `entries`. `query` is `None` when the search started from
/// a free position rather than a token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query: Option<TokenId>,
    pub metric: Metric,
    pub entries: Vec<RankEntry>,
}

impl Ranking {
    /// Sorts `entries` best first (ties by ascending token id) and drops the query.
    pub fn from_scores(query: Option<TokenId>, metric: Metric, mut entries: Vec<RankEntry>) -> Self {
        entries.retain(|e| Some(e.token) != query);
        if metric.higher_is_better() {
            entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.token.cmp(&b.token)));
        } else {
            entries.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.token.cmp(&b.token)));
        }
        Self { query, metric, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of `token`, if ranked.
    pub fn rank_of(&self, token: TokenId) -> Option<usize> {
        self.entries.iter().position(|e| e.token == token).map(|i| i + 1)
    }

    /// Dense lookup table `token -> 1-based rank` for `n` tokens.
    pub fn rank_table(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (i, e) in self.entries.iter().enumerate() {
            if e.token < n {
                out[e.token] = Some(i + 1);
            }
        }
        out
    }

    pub fn top(&self, k: usize) -> &[RankEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.entries.iter().map(|e| e.token).collect()
    }

    /// Checks the ordering invariant for this ranking's metric.
    pub fn is_ordered(&self) -> bool {
        self.entries.windows(2).all(|w| {
            if self.metric.higher_is_better() {
                w[0].score >= w[1].score
            } else {
                w[0].score <= w[1].score
            }
        }) && self.entries.iter().all(|e| Some(e.token) != self.query)
    }
}
