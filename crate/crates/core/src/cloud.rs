use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

/// Row index of a token within its dataset.
pub type TokenId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    /// Word or `word_POS` form, e.g. `wind_NOUN`.
    pub surface: String,
    /// Source sentence for contextual datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<String>,
}

impl Token {
    pub fn new(id: TokenId, surface: impl Into<String>) -> Self {
        Self {
            id,
            surface: surface.into(),
            meta: None,
        }
    }
}

/// Tokens with 3D positions. After normalization every coordinate lies in
/// `[0, 1]`; `bbox_original` keeps the bounds before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub tokens: Vec<Token>,
    pub positions: Vec<Vec3>,
    pub bbox_original: [Vec3; 2],
}

impl PointCloud {
    /// Builds a cloud with `bbox_original` set to the tight bounds of `positions`.
    pub fn new(tokens: Vec<Token>, positions: Vec<Vec3>) -> Self {
        assert_eq!(tokens.len(), positions.len(), "one position per token");
        let bbox_original = bounds(&positions);
        Self {
            tokens,
            positions,
            bbox_original,
        }
    }

    /// Cloud with synthetic surfaces `t0`, `t1`, ...
    pub fn from_positions(positions: Vec<Vec3>) -> Self {
        let tokens = (0..positions.len()).map(|i| Token::new(i, format!("t{i}"))).collect();
        Self::new(tokens, positions)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn position(&self, id: TokenId) -> Option<Vec3> {
        self.positions.get(id).copied()
    }

    pub fn find_surface(&self, surface: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t.surface == surface)
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id].surface
    }

    pub fn is_normalized(&self) -> bool {
        self.positions.iter().all(|&p| crate::geom::inside_unit_cube(p))
    }
}

/// Tight axis-aligned bounds `[min, max]`; all zeros for an empty slice.
pub fn bounds(positions: &[Vec3]) -> [Vec3; 2] {
    if positions.is_empty() {
        return [[0.0; 3]; 2];
    }
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for p in positions {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    [lo, hi]
}
