//! Uniform hash grid for fixed-radius neighbour queries over token positions.

use std::collections::HashMap;

use crate::geom::{self, Vec3};

pub struct PointIndex {
    cell: f32,
    buckets: HashMap<[i32; 3], Vec<u32>>,
    positions: Vec<Vec3>,
}

impl PointIndex {
    /// `cell` should be at least the largest query radius.
    pub fn new(positions: &[Vec3], cell: f32) -> Self {
        assert!(cell > 0.0);
        let mut buckets: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
        for (i, &p) in positions.iter().enumerate() {
            buckets.entry(key(p, cell)).or_default().push(i as u32);
        }
        Self {
            cell,
            buckets,
            positions: positions.to_vec(),
        }
    }

    /// Calls `f` with every point id within `radius` of `p` (inclusive).
    #[inline]
    pub fn for_each_within(&self, p: Vec3, radius: f32, mut f: impl FnMut(u32)) {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i32;
        let k = key(p, self.cell);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if let Some(ids) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &id in ids {
                            if geom::dist2(self.positions[id as usize], p) <= r2 {
                                f(id);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Nearest point within `radius`; ties go to the lower id.
    pub fn nearest_within(&self, p: Vec3, radius: f32) -> Option<u32> {
        let mut best: Option<(f32, u32)> = None;
        self.for_each_within(p, radius, |id| {
            let d = geom::dist2(self.positions[id as usize], p);
            match best {
                Some((bd, bid)) if d > bd || (d == bd && id > bid) => {}
                _ => best = Some((d, id)),
            }
        });
        best.map(|(_, id)| id)
    }
}

#[inline]
fn key(p: Vec3, cell: f32) -> [i32; 3] {
    [
        (p[0] / cell).floor() as i32,
        (p[1] / cell).floor() as i32,
        (p[2] / cell).floor() as i32,
    ]
}
