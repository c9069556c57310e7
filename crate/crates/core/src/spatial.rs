//! Uniform hash grid over 3D points: exact radius queries and k-nearest-neighbor search.

use std::collections::HashMap;

use crate::geometry::Vec3;

const OFFSET: i64 = 1 << 20;

/// Points bucketed into axis-aligned cells of size `cell_xy × cell_xy × cell_z`.
pub struct UniformGrid {
    inv_xy: f64,
    inv_z: f64,
    cell_xy: f64,
    cell_z: f64,
    points: Vec<Vec3>,
    /// Point indices sorted by cell key, then by index.
    order: Vec<u32>,
    cells: HashMap<u64, (u32, u32)>,
    lo: [i64; 3],
    hi: [i64; 3],
}

#[inline]
fn pack(i: i64, j: i64, k: i64) -> u64 {
    (((i + OFFSET) as u64) << 42) | (((j + OFFSET) as u64) << 21) | ((k + OFFSET) as u64)
}

impl UniformGrid {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        Self::with_cells(points, cell, cell)
    }

    /// Grid with separate horizontal and vertical cell sizes.
    pub fn with_cells(points: &[Vec3], cell_xy: f64, cell_z: f64) -> Self {
        assert!(cell_xy > 0.0 && cell_z > 0.0, "cell size must be positive");
        let inv_xy = 1.0 / cell_xy;
        let inv_z = 1.0 / cell_z;
        let mut keyed: Vec<(u64, u32)> = Vec::with_capacity(points.len());
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (idx, p) in points.iter().enumerate() {
            let c = [
                (p.x * inv_xy).floor() as i64,
                (p.y * inv_xy).floor() as i64,
                (p.z * inv_z).floor() as i64,
            ];
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            keyed.push((pack(c[0], c[1], c[2]), idx as u32));
        }
        keyed.sort_unstable();
        let mut cells = HashMap::with_capacity(keyed.len() / 2 + 1);
        let mut start = 0usize;
        while start < keyed.len() {
            let key = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == key {
                end += 1;
            }
            cells.insert(key, (start as u32, end as u32));
            start = end;
        }
        Self {
            inv_xy,
            inv_z,
            cell_xy,
            cell_z,
            points: points.to_vec(),
            order: keyed.into_iter().map(|(_, i)| i).collect(),
            cells,
            lo,
            hi,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    #[inline]
    fn cell_of(&self, p: Vec3) -> [i64; 3] {
        [
            (p.x * self.inv_xy).floor() as i64,
            (p.y * self.inv_xy).floor() as i64,
            (p.z * self.inv_z).floor() as i64,
        ]
    }

    #[inline]
    fn bucket(&self, i: i64, j: i64, k: i64) -> &[u32] {
        match self.cells.get(&pack(i, j, k)) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    /// Calls `f(index, squared_distance)` for every point with `|p - q| <= r`.
    pub fn for_each_within(&self, q: Vec3, r: f64, mut f: impl FnMut(usize, f64)) {
        if self.points.is_empty() {
            return;
        }
        let r2 = r * r;
        let i0 = (((q.x - r) * self.inv_xy).floor() as i64).max(self.lo[0]);
        let i1 = (((q.x + r) * self.inv_xy).floor() as i64).min(self.hi[0]);
        let j0 = (((q.y - r) * self.inv_xy).floor() as i64).max(self.lo[1]);
        let j1 = (((q.y + r) * self.inv_xy).floor() as i64).min(self.hi[1]);
        let k0 = (((q.z - r) * self.inv_z).floor() as i64).max(self.lo[2]);
        let k1 = (((q.z + r) * self.inv_z).floor() as i64).min(self.hi[2]);
        for i in i0..=i1 {
            for j in j0..=j1 {
                for k in k0..=k1 {
                    for &idx in self.bucket(i, j, k) {
                        let d2 = self.points[idx as usize].dist_sq(q);
                        if d2 <= r2 {
                            f(idx as usize, d2);
                        }
                    }
                }
            }
        }
    }

    /// Indices within `r` of `q`, ascending.
    pub fn within(&self, q: Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(q, r, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// The `k` nearest points to `q` as `(index, squared distance)`, nearest first.
    /// Ties in distance are broken by the lower index.
    pub fn knn(&self, q: Vec3, k: usize) -> Vec<(usize, f64)> {
        let n = self.points.len();
        let k = k.min(n);
        if k == 0 {
            return Vec::new();
        }
        let c = self.cell_of(q);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 8);
        let max_ring = (0..3).map(|a| (self.hi[a] - c[a]).abs().max((c[a] - self.lo[a]).abs())).max().unwrap_or(0) + 1;
        let mut ring = 0i64;
        loop {
            self.visit_ring(c, ring, |idx| {
                let d2 = self.points[idx].dist_sq(q);
                best.push((d2, idx));
            });
            best.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(k);
            if best.len() == k {
                // Everything outside the searched block is at least this far away.
                let reach = self.block_clearance(q, c, ring);
                if best[k - 1].0 < reach * reach {
                    break;
                }
            }
            if ring > max_ring {
                break;
            }
            ring += 1;
        }
        best.into_iter().map(|(d2, i)| (i, d2)).collect()
    }

    fn visit_ring(&self, c: [i64; 3], ring: i64, mut f: impl FnMut(usize)) {
        for i in c[0] - ring..=c[0] + ring {
            for j in c[1] - ring..=c[1] + ring {
                for k in c[2] - ring..=c[2] + ring {
                    let on_shell = (i - c[0]).abs() == ring || (j - c[1]).abs() == ring || (k - c[2]).abs() == ring;
                    if !on_shell {
                        continue;
                    }
                    for &idx in self.bucket(i, j, k) {
                        f(idx as usize);
                    }
                }
            }
        }
    }

    /// Distance from `q` to the boundary of the block of cells within `ring` of `c`.
    fn block_clearance(&self, q: Vec3, c: [i64; 3], ring: i64) -> f64 {
        let x0 = (c[0] - ring) as f64 * self.cell_xy;
        let x1 = (c[0] + ring + 1) as f64 * self.cell_xy;
        let y0 = (c[1] - ring) as f64 * self.cell_xy;
        let y1 = (c[1] + ring + 1) as f64 * self.cell_xy;
        let z0 = (c[2] - ring) as f64 * self.cell_z;
        let z1 = (c[2] + ring + 1) as f64 * self.cell_z;
        (q.x - x0).min(x1 - q.x).min(q.y - y0).min(y1 - q.y).min(q.z - z0).min(z1 - q.z).max(0.0)
    }

    /// Nearest point, if any.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        self.knn(q, 1).into_iter().next()
    }
}

/// Brute-force kNN with the same tie rule; reference for tests.
pub fn knn_brute(points: &[Vec3], q: Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.dist_sq(q), i)).collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d, i)| (i, d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-span..span), rng.random_range(-span..span), rng.random_range(-span..span)))
            .collect()
    }

    #[test]
    fn knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 500, 3.0);
        let grid = UniformGrid::new(&pts, 0.4);
        for _ in 0..300 {
            let q = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            for k in [1, 2, 5, 17] {
                assert_eq!(grid.knn(q, k), knn_brute(&pts, q, k));
            }
        }
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let grid = UniformGrid::new(&pts, 0.3);
        let r = grid.knn(Vec3::ZERO, 2);
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn radius_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 800, 4.0);
        let grid = UniformGrid::with_cells(&pts, 0.5, 2.0);
        for _ in 0..200 {
            let q = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let r = rng.random_range(0.1..1.2);
            let brute: Vec<usize> = (0..pts.len()).filter(|&i| pts[i].dist_sq(q) <= r * r).collect();
            assert_eq!(grid.within(q, r), brute);
        }
    }

    #[test]
    fn empty_grid() {
        let grid = UniformGrid::new(&[], 1.0);
        assert!(grid.knn(Vec3::ZERO, 3).is_empty());
        assert!(grid.within(Vec3::ZERO, 1.0).is_empty());
    }
}
