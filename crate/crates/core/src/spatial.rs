//! Nearest-neighbour queries on static point sets via a uniform voxel hash.

use std::collections::HashMap;

use crate::geometry::Vec3;

type CellKey = (i64, i64, i64);

/// Points bucketed into cubic cells; queries walk outward ring by ring.
#[derive(Clone, Debug)]
pub struct PointIndex {
    points: Vec<Vec3>,
    cell: f64,
    /// Point indices grouped by cell, in ascending order within a cell.
    order: Vec<u32>,
    cells: HashMap<CellKey, (u32, u32)>,
    keys: Vec<CellKey>,
}

impl PointIndex {
    pub fn new(points: Vec<Vec3>, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        assert!(points.len() < u32::MAX as usize);
        let key = |p: &Vec3| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
        let mut tagged: Vec<(CellKey, u32)> = points.iter().enumerate().map(|(i, p)| (key(p), i as u32)).collect();
        tagged.sort_unstable();
        let mut cells = HashMap::new();
        let mut keys = Vec::new();
        let mut start = 0;
        while start < tagged.len() {
            let k = tagged[start].0;
            let mut end = start;
            while end < tagged.len() && tagged[end].0 == k {
                end += 1;
            }
            cells.insert(k, (start as u32, end as u32));
            keys.push(k);
            start = end;
        }
        Self {
            order: tagged.into_iter().map(|(_, i)| i).collect(),
            points,
            cell,
            cells,
            keys,
        }
    }

    /// Picks a cell size from the point density in the bounding box.
    pub fn with_auto_cell(points: Vec<Vec3>) -> Self {
        let cell = crate::geometry::Aabb::from_points(&points)
            .map(|b| {
                let e = b.extent();
                let area = (e.x * e.y + e.y * e.z + e.x * e.z).max(1e-12);
                (2.0 * area / points.len().max(1) as f64).sqrt().max(1e-3)
            })
            .unwrap_or(1.0);
        Self::new(points, cell)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cell_of(&self, q: &Vec3) -> CellKey {
        (
            (q.x / self.cell).floor() as i64,
            (q.y / self.cell).floor() as i64,
            (q.z / self.cell).floor() as i64,
        )
    }

    fn scan_cell(&self, k: &CellKey, q: &Vec3, best: &mut Option<(usize, f64)>) {
        if let Some(&(s, e)) = self.cells.get(k) {
            for &i in &self.order[s as usize..e as usize] {
                let d = (self.points[i as usize] - q).norm();
                let better = match *best {
                    None => true,
                    Some((bi, bd)) => d < bd || (d == bd && (i as usize) < bi),
                };
                if better {
                    *best = Some((i as usize, d));
                }
            }
        }
    }

    /// Lower bound on the distance from `q` to any point of cell `k`.
    fn cell_lower_bound(&self, k: &CellKey, q: &Vec3) -> f64 {
        let mut s = 0.0;
        for (a, ka) in [k.0, k.1, k.2].into_iter().enumerate() {
            let lo = ka as f64 * self.cell;
            let hi = lo + self.cell;
            let d = if q[a] < lo {
                lo - q[a]
            } else if q[a] > hi {
                q[a] - hi
            } else {
                0.0
            };
            s += d * d;
        }
        s.sqrt()
    }

    /// Nearest point to `q` as `(index, distance)`; ties go to the lower index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.nearest_within(q, f64::INFINITY)
    }

    /// Like [`nearest`](Self::nearest) but gives up beyond `max_dist`.
    pub fn nearest_within(&self, q: &Vec3, max_dist: f64) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = self.cell_of(q);
        let mut best: Option<(usize, f64)> = None;
        let mut r: i64 = 0;
        loop {
            // Once a ring would visit more cells than exist, scan them all.
            let ring_cells = if r == 0 { 1 } else { (2 * r + 1).pow(3) - (2 * r - 1).pow(3) };
            if ring_cells as usize > self.keys.len() {
                return self.scan_all(q, best, max_dist);
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    let edge = dx.abs() == r || dy.abs() == r;
                    let dzs: Vec<i64> = if edge { (-r..=r).collect() } else { vec![-r, r] };
                    for dz in dzs {
                        self.scan_cell(&(c.0 + dx, c.1 + dy, c.2 + dz), q, &mut best);
                    }
                }
            }
            // Unvisited cells are at least r cells away.
            let reach = r as f64 * self.cell;
            if let Some((_, d)) = best {
                if d <= reach {
                    break;
                }
            }
            if reach > max_dist {
                break;
            }
            r += 1;
        }
        best.filter(|(_, d)| *d <= max_dist)
    }

    fn scan_all(&self, q: &Vec3, mut best: Option<(usize, f64)>, max_dist: f64) -> Option<(usize, f64)> {
        let mut order: Vec<(f64, usize)> = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, k)| (self.cell_lower_bound(k, q), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (lb, i) in order {
            if lb > max_dist {
                break;
            }
            if let Some((_, d)) = best {
                if lb > d {
                    break;
                }
            }
            self.scan_cell(&self.keys[i], q, &mut best);
        }
        best.filter(|(_, d)| *d <= max_dist)
    }
}

/// O(N) reference search with the same tie rule.
pub fn brute_force_nearest(points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = (p - q).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}
