use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Euclidean distance, evaluated identically by every backend.
#[inline]
pub fn point_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// `(index, distance)` of the closest point; ties go to the lower index.
pub fn nearest_brute_force(query: &Vector3<f64>, cloud: &[Vector3<f64>]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in cloud.iter().enumerate() {
        let d = point_distance(query, p);
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.ok_or_else(|| Error::Empty("nearest neighbor in an empty cloud".into()))
}

/// Uniform grid over a cloud's bounding box with about two points per cell.
#[derive(Clone, Debug)]
pub struct NeighborGrid<'a> {
    cloud: &'a [Vector3<f64>],
    origin: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<usize>,
    /// Point indices sorted by cell, ascending within a cell.
    order: Vec<usize>,
}

impl<'a> NeighborGrid<'a> {
    pub fn new(cloud: &'a [Vector3<f64>]) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::Empty("cannot index an empty cloud".into()));
        }
        if cloud.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite(
                "cloud contains non-finite coordinates".into(),
            ));
        }
        let mut lo = cloud[0];
        let mut hi = cloud[0];
        for p in cloud {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let target_cells = (cloud.len() as f64 / 2.0).max(1.0);
        let volume = ext.iter().map(|e| e.max(1e-9)).product::<f64>();
        let mut cell = (volume / target_cells).cbrt();
        let max_extent = ext.max();
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        // at most 128 cells per axis; flat clouds would otherwise explode
        cell = cell.max(max_extent / 128.0).max(1e-12);
        let dims = [0, 1, 2].map(|a| ((ext[a] / cell).floor() as usize + 1).min(129));
        let ncell = dims[0] * dims[1] * dims[2];
        let mut grid = Self {
            cloud,
            origin: lo,
            cell,
            dims,
            starts: vec![0; ncell + 1],
            order: vec![0; cloud.len()],
        };
        let cells: Vec<usize> = cloud.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        for &c in &cells {
            grid.starts[c + 1] += 1;
        }
        for c in 0..ncell {
            grid.starts[c + 1] += grid.starts[c];
        }
        let mut fill = grid.starts.clone();
        for (i, &c) in cells.iter().enumerate() {
            grid.order[fill[c]] = i;
            fill[c] += 1;
        }
        Ok(grid)
    }

    fn cell_of(&self, p: &Vector3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let f = ((p[a] - self.origin[a]) / self.cell).floor();
            if f <= 0.0 {
                0
            } else {
                (f as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Same result as [`nearest_brute_force`], bit for bit.
    pub fn nearest(&self, query: &Vector3<f64>) -> (usize, f64) {
        let center = self.cell_of(query);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.dims.iter().copied().max().expect("3 axes");
        for ring in 0..=max_ring {
            self.visit_ring(center, ring, |i| {
                let d = point_distance(query, &self.cloud[i]);
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            });
            // everything beyond this ring is at least `ring * cell` away
            if best.1 < ring as f64 * self.cell {
                break;
            }
        }
        best
    }

    fn visit_ring(&self, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
        let r = ring as i64;
        let range = |a: usize| {
            let lo = (c[a] as i64 - r).max(0);
            let hi = (c[a] as i64 + r).min(self.dims[a] as i64 - 1);
            lo..=hi
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let on_shell = (x - c[0] as i64).abs() == r
                        || (y - c[1] as i64).abs() == r
                        || (z - c[2] as i64).abs() == r;
                    if !on_shell {
                        continue;
                    }
                    let cell = self.flat([x as usize, y as usize, z as usize]);
                    for &i in &self.order[self.starts[cell]..self.starts[cell + 1]] {
                        f(i);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_cloud() {
        let cloud = [Vector3::new(1.0, 2.0, 3.0)];
        let q = Vector3::new(-5.0, 0.0, 9.0);
        let g = NeighborGrid::new(&cloud).unwrap();
        assert_eq!(g.nearest(&q), nearest_brute_force(&q, &cloud).unwrap());
        assert_eq!(g.nearest(&q).0, 0);
    }

    #[test]
    fn ties_pick_lower_index() {
        let cloud = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)];
        let q = Vector3::zeros();
        assert_eq!(nearest_brute_force(&q, &cloud).unwrap(), (0, 1.0));
        assert_eq!(NeighborGrid::new(&cloud).unwrap().nearest(&q), (0, 1.0));
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(nearest_brute_force(&Vector3::zeros(), &[]).is_err());
        assert!(NeighborGrid::new(&[]).is_err());
    }

    #[test]
    fn planar_cloud_matches_brute_force() {
        let cloud: Vec<_> = (0..400)
            .map(|i| Vector3::new((i % 20) as f64 * 0.5, (i / 20) as f64 * 0.5, 0.0))
            .collect();
        let g = NeighborGrid::new(&cloud).unwrap();
        for q in [
            Vector3::new(3.1, 2.2, 0.4),
            Vector3::new(-10.0, 50.0, -3.0),
            Vector3::new(4.75, 4.75, 0.0),
        ] {
            assert_eq!(g.nearest(&q), nearest_brute_force(&q, &cloud).unwrap());
        }
    }
}
