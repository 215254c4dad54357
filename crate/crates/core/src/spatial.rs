//! Uniform hash grid used for vertex welding and radius queries.

use std::collections::HashMap;

use crate::math::Vec3;

type Cell = (i64, i64, i64);

#[derive(Debug, Clone)]
pub struct HashGrid {
    cell_size: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl HashGrid {
    pub fn new(cell_size: f64) -> Self {
        assert!(cell_size > 0.0 && cell_size.is_finite());
        HashGrid {
            cell_size,
            cells: HashMap::new(),
        }
    }

    pub fn cell_of(&self, p: &Vec3) -> Cell {
        (
            (p.x / self.cell_size).floor() as i64,
            (p.y / self.cell_size).floor() as i64,
            (p.z / self.cell_size).floor() as i64,
        )
    }

    pub fn insert(&mut self, p: &Vec3, id: usize) {
        let c = self.cell_of(p);
        self.cells.entry(c).or_default().push(id);
    }

    /// Register `id` in every cell overlapped by the box `[lo, hi]`.
    pub fn insert_box(&mut self, lo: &Vec3, hi: &Vec3, id: usize) {
        let a = self.cell_of(lo);
        let b = self.cell_of(hi);
        for x in a.0..=b.0 {
            for y in a.1..=b.1 {
                for z in a.2..=b.2 {
                    self.cells.entry((x, y, z)).or_default().push(id);
                }
            }
        }
    }

    /// Ids stored in the cells overlapping the ball of `radius` around `p`.
    /// Ids may repeat when they were inserted as boxes.
    pub fn candidates(&self, p: &Vec3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let r = Vec3::repeat(radius);
        let a = self.cell_of(&(p - r));
        let b = self.cell_of(&(p + r));
        for x in a.0..=b.0 {
            for y in a.1..=b.1 {
                for z in a.2..=b.2 {
                    if let Some(ids) = self.cells.get(&(x, y, z)) {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
    }
}

/// Cluster points closer than `tol` onto the lowest-index representative.
/// Returns, per input point, the index of its representative (`None` for
/// points whose mask entry is false).
pub fn weld_points(points: &[Vec3], mask: &[bool], tol: f64) -> Vec<Option<usize>> {
    let mut grid = HashGrid::new(tol.max(f64::MIN_POSITIVE));
    let mut rep = vec![None; points.len()];
    let mut buf = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        grid.candidates(p, tol, &mut buf);
        let mut best: Option<usize> = None;
        for &j in &buf {
            if (points[j] - p).norm() <= tol && best.is_none_or(|b| j < b) {
                best = Some(j);
            }
        }
        match best {
            Some(j) => rep[i] = Some(j),
            None => {
                rep[i] = Some(i);
                grid.insert(p, i);
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welds_near_points() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1e-9, 0.0, 0.0),
        ];
        let rep = weld_points(&pts, &[true; 3], 1e-6);
        assert_eq!(rep, vec![Some(0), Some(1), Some(0)]);
    }

    #[test]
    fn box_candidates_cover_ball() {
        let mut g = HashGrid::new(0.5);
        g.insert_box(&Vec3::new(0.0, 0.0, 0.0), &Vec3::new(2.0, 0.0, 0.0), 7);
        let mut out = Vec::new();
        g.candidates(&Vec3::new(1.6, 0.3, 0.0), 0.4, &mut out);
        assert!(out.contains(&7));
        g.candidates(&Vec3::new(5.0, 0.0, 0.0), 0.4, &mut out);
        assert!(out.is_empty());
    }
}
