//! Computational grid, wave-speed model and sensor geometry.

use crate::error::{Error, Result};

/// Uniform node-centered grid. Axis 0 is cross-range `x⊥`, axis 1 is depth `x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: (f64, f64),
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, h: f64, origin: (f64, f64)) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3x3 nodes, got {nx}x{ny}"
            )));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {h}"
            )));
        }
        Ok(Self { nx, ny, h, origin })
    }

    /// Grid covering `[0, width] × [0, depth]` with spacing `h`.
    pub fn covering(width: f64, depth: f64, h: f64) -> Result<Self> {
        let nx = (width / h).round() as usize + 1;
        let ny = (depth / h).round() as usize + 1;
        Self::new(nx, ny, h, (0.0, 0.0))
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of node `(ix, iy)`; depth is the fast axis.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.ny + iy
    }

    #[inline]
    pub fn unflatten(&self, k: usize) -> (usize, usize) {
        (k / self.ny, k % self.ny)
    }

    pub fn node_coordinate(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + ix as f64 * self.h,
            self.origin.1 + iy as f64 * self.h,
        )
    }

    pub fn extent(&self) -> (f64, f64) {
        ((self.nx - 1) as f64 * self.h, (self.ny - 1) as f64 * self.h)
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let (w, d) = self.extent();
        let tol = 1e-9 * self.h;
        let (x, y) = (p.0 - self.origin.0, p.1 - self.origin.1);
        x >= -tol && x <= w + tol && y >= -tol && y <= d + tol
    }

    /// Nearest node to `p`.
    pub fn snap_to_grid(&self, p: (f64, f64)) -> Result<(usize, usize)> {
        if !p.0.is_finite() || !p.1.is_finite() || !self.contains(p) {
            return Err(Error::OutOfDomain(p.0, p.1));
        }
        let ix = ((p.0 - self.origin.0) / self.h).round() as usize;
        let iy = ((p.1 - self.origin.1) / self.h).round() as usize;
        Ok((ix.min(self.nx - 1), iy.min(self.ny - 1)))
    }

    pub fn is_boundary(&self, ix: usize, iy: usize) -> bool {
        ix == 0 || iy == 0 || ix == self.nx - 1 || iy == self.ny - 1
    }

    /// Number of interior (non-Dirichlet) nodes.
    pub fn interior_len(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }
}

/// Co-located sources and receivers.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayGeometry {
    sensors: Vec<(f64, f64)>,
    nodes: Vec<(usize, usize)>,
}

impl ArrayGeometry {
    pub fn new(grid: &Grid2D, sensors: Vec<(f64, f64)>) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidArray("no sensors".into()));
        }
        let mut nodes = Vec::with_capacity(sensors.len());
        for &p in &sensors {
            let node = grid.snap_to_grid(p)?;
            if grid.is_boundary(node.0, node.1) {
                return Err(Error::InvalidArray(format!(
                    "sensor at ({}, {}) falls on the boundary",
                    p.0, p.1
                )));
            }
            if nodes.contains(&node) {
                return Err(Error::InvalidArray(format!(
                    "sensors share node ({}, {})",
                    node.0, node.1
                )));
            }
            nodes.push(node);
        }
        Ok(Self { sensors, nodes })
    }

    /// `m` equispaced sensors at depth `depth`, centered horizontally with the given aperture.
    pub fn linear(grid: &Grid2D, m: usize, aperture: f64, depth: f64) -> Result<Self> {
        let (w, _) = grid.extent();
        let center = grid.origin.0 + 0.5 * w;
        let sensors = (0..m)
            .map(|i| {
                let offset = if m == 1 {
                    0.0
                } else {
                    aperture * (i as f64 / (m - 1) as f64 - 0.5)
                };
                (center + offset, grid.origin.1 + depth)
            })
            .collect();
        Self::new(grid, sensors)
    }

    pub fn m(&self) -> usize {
        self.sensors.len()
    }

    pub fn sensors(&self) -> &[(f64, f64)] {
        &self.sensors
    }

    pub fn nodes(&self) -> &[(usize, usize)] {
        &self.nodes
    }

    /// Flat grid indices of the sensor nodes.
    pub fn flat_nodes(&self, grid: &Grid2D) -> Vec<usize> {
        self.nodes.iter().map(|&(i, j)| grid.index(i, j)).collect()
    }

    /// Mean depth coordinate of the sensors.
    pub fn mean_depth(&self) -> f64 {
        self.sensors.iter().map(|p| p.1).sum::<f64>() / self.m() as f64
    }
}

/// Wave-speed field sampled at grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Medium {
    grid: Grid2D,
    speed: Vec<f64>,
    c_ref: f64,
}

impl Medium {
    pub fn new(grid: Grid2D, speed: Vec<f64>, c_ref: f64) -> Result<Self> {
        if speed.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "speed field has {} values for a {}x{} grid",
                speed.len(),
                grid.nx,
                grid.ny
            )));
        }
        check_speed(c_ref)?;
        if let Some(&bad) = speed.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::NonPositiveSpeed(bad));
        }
        Ok(Self { grid, speed, c_ref })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn speed(&self) -> &[f64] {
        &self.speed
    }

    pub fn c_ref(&self) -> f64 {
        self.c_ref
    }

    pub fn speed_at(&self, ix: usize, iy: usize) -> f64 {
        self.speed[self.grid.index(ix, iy)]
    }

    pub fn c_min(&self) -> f64 {
        self.speed.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn c_max(&self) -> f64 {
        self.speed.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.speed.iter().all(|&c| c == self.speed[0])
    }

    /// Nodes within `radius` of any sensor.
    pub fn collar_mask(&self, array: &ArrayGeometry, radius: f64) -> Vec<bool> {
        let g = &self.grid;
        (0..g.len())
            .map(|k| {
                let (ix, iy) = g.unflatten(k);
                let p = g.node_coordinate(ix, iy);
                array.sensors().iter().any(|s| {
                    let (dx, dy) = (p.0 - s.0, p.1 - s.1);
                    dx * dx + dy * dy <= radius * radius
                })
            })
            .collect()
    }

    /// Largest `|c − c̄|` over the collar of radius `radius` around the sensors.
    pub fn collar_deviation(&self, array: &ArrayGeometry, radius: f64) -> f64 {
        self.collar_mask(array, radius)
            .iter()
            .zip(&self.speed)
            .filter(|(inside, _)| **inside)
            .map(|(_, c)| (c - self.c_ref).abs())
            .fold(0.0, f64::max)
    }

    /// Resets the speed to `c̄` inside the collar.
    pub fn with_collar(mut self, array: &ArrayGeometry, radius: f64) -> Self {
        let mask = self.collar_mask(array, radius);
        for (c, inside) in self.speed.iter_mut().zip(mask) {
            if inside {
                *c = self.c_ref;
            }
        }
        self
    }
}

fn check_speed(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveSpeed(c))
    }
}

pub fn homogeneous_medium(grid: Grid2D, c_ref: f64) -> Result<Medium> {
    check_speed(c_ref)?;
    Medium::new(grid, vec![c_ref; grid.len()], c_ref)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn snaps_to_nearest_node() {
        let g = Grid2D::new(10, 10, 20.0, (0.0, 0.0)).unwrap();
        assert_eq!(g.snap_to_grid((40.0, 60.0)).unwrap(), (2, 3));
        assert_eq!(g.snap_to_grid((49.0, 60.0)).unwrap(), (2, 3));
        assert!(matches!(
            g.snap_to_grid((-30.0, 10.0)),
            Err(Error::OutOfDomain(..))
        ));
        assert!(g.snap_to_grid((500.0, 10.0)).is_err());
    }

    #[test]
    fn homogeneous_fields() {
        let g = Grid2D::new(100, 125, 20.0, (0.0, 0.0)).unwrap();
        let m = homogeneous_medium(g, 3000.0).unwrap();
        assert!(m.speed().iter().all(|&c| c == 3000.0));
        assert!(matches!(
            homogeneous_medium(g, 0.0),
            Err(Error::NonPositiveSpeed(_))
        ));
        let m = homogeneous_medium(g, 1500.0).unwrap();
        assert_eq!(m.c_max(), 1500.0);
    }

    #[test]
    fn rejects_bad_fields_and_arrays() {
        let g = Grid2D::new(5, 5, 1.0, (0.0, 0.0)).unwrap();
        let mut speed = vec![1.0; 25];
        speed[7] = -1.0;
        assert!(Medium::new(g, speed, 1.0).is_err());
        assert!(ArrayGeometry::new(&g, vec![(0.0, 2.0)]).is_err());
        assert!(ArrayGeometry::new(&g, vec![(2.0, 2.0), (2.1, 2.0)]).is_err());
        assert!(ArrayGeometry::new(&g, vec![]).is_err());
        assert!(Grid2D::new(2, 5, 1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn collar_is_enforced() {
        let g = Grid2D::new(21, 21, 10.0, (0.0, 0.0)).unwrap();
        let a = ArrayGeometry::linear(&g, 3, 100.0, 50.0).unwrap();
        let speed = (0..g.len()).map(|k| 1000.0 + k as f64).collect();
        let m = Medium::new(g, speed, 1000.0).unwrap();
        assert!(m.collar_deviation(&a, 30.0) > 0.0);
        let m = m.with_collar(&a, 30.0);
        assert_eq!(m.collar_deviation(&a, 30.0), 0.0);
    }

    proptest! {
        #[test]
        fn node_round_trip(nx in 3usize..40, ny in 3usize..40, h in 0.5f64..50.0,
                           ox in -100.0f64..100.0, oy in -100.0f64..100.0) {
            let g = Grid2D::new(nx, ny, h, (ox, oy)).unwrap();
            for ix in 0..nx {
                for iy in 0..ny {
                    let p = g.node_coordinate(ix, iy);
                    prop_assert_eq!(g.snap_to_grid(p).unwrap(), (ix, iy));
                }
            }
        }

        #[test]
        fn snapping_distance_bounded(fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let g = Grid2D::new(11, 7, 3.0, (1.0, 2.0)).unwrap();
            let (w, d) = g.extent();
            let p = (1.0 + fx * w, 2.0 + fy * d);
            let (ix, iy) = g.snap_to_grid(p).unwrap();
            let q = g.node_coordinate(ix, iy);
            let dist = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            prop_assert!(dist <= g.h / 2f64.sqrt() + 1e-12);
        }
    }
}
