//! Synthetic wave-speed models used by the experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::grid::{ArrayGeometry, Grid2D, Medium};
use crate::signal::smooth_step;

fn from_fn(grid: &Grid2D, c_ref: f64, f: impl Fn(f64, f64) -> f64) -> Result<Medium> {
    let speed = (0..grid.len())
        .map(|k| {
            let (ix, iy) = grid.unflatten(k);
            let (x, y) = grid.node_coordinate(ix, iy);
            f(x, y)
        })
        .collect();
    Medium::new(*grid, speed, c_ref)
}

/// Fraction of a node cell lying at signed distance `s` past an interface, a linear ramp
/// over one grid spacing so the model varies continuously with the interface position.
fn cell_fraction(s: f64, h: f64) -> f64 {
    (s / h + 0.5).clamp(0.0, 1.0)
}

/// Disk of speed `c_inclusion` and radius `radius` centered at `center` in a background `c̄`.
pub fn camembert(
    grid: &Grid2D,
    c_ref: f64,
    center: (f64, f64),
    radius: f64,
    c_inclusion: f64,
) -> Result<Medium> {
    let h = grid.h;
    from_fn(grid, c_ref, |x, y| {
        let r = ((x - center.0).powi(2) + (y - center.1).powi(2)).sqrt();
        c_ref + (c_inclusion - c_ref) * cell_fraction(radius - r, h)
    })
}

/// Slanted fast layer in a background `c̄`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlantedLayer {
    /// Depth coordinate of the top interface at the horizontal center of the grid.
    pub interface_depth: f64,
    /// Interface depth change per unit cross-range.
    pub slope: f64,
    /// Vertical thickness; `None` extends the layer to the bottom of the domain.
    pub thickness: Option<f64>,
    /// Ratio of the layer speed to `c̄`.
    pub contrast: f64,
}

impl SlantedLayer {
    pub fn medium(&self, grid: &Grid2D, c_ref: f64) -> Result<Medium> {
        let h = grid.h;
        let xc = grid.origin.0 + 0.5 * grid.extent().0;
        from_fn(grid, c_ref, |x, y| {
            let top = self.interface_depth + self.slope * (x - xc);
            let mut frac = cell_fraction(y - top, h);
            if let Some(t) = self.thickness {
                frac *= cell_fraction(top + t - y, h);
            }
            c_ref * (1.0 + (self.contrast - 1.0) * frac)
        })
    }
}

/// Thin annulus of speed `c_ring` with radii `[r_inner, r_inner + width]`.
pub fn thin_ring(
    grid: &Grid2D,
    c_ref: f64,
    center: (f64, f64),
    r_inner: f64,
    width: f64,
    c_ring: f64,
) -> Result<Medium> {
    let h = grid.h;
    from_fn(grid, c_ref, |x, y| {
        let r = ((x - center.0).powi(2) + (y - center.1).powi(2)).sqrt();
        let frac = cell_fraction(r - r_inner, h) * cell_fraction(r_inner + width - r, h);
        c_ref + (c_ring - c_ref) * frac
    })
}

/// Smooth random medium `c̄(1 + ε g)` with `g` a Gaussian-filtered white field of correlation
/// length `corr_len`, normalized to `max|g| = 1`, and blended to `c̄` within `collar` of the
/// sensors over a ramp of width `collar`.
pub fn random_medium(
    grid: &Grid2D,
    c_ref: f64,
    contrast: f64,
    corr_len: f64,
    array: &ArrayGeometry,
    collar: f64,
    seed: u64,
) -> Result<Medium> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (grid.nx, grid.ny);
    let white: Vec<f64> = (0..grid.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let sigma = corr_len / grid.h;
    let half = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let blur = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for ix in 0..nx {
            for iy in 0..ny {
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let o = t as isize - half;
                    let (jx, jy) = if along_x {
                        (ix as isize + o, iy as isize)
                    } else {
                        (ix as isize, iy as isize + o)
                    };
                    if jx >= 0 && jy >= 0 && (jx as usize) < nx && (jy as usize) < ny {
                        acc += w * src[grid.index(jx as usize, jy as usize)];
                    }
                }
                out[grid.index(ix, iy)] = acc;
            }
        }
        out
    };
    let g = blur(&blur(&white, true), false);
    let peak = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let speed = (0..grid.len())
        .map(|k| {
            let (ix, iy) = grid.unflatten(k);
            let (x, y) = grid.node_coordinate(ix, iy);
            let dist = array
                .sensors()
                .iter()
                .map(|s| ((x - s.0).powi(2) + (y - s.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            let blend = smooth_step((dist - collar) / collar);
            c_ref * (1.0 + contrast * blend * g[k] / peak)
        })
        .collect();
    Medium::new(*grid, speed, c_ref)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid2D {
        Grid2D::new(41, 51, 20.0, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn camembert_disk() {
        let m = camembert(&grid(), 3000.0, (400.0, 600.0), 200.0, 3600.0).unwrap();
        assert_eq!(m.speed_at(20, 30), 3600.0);
        assert_eq!(m.speed_at(0, 0), 3000.0);
        assert_eq!(m.c_max(), 3600.0);
        assert_eq!(m.c_min(), 3000.0);
    }

    #[test]
    fn slanted_layer_varies_continuously() {
        let g = grid();
        let layer = SlantedLayer {
            interface_depth: 500.0,
            slope: 0.2,
            thickness: Some(200.0),
            contrast: 1.3,
        };
        let a = layer.medium(&g, 3000.0).unwrap();
        assert_eq!(a.speed_at(20, 30), 3900.0);
        assert_eq!(a.speed_at(20, 10), 3000.0);
        assert_eq!(a.speed_at(20, 45), 3000.0);
        let b = SlantedLayer {
            interface_depth: 501.0,
            ..layer
        }
        .medium(&g, 3000.0)
        .unwrap();
        let diff = a
            .speed()
            .iter()
            .zip(b.speed())
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        assert!(diff > 0.0 && diff <= 900.0 / 20.0 + 1e-9);
    }

    #[test]
    fn random_medium_respects_collar_and_contrast() {
        let g = grid();
        let arr = ArrayGeometry::linear(&g, 5, 400.0, 100.0).unwrap();
        let m = random_medium(&g, 1500.0, 0.25, 60.0, &arr, 150.0, 7).unwrap();
        assert_eq!(m.collar_deviation(&arr, 150.0), 0.0);
        let dev = m
            .speed()
            .iter()
            .fold(0.0f64, |a, c| a.max((c - 1500.0).abs()));
        assert!(dev > 0.05 * 1500.0 && dev <= 0.25 * 1500.0 + 1e-9);
        let again = random_medium(&g, 1500.0, 0.25, 60.0, &arr, 150.0, 7).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn ring_is_thin() {
        let m = thin_ring(&grid(), 3000.0, (400.0, 500.0), 200.0, 40.0, 4500.0).unwrap();
        assert_eq!(m.speed_at(20, 25), 3000.0);
        assert_eq!(m.speed_at(20 + 11, 25), 4500.0);
    }
}
