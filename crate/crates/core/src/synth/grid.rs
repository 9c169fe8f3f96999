use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::io::read_kernel_text;
use crate::imaging::Kernel;
use crate::scalar::Scalar;

/// Field-of-view-indexed set of kernels with a declared optical center.
///
/// Coordinates are `(u, v)` = `(row, col)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid<T = f64> {
    pub center: (f64, f64),
    pub entries: Vec<GridEntry<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridEntry<T = f64> {
    pub u: f64,
    pub v: f64,
    pub kernel: Kernel<T>,
}

impl<T: Scalar> KernelGrid<T> {
    pub fn new(center: (f64, f64), entries: Vec<GridEntry<T>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::invalid("kernel grid has no entries"));
        }
        Ok(Self { center, entries })
    }

    /// Index of the entry closest to `(u, v)`; ties go to the earliest entry.
    pub fn nearest(&self, u: f64, v: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, e) in self.entries.iter().enumerate() {
            let d = (e.u - u).powi(2) + (e.v - v).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Parses a manifest: one `center cu cv` line and `u v path` lines.
    /// Relative kernel paths resolve against the manifest's directory;
    /// `#` starts a comment line.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut center = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(path, format!("line {}: bad number '{s}'", i + 1)))
            };
            match fields.as_slice() {
                ["center", cu, cv] => center = Some((num(cu)?, num(cv)?)),
                [u, v, file] => {
                    let kernel = read_kernel_text(&base.join(file))?;
                    entries.push(GridEntry {
                        u: num(u)?,
                        v: num(v)?,
                        kernel,
                    });
                }
                _ => {
                    return Err(Error::parse(
                        path,
                        format!("line {}: expected 'center cu cv' or 'u v path'", i + 1),
                    ))
                }
            }
        }
        let center = center.ok_or_else(|| Error::parse(path, "missing 'center cu cv' line"))?;
        Self::new(center, entries)
    }
}

/// Kernels at `location` and at its three mirror images about the optical
/// center (left-right, top-bottom, both), in that order.
pub fn kernel_grid_sample_quadrants<T: Scalar>(grid: &KernelGrid<T>, location: (f64, f64)) -> Result<[Kernel<T>; 4]> {
    let (u, v) = location;
    let (cu, cv) = grid.center;
    if !(u <= cu && v <= cv) {
        return Err(Error::invalid(format!(
            "location ({u}, {v}) is outside the top-left quadrant of center ({cu}, {cv})"
        )));
    }
    let (mu, mv) = (2.0 * cu - u, 2.0 * cv - v);
    let pick = |a: f64, b: f64| grid.entries[grid.nearest(a, b)].kernel.clone();
    Ok([pick(u, v), pick(u, mv), pick(mu, v), pick(mu, mv)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gaussian_kernel, BlurConfig};

    fn symmetric_grid() -> KernelGrid<f64> {
        // Kernel width grows with distance from the center: f(|du|, |dv|).
        let center = (50.0, 80.0);
        let mut entries = Vec::new();
        for u in (0..=100).step_by(10) {
            for v in (0..=160).step_by(10) {
                let du = (u as f64 - center.0).abs();
                let dv = (v as f64 - center.1).abs();
                let cfg = BlurConfig::new(0.5 + du / 40.0, 0.5 + dv / 60.0, 0.0, 0.0).unwrap();
                entries.push(GridEntry {
                    u: u as f64,
                    v: v as f64,
                    kernel: gaussian_kernel(&cfg).unwrap(),
                });
            }
        }
        KernelGrid::new(center, entries).unwrap()
    }

    #[test]
    fn constant_grid_gives_identical_kernels() {
        let k = Kernel::<f64>::box_filter(5).unwrap();
        let grid = KernelGrid::new(
            (10.0, 10.0),
            (0..4)
                .map(|i| GridEntry {
                    u: (i / 2) as f64 * 20.0,
                    v: (i % 2) as f64 * 20.0,
                    kernel: k.clone(),
                })
                .collect(),
        )
        .unwrap();
        let ks = kernel_grid_sample_quadrants(&grid, (3.0, 4.0)).unwrap();
        assert!(ks.iter().all(|x| *x == k));
    }

    #[test]
    fn center_location_is_a_fixed_point() {
        let grid = symmetric_grid();
        let ks = kernel_grid_sample_quadrants(&grid, grid.center).unwrap();
        assert!(ks.iter().all(|x| *x == ks[0]));
    }

    #[test]
    fn symmetric_grid_gives_equal_kernels() {
        let grid = symmetric_grid();
        for loc in [(0.0, 0.0), (20.0, 30.0), (40.0, 70.0), (10.0, 80.0)] {
            let ks = kernel_grid_sample_quadrants(&grid, loc).unwrap();
            assert!(ks.iter().all(|x| *x == ks[0]), "{loc:?}");
        }
    }

    #[test]
    fn location_outside_quadrant_is_rejected() {
        let grid = symmetric_grid();
        assert!(kernel_grid_sample_quadrants(&grid, (60.0, 10.0)).is_err());
    }

    #[test]
    fn manifest_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "1\n1\n").unwrap();
        std::fs::write(dir.path().join("b.txt"), "3\n0 0 0 0 1 0 0 0 0\n").unwrap();
        let manifest = dir.path().join("grid.txt");
        std::fs::write(&manifest, "# lens\ncenter 4 4\n0 0 a.txt\n8 8 b.txt\n").unwrap();
        let g: KernelGrid<f64> = KernelGrid::load_manifest(&manifest).unwrap();
        assert_eq!(g.center, (4.0, 4.0));
        assert_eq!(g.entries.len(), 2);
        assert_eq!(g.entries[1].kernel.size(), 3);
        std::fs::write(&manifest, "0 0 a.txt\n").unwrap();
        assert!(KernelGrid::<f64>::load_manifest(&manifest).is_err());
    }
}
