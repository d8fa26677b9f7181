//! Seeded synthetic saliency data: filled shapes over textured backgrounds.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{default_split_sizes, scan_dataset, write_splits, DatasetManifest, Split};
use super::pnm::{save_pgm, Grid};
use crate::error::{Error, Result};
use crate::metrics::MaskImage;

/// Accepted foreground fraction range per sample.
pub const MIN_FOREGROUND: f64 = 0.01;
pub const MAX_FOREGROUND: f64 = 0.60;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle { v: [(f64, f64); 3] },
}

impl Shape {
    fn bbox(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Disk { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Shape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Shape::Triangle { v } => {
                let xs = v.map(|p| p.0);
                let ys = v.map(|p| p.1);
                (
                    xs.iter().copied().fold(f64::INFINITY, f64::min),
                    ys.iter().copied().fold(f64::INFINITY, f64::min),
                    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Shape::Triangle { v } => {
                let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
                let d = [edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0])];
                d.iter().all(|&e| e >= 0.0) || d.iter().all(|&e| e <= 0.0)
            }
        }
    }
}

fn overlaps(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64), margin: f64) -> bool {
    a.0 - margin <= b.2 && b.0 - margin <= a.2 && a.1 - margin <= b.3 && b.1 - margin <= a.3
}

fn random_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    let r = rng.random_range(0.08 * size..0.25 * size);
    let cx = rng.random_range(r..size - r);
    let cy = rng.random_range(r..size - r);
    match rng.random_range(0..3) {
        0 => Shape::Disk { cx, cy, r },
        1 => {
            let hw = rng.random_range(0.6 * r..r);
            let hh = rng.random_range(0.6 * r..r);
            Shape::Rect {
                x0: cx - hw,
                y0: cy - hh,
                x1: cx + hw,
                y1: cy + hh,
            }
        }
        _ => {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let v = std::array::from_fn(|k| {
                let a = theta + k as f64 * std::f64::consts::TAU / 3.0;
                (cx + r * a.cos(), cy + r * a.sin())
            });
            Shape::Triangle { v }
        }
    }
}

/// Bilinearly interpolated lattice noise in `[0, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let step = size as f64 / cells as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let fy = (y as f64 + 0.5) / step;
        let iy = (fy.floor() as usize).min(cells - 1);
        let ty = fy - iy as f64;
        for x in 0..size {
            let fx = (x as f64 + 0.5) / step;
            let ix = (fx.floor() as usize).min(cells - 1);
            let tx = fx - ix as f64;
            let at = |i: usize, j: usize| lattice[i * n + j];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// One synthetic `(image, mask)` pair; fully determined by `(seed, index, size)`.
pub fn synthesize(seed: u64, index: u64, size: usize) -> (Grid, MaskImage) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let sz = size as f64;
    loop {
        let count = rng.random_range(1..=3);
        let mut shapes: Vec<Shape> = Vec::with_capacity(count);
        for _ in 0..50 {
            if shapes.len() == count {
                break;
            }
            let s = random_shape(&mut rng, sz);
            if shapes.iter().all(|o| !overlaps(o.bbox(), s.bbox(), 2.0)) {
                shapes.push(s);
            }
        }
        let mask = MaskImage::from_fn(size, size, |i, j| {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            shapes.iter().any(|s| s.contains(x, y))
        });
        let frac = mask.count_ones() as f64 / (size * size) as f64;
        if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            continue;
        }

        let base = rng.random_range(0.2..0.8);
        let contrast = rng.random_range(0.25..0.4);
        let fg = if base > 0.5 { base - contrast } else { base + contrast };
        let noise = value_noise(&mut rng, size, 4.max(size / 8));
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (gx, gy) = (angle.cos() * 0.15, angle.sin() * 0.15);
        let values = (0..size * size)
            .map(|p| {
                let (i, j) = (p / size, p % size);
                let grain = rng.random_range(-0.04..0.04);
                let v = if mask.data()[p] == 1 {
                    fg + grain
                } else {
                    let (u, v) = (j as f64 / sz - 0.5, i as f64 / sz - 0.5);
                    base + 0.3 * (noise[p] - 0.5) + gx * u + gy * v + grain
                };
                v.clamp(0.0, 1.0)
            })
            .collect();
        return (Grid::new(size, size, values).expect("size²"), mask);
    }
}

/// Writes `n` samples under `out_root/{images,masks}` plus `splits.txt`.
pub fn generate_synthetic(seed: u64, n: usize, size: usize, out_root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = out_root.as_ref();
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if size < 8 {
        return Err(Error::InvalidArgument(format!("image size must be ≥ 8, got {size}")));
    }
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let width = n.to_string().len().max(4);
    let mut entries = Vec::with_capacity(n);
    let (ntr, nva, _) = default_split_sizes(n);
    for i in 0..n {
        let id = format!("sample_{i:0width$}");
        let (image, mask) = synthesize(seed, i as u64, size);
        save_pgm(&image, root.join("images").join(format!("{id}.pgm")))?;
        let mask_grid = Grid::new(size, size, mask.to_values())?;
        save_pgm(&mask_grid, root.join("masks").join(format!("{id}.pgm")))?;
        let split = if i < ntr {
            Split::Train
        } else if i < ntr + nva {
            Split::Val
        } else {
            Split::Test
        };
        entries.push((id, split));
    }
    write_splits(root, &entries)?;
    scan_dataset(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic_and_in_range() {
        for i in 0..20 {
            let (a, ma) = synthesize(7, i, 32);
            let (b, mb) = synthesize(7, i, 32);
            assert_eq!(a, b);
            assert_eq!(ma, mb);
            let frac = ma.count_ones() as f64 / (32.0 * 32.0);
            assert!((MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac), "{frac}");
            assert!(a.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_ne!(synthesize(7, 0, 32).1, synthesize(8, 0, 32).1);
    }

    #[test]
    fn triangle_contains_centroid() {
        let t = Shape::Triangle {
            v: [(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)],
        };
        assert!(t.contains(1.0, 1.0));
        assert!(!t.contains(3.0, 3.0));
    }
}
