//! Assisted excitation: a ground-truth-masked, channel-max excitation term,
//! scaled by the curriculum factor and broadcast-added onto every channel.
//!
//! For an activation tensor `a` (C×h×w), a binary grid `g` at the same
//! resolution and factor `α`:
//!
//! ```text
//! m(i,j)    = max_c a(c,i,j)
//! e(i,j)    = α · g(i,j) · m(i,j)
//! a'(c,i,j) = a(c,i,j) + e(i,j)
//! ```

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::metrics::MaskImage;
use crate::network::Site;
use crate::tensor::{Tape, Tensor, Var};

static FIELDS_BUILT: AtomicUsize = AtomicUsize::new(0);

/// Number of [`ExcitationField`]s constructed by this process so far.
pub fn fields_built() -> usize {
    FIELDS_BUILT.load(Ordering::Relaxed)
}

/// Rule deciding whether a feature-map cell contains the object.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DownscaleMode {
    /// Any foreground pixel in the block.
    #[default]
    Any,
    /// Strictly more than half of the block.
    Majority,
    /// The block's centre pixel (upper-left of the centre on even blocks).
    Nearest,
}

/// How the excitation term is differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GradientMode {
    /// Differentiate through the channel max.
    #[default]
    Flow,
    /// Treat the excitation as a constant.
    Detach,
}

impl FromStr for DownscaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(DownscaleMode::Any),
            "majority" => Ok(DownscaleMode::Majority),
            "nearest" => Ok(DownscaleMode::Nearest),
            _ => Err(Error::Config(format!(
                "downscale_mode must be any, majority or nearest, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for DownscaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DownscaleMode::Any => "any",
            DownscaleMode::Majority => "majority",
            DownscaleMode::Nearest => "nearest",
        })
    }
}

impl FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flow" => Ok(GradientMode::Flow),
            "detach" => Ok(GradientMode::Detach),
            _ => Err(Error::Config(format!(
                "gradient_mode must be flow or detach, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientMode::Flow => "flow",
            GradientMode::Detach => "detach",
        })
    }
}

/// Where and how excitation is applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExcitationConfig {
    pub placements: Vec<Site>,
    pub downscale_mode: DownscaleMode,
    pub gradient_mode: GradientMode,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig {
            placements: Site::default_sites(),
            downscale_mode: DownscaleMode::Any,
            gradient_mode: GradientMode::Flow,
        }
    }
}

/// Row-major `h×w` matrix of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Matrix {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(
                "matrix",
                format!("{height}×{width} vs {} values", values.len()),
            ));
        }
        Ok(Matrix { height, width, values })
    }
}

/// Binary object-location map at feature-map resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthGrid {
    height: usize,
    width: usize,
    cells: Vec<u8>,
}

impl GroundTruthGrid {
    pub fn new(height: usize, width: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != height * width || cells.iter().any(|&c| c > 1) {
            return Err(Error::InvalidArgument(format!(
                "grid must hold {} binary cells",
                height * width
            )));
        }
        Ok(GroundTruthGrid { height, width, cells })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }
}

/// The per-cell excitation `e(i,j)` before it is broadcast over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcitationField {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ExcitationField {
    fn new(height: usize, width: usize, values: Vec<f64>) -> Self {
        FIELDS_BUILT.fetch_add(1, Ordering::Relaxed);
        ExcitationField { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Downscales a full-resolution mask to an `h×w` grid. Cell `(i,j)` covers
/// rows `[⌊iH/h⌋, ⌊(i+1)H/h⌋)` and the analogous columns.
pub fn downscale_mask(mask: &MaskImage, (h, w): (usize, usize), mode: DownscaleMode) -> Result<GroundTruthGrid> {
    let (mh, mw) = (mask.height(), mask.width());
    if h == 0 || w == 0 || h > mh || w > mw {
        return Err(Error::shape(
            "downscale_mask",
            format!("cannot downscale a {mh}×{mw} mask to {h}×{w}"),
        ));
    }
    let mut cells = Vec::with_capacity(h * w);
    for i in 0..h {
        let (r0, r1) = (i * mh / h, (i + 1) * mh / h);
        for j in 0..w {
            let (c0, c1) = (j * mw / w, (j + 1) * mw / w);
            let cell = match mode {
                DownscaleMode::Any => (r0..r1).any(|r| (c0..c1).any(|c| mask.get(r, c) == 1)),
                DownscaleMode::Majority => {
                    let ones: usize = (r0..r1)
                        .map(|r| (c0..c1).filter(|&c| mask.get(r, c) == 1).count())
                        .sum();
                    2 * ones > (r1 - r0) * (c1 - c0)
                }
                DownscaleMode::Nearest => mask.get(r0 + (r1 - r0 - 1) / 2, c0 + (c1 - c0 - 1) / 2) == 1,
            };
            cells.push(u8::from(cell));
        }
    }
    Ok(GroundTruthGrid {
        height: h,
        width: w,
        cells,
    })
}

/// Maximum over channels at every cell.
pub fn channel_max(a: &Tensor) -> Result<Matrix> {
    let (_, h, w) = a.chw()?;
    let (values, _) = max_and_argmax(a)?;
    Matrix::new(h, w, values)
}

/// Lowest channel index attaining the maximum at every cell.
pub fn channel_argmax(a: &Tensor) -> Result<Vec<usize>> {
    Ok(max_and_argmax(a)?.1)
}

fn max_and_argmax(a: &Tensor) -> Result<(Vec<f64>, Vec<usize>)> {
    let (c, h, w) = a.chw()?;
    if c == 0 {
        return Err(Error::shape("channel_max", "tensor has no channels"));
    }
    let hw = h * w;
    let data = a.data();
    let mut best = data[..hw].to_vec();
    let mut arg = vec![0usize; hw];
    for ch in 1..c {
        for (cell, &v) in data[ch * hw..(ch + 1) * hw].iter().enumerate() {
            if v > best[cell] {
                best[cell] = v;
                arg[cell] = ch;
            }
        }
    }
    Ok((best, arg))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "excitation factor must be finite and ≥ 0, got {alpha}"
        )));
    }
    Ok(())
}

/// `e(i,j) = α · g(i,j) · m(i,j)`.
pub fn build_excitation(m: &Matrix, g: &GroundTruthGrid, alpha: f64) -> Result<ExcitationField> {
    check_alpha(alpha)?;
    if (m.height, m.width) != (g.height, g.width) {
        return Err(Error::shape(
            "build_excitation",
            format!("matrix {}×{} vs grid {}×{}", m.height, m.width, g.height, g.width),
        ));
    }
    let values = m
        .values
        .iter()
        .zip(&g.cells)
        .map(|(&m, &g)| alpha * f64::from(g) * m)
        .collect();
    Ok(ExcitationField::new(m.height, m.width, values))
}

/// Adds `e(i,j)` to every channel of `a` at `(i,j)`. Cells with a zero
/// field are left bit-identical.
pub fn apply_excitation(a: &Tensor, e: &ExcitationField) -> Result<Tensor> {
    let (c, h, w) = a.chw()?;
    if (h, w) != (e.height, e.width) {
        return Err(Error::shape(
            "apply_excitation",
            format!("tensor {h}×{w} vs field {}×{}", e.height, e.width),
        ));
    }
    let hw = h * w;
    let mut out = a.data().to_vec();
    for ch in 0..c {
        for (o, &v) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(&e.values) {
            if v != 0.0 {
                *o += v;
            }
        }
    }
    Tensor::new([c, h, w], out)
}

/// Records the full excitation of `a` on the tape.
///
/// Under [`GradientMode::Flow`] the excitation gradient also reaches the
/// per-cell argmax channel; under [`GradientMode::Detach`] only the
/// identity path is differentiated.
pub fn assisted_excitation(
    tape: &mut Tape,
    a: Var,
    mask: &MaskImage,
    alpha: f64,
    downscale_mode: DownscaleMode,
    gradient_mode: GradientMode,
) -> Result<Var> {
    check_alpha(alpha)?;
    let t = tape.value(a);
    let (_, h, w) = t.chw()?;
    let grid = downscale_mask(mask, (h, w), downscale_mode)?;
    let (max, argmax) = max_and_argmax(t)?;
    let field = build_excitation(&Matrix::new(h, w, max)?, &grid, alpha)?;
    let route = match gradient_mode {
        GradientMode::Flow => {
            let coeff = grid.cells.iter().map(|&g| alpha * f64::from(g)).collect();
            Some((argmax, coeff))
        }
        GradientMode::Detach => None,
    };
    tape.spatial_add(a, &field.values, route)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_channels() -> Tensor {
        Tensor::new([2, 2, 2], vec![1., 2., 3., 4., 5., 1., 0., 2.]).unwrap()
    }

    #[test]
    fn single_pixel_stays_local() {
        let mask = MaskImage::from_fn(4, 4, |i, j| i == 0 && j == 0);
        let g = downscale_mask(&mask, (2, 2), DownscaleMode::Any).unwrap();
        assert_eq!(g.cells(), &[1, 0, 0, 0]);
    }

    #[test]
    fn any_versus_majority() {
        let mask = MaskImage::from_fn(4, 4, |i, j| i == 2 && j == 3);
        let any = downscale_mask(&mask, (2, 2), DownscaleMode::Any).unwrap();
        let maj = downscale_mask(&mask, (2, 2), DownscaleMode::Majority).unwrap();
        assert_eq!(any.cells(), &[0, 0, 0, 1]);
        assert_eq!(maj.cells(), &[0, 0, 0, 0]);
    }

    #[test]
    fn nearest_takes_upper_left_centre() {
        let mask = MaskImage::from_fn(4, 4, |i, j| (i, j) == (0, 0) || (i, j) == (3, 3));
        let g = downscale_mask(&mask, (2, 2), DownscaleMode::Nearest).unwrap();
        assert_eq!(g.cells(), &[1, 0, 0, 0]);
        let mask = MaskImage::from_fn(3, 3, |i, j| (i, j) == (1, 1));
        let g = downscale_mask(&mask, (1, 1), DownscaleMode::Nearest).unwrap();
        assert_eq!(g.cells(), &[1]);
    }

    #[test]
    fn full_mask_downscales_to_full_grid() {
        let mask = MaskImage::from_fn(7, 5, |_, _| true);
        for mode in [DownscaleMode::Any, DownscaleMode::Majority, DownscaleMode::Nearest] {
            let g = downscale_mask(&mask, (3, 2), mode).unwrap();
            assert!(g.cells().iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn downscale_rejects_upscaling() {
        let mask = MaskImage::zeros(2, 2);
        assert!(downscale_mask(&mask, (4, 2), DownscaleMode::Any).is_err());
    }

    #[test]
    fn channel_max_values_and_ties() {
        let m = channel_max(&two_channels()).unwrap();
        assert_eq!(m.values, vec![5., 2., 3., 4.]);
        let tied = Tensor::full([3, 1, 2], 1.0);
        assert_eq!(channel_argmax(&tied).unwrap(), vec![0, 0]);
    }

    #[test]
    fn excitation_hand_case() {
        let m = Matrix::new(2, 2, vec![5., 2., 3., 4.]).unwrap();
        let g = GroundTruthGrid::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let e = build_excitation(&m, &g, 0.5).unwrap();
        assert_eq!(e.values(), &[2.5, 0.0, 0.0, 2.0]);
        let out = apply_excitation(&two_channels(), &e).unwrap();
        assert_eq!(out.data(), &[3.5, 2., 3., 6., 7.5, 1., 0., 4.]);
    }

    #[test]
    fn negative_alpha_is_rejected() {
        let m = Matrix::new(1, 1, vec![1.0]).unwrap();
        let g = GroundTruthGrid::new(1, 1, vec![1]).unwrap();
        assert!(build_excitation(&m, &g, -0.1).is_err());
        assert!(build_excitation(&m, &g, f64::NAN).is_err());
    }

    #[test]
    fn field_counter_increments() {
        let before = fields_built();
        let m = Matrix::new(1, 1, vec![1.0]).unwrap();
        let g = GroundTruthGrid::new(1, 1, vec![1]).unwrap();
        build_excitation(&m, &g, 1.0).unwrap();
        assert!(fields_built() > before);
    }
}
