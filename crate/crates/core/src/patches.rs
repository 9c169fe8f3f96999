//! Patch extraction strategies and windowed stitching.
//!
//! Images are sliced into same-sized patches that are assumed to share one
//! blur. After processing, patches are blended back with a separable
//! triangular (Bartlett) window and normalized by the accumulated weight.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::io::write_atomic;
use crate::imaging::Image;
use crate::scalar::Scalar;

/// Floor of the stitching window so patches touching the image border
/// still carry weight there.
pub const WINDOW_FLOOR: f64 = 1e-6;

/// Rectangle of a patch inside its source image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Placement {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Placement {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn fits(&self, image_h: usize, image_w: usize) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= image_h && self.left + self.width <= image_w
    }
}

/// `N` same-shaped images processed together, optionally tagged with where
/// they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStack<T = f64> {
    patches: Vec<Image<T>>,
    placements: Option<Vec<Placement>>,
}

impl<T: Scalar> PatchStack<T> {
    pub fn new(patches: Vec<Image<T>>) -> Result<Self> {
        Self::build(patches, None)
    }

    pub fn with_placements(patches: Vec<Image<T>>, placements: Vec<Placement>) -> Result<Self> {
        Self::build(patches, Some(placements))
    }

    fn build(patches: Vec<Image<T>>, placements: Option<Vec<Placement>>) -> Result<Self> {
        let first = patches
            .first()
            .ok_or_else(|| Error::invalid("a patch stack needs at least one patch"))?;
        if let Some(bad) = patches.iter().find(|p| !p.same_shape(first)) {
            return Err(Error::shape(format!(
                "heterogeneous stack: {:?} vs {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        if let Some(pl) = &placements {
            if pl.len() != patches.len() {
                return Err(Error::shape(format!(
                    "{} placements for {} patches",
                    pl.len(),
                    patches.len()
                )));
            }
            let (h, w, _) = first.shape();
            if pl.iter().any(|p| p.height != h || p.width != w) {
                return Err(Error::shape("placement extent differs from patch shape"));
            }
        }
        Ok(Self {
            patches,
            placements,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// `(height, width, channels)` shared by all patches.
    pub fn patch_shape(&self) -> (usize, usize, usize) {
        self.patches[0].shape()
    }

    pub fn patches(&self) -> &[Image<T>] {
        &self.patches
    }

    pub fn placements(&self) -> Option<&[Placement]> {
        self.placements.as_deref()
    }

    pub fn into_parts(self) -> (Vec<Image<T>>, Option<Vec<Placement>>) {
        (self.patches, self.placements)
    }

    /// Replaces the images, keeping placements.
    pub fn with_patches(&self, patches: Vec<Image<T>>) -> Result<Self> {
        Self::build(patches, self.placements.clone())
    }

    /// Reorders slots: output slot `i` takes input slot `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::shape("permutation length differs from stack size"));
        }
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || seen[i] {
                return Err(Error::invalid("not a permutation"));
            }
            seen[i] = true;
        }
        let patches = order.iter().map(|&i| self.patches[i].clone()).collect();
        let placements = self
            .placements
            .as_ref()
            .map(|pl| order.iter().map(|&i| pl[i]).collect());
        Self::build(patches, placements)
    }

    /// Splits into consecutive stacks of `n` slots (the last may be shorter).
    pub fn chunks(&self, n: usize) -> Result<Vec<Self>> {
        if n == 0 {
            return Err(Error::invalid("chunk size must be positive"));
        }
        (0..self.len())
            .step_by(n)
            .map(|s| {
                let e = (s + n).min(self.len());
                Self::build(
                    self.patches[s..e].to_vec(),
                    self.placements.as_ref().map(|p| p[s..e].to_vec()),
                )
            })
            .collect()
    }

    /// Concatenates stacks in order.
    pub fn concat(stacks: &[Self]) -> Result<Self> {
        let patches = stacks.iter().flat_map(|s| s.patches.iter().cloned()).collect();
        let placements = if stacks.iter().all(|s| s.placements.is_some()) {
            Some(
                stacks
                    .iter()
                    .flat_map(|s| s.placements.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        Self::build(patches, placements)
    }
}

/// Top-left offsets along one axis: regular stride, last tile snapped to the border.
fn axis_positions(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    loop {
        out.push(pos);
        if pos + patch >= extent {
            break;
        }
        let next = pos + stride;
        if next + patch > extent {
            out.push(extent - patch);
            break;
        }
        pos = next;
    }
    out
}

/// Regular grid of square patches with `stride = round(patch * (1 - overlap_frac))`.
pub fn tile_uniform<T: Scalar>(image: &Image<T>, patch: usize, overlap_frac: f64) -> Result<PatchStack<T>> {
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::invalid(format!(
            "overlap fraction must be in [0, 1), got {overlap_frac}"
        )));
    }
    let (h, w, _) = image.shape();
    if patch == 0 || patch > h.min(w) {
        return Err(Error::invalid(format!(
            "patch {patch} exceeds image {h}x{w}"
        )));
    }
    let stride = ((patch as f64 * (1.0 - overlap_frac)).round() as usize).max(1);
    let rows = axis_positions(h, patch, stride);
    let cols = axis_positions(w, patch, stride);
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    let mut placements = Vec::with_capacity(rows.len() * cols.len());
    for &top in &rows {
        for &left in &cols {
            patches.push(image.crop(top, left, patch, patch)?);
            placements.push(Placement::new(top, left, patch, patch));
        }
    }
    PatchStack::with_placements(patches, placements)
}

/// A top-left-quadrant placement plus its mirrors about the optical center.
///
/// `location` is the patch's top-left corner `(row, col)`, `center` the
/// optical center in pixel-boundary coordinates. Returned order: original,
/// mirrored left-right, mirrored top-bottom, both.
pub fn quadrant_symmetric_placements(
    image_h: usize,
    image_w: usize,
    patch: usize,
    location: (usize, usize),
    center: (usize, usize),
) -> Result<[Placement; 4]> {
    let (u, v) = location;
    let (cu, cv) = center;
    if patch == 0 || patch > image_h || patch > image_w {
        return Err(Error::invalid(format!(
            "patch {patch} does not fit a {image_h}x{image_w} image"
        )));
    }
    if cu > image_h || cv > image_w {
        return Err(Error::invalid("optical center outside the image"));
    }
    if u + patch > cu || v + patch > cv {
        return Err(Error::invalid(format!(
            "patch at ({u},{v}) of size {patch} crosses the center lines ({cu},{cv})"
        )));
    }
    let mirror_row = (2 * cu - (u + patch)).min(image_h - patch);
    let mirror_col = (2 * cv - (v + patch)).min(image_w - patch);
    Ok([
        Placement::new(u, v, patch, patch),
        Placement::new(u, mirror_col, patch, patch),
        Placement::new(mirror_row, v, patch, patch),
        Placement::new(mirror_row, mirror_col, patch, patch),
    ])
}

/// Crops the images at the given placements.
pub fn extract<T: Scalar>(image: &Image<T>, placements: &[Placement]) -> Result<PatchStack<T>> {
    let patches = placements
        .iter()
        .map(|p| image.crop(p.top, p.left, p.height, p.width))
        .collect::<Result<Vec<_>>>()?;
    PatchStack::with_placements(patches, placements.to_vec())
}

/// Triangular weights `1 - |2i/(P-1) - 1|`, floored at [`WINDOW_FLOOR`].
pub fn bartlett_window(len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![1.0; len];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|i| (1.0 - (2.0 * i as f64 / denom - 1.0).abs()).max(WINDOW_FLOOR))
        .collect()
}

/// Overlap-add with a separable Bartlett window, then division by the
/// accumulated weight. Accumulation runs in stack order.
pub fn stitch<T: Scalar>(stack: &PatchStack<T>, out_h: usize, out_w: usize) -> Result<Image<T>> {
    let placements = stack
        .placements()
        .ok_or_else(|| Error::invalid("stitching requires placements"))?;
    let (ph, pw, channels) = stack.patch_shape();
    if let Some(p) = placements.iter().find(|p| !p.fits(out_h, out_w)) {
        return Err(Error::invalid(format!(
            "placement {p:?} outside {out_h}x{out_w}"
        )));
    }
    let wy: Vec<T> = bartlett_window(ph).into_iter().map(T::lit).collect();
    let wx: Vec<T> = bartlett_window(pw).into_iter().map(T::lit).collect();
    let mut weight = vec![T::zero(); out_h * out_w];
    let mut acc = Image::zeros(out_h, out_w, channels)?;
    for (patch, pl) in stack.patches().iter().zip(placements) {
        for y in 0..ph {
            for x in 0..pw {
                let wgt = wy[y] * wx[x];
                let idx = (pl.top + y) * out_w + pl.left + x;
                weight[idx] += wgt;
                for c in 0..channels {
                    acc.plane_mut(c)[idx] += wgt * patch.get(c, y, x);
                }
            }
        }
    }
    if let Some(idx) = weight.iter().position(|&w| w <= T::zero()) {
        return Err(Error::UncoveredPixel {
            row: idx / out_w,
            col: idx % out_w,
        });
    }
    let min_w = weight.iter().fold(T::infinity(), |m, &w| m.min(w));
    log::debug!("stitch weight map min = {min_w}");
    for c in 0..channels {
        for (v, &w) in acc.plane_mut(c).iter_mut().zip(&weight) {
            *v /= w;
        }
    }
    Ok(acc)
}

pub fn format_placements(placements: &[Placement]) -> String {
    let mut out = String::new();
    for p in placements {
        let _ = writeln!(out, "{} {} {} {}", p.top, p.left, p.height, p.width);
    }
    out
}

pub fn parse_placements(path: &Path, text: &str) -> Result<Vec<Placement>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, line)| {
            let v: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, format!("line {}: expected integers", i + 1)))?;
            match v.as_slice() {
                [t, l, h, w] => Ok(Placement::new(*t, *l, *h, *w)),
                _ => Err(Error::parse(path, format!("line {}: expected 'top left h w'", i + 1))),
            }
        })
        .collect()
}

pub fn write_placements(path: &Path, placements: &[Placement]) -> Result<()> {
    write_atomic(path, format_placements(placements).as_bytes())
}

pub fn read_placements(path: &Path) -> Result<Vec<Placement>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_placements(path, &text)
}
