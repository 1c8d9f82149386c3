// SPDX-License-Identifier: Apache-2.0
//! Mask quality metrics: MSE, EPE violations, PVB area and the contest score.

use crate::layout::LayoutRaster;
use crate::litho::ResistImage;
use crate::{Error, Grid, Result};

/// Squared Frobenius distance between the printed image and the target. For
/// binary inputs this is the number of differing pixels.
pub fn mse(z: &ResistImage, zt: &LayoutRaster) -> Result<f64> {
    z.pixels.same_dims(zt.pixels())?;
    Ok(z.pixels
        .as_slice()
        .iter()
        .zip(zt.pixels().as_slice())
        .filter(|(a, b)| a != b)
        .count() as f64)
}

/// Number of pixels on which the corner images do not all agree.
pub fn pvb_area(corners: &[ResistImage]) -> Result<u64> {
    let first = corners
        .first()
        .ok_or_else(|| Error::param("corners", "at least one corner image is required"))?;
    for c in &corners[1..] {
        first.pixels.same_dims(&c.pixels)?;
    }
    let n = first.pixels.as_slice().len();
    let mut area = 0;
    for i in 0..n {
        let v = first.pixels.as_slice()[i];
        if corners[1..].iter().any(|c| c.pixels.as_slice()[i] != v) {
            area += 1;
        }
    }
    Ok(area)
}

/// Per-pixel PVB membership, for rendering.
pub fn pvb_map(corners: &[ResistImage]) -> Result<Grid<u8>> {
    let first = corners
        .first()
        .ok_or_else(|| Error::param("corners", "at least one corner image is required"))?;
    for c in &corners[1..] {
        first.pixels.same_dims(&c.pixels)?;
    }
    let (h, w) = first.dims();
    Ok(Grid::from_fn(h, w, |y, x| {
        let v = *first.pixels.get(y, x);
        u8::from(corners[1..].iter().any(|c| *c.pixels.get(y, x) != v))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpeSpec {
    pub tolerance_nm: f64,
    pub sample_spacing_nm: f64,
    /// Edges shorter than this get a single midpoint probe.
    pub min_edge_len_nm: f64,
}

impl Default for EpeSpec {
    fn default() -> Self {
        EpeSpec {
            tolerance_nm: 15.0,
            sample_spacing_nm: 40.0,
            min_edge_len_nm: 40.0,
        }
    }
}

impl EpeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_nm > 0.0) {
            return Err(Error::param("tolerance_nm", "must be positive"));
        }
        if !(self.sample_spacing_nm > 0.0) {
            return Err(Error::param("sample_spacing_nm", "must be positive"));
        }
        if !(self.min_edge_len_nm >= 0.0) {
            return Err(Error::param("min_edge_len_nm", "must be non-negative"));
        }
        Ok(())
    }
}

/// Which side of a shape a target edge bounds; the name is the direction of
/// the outward normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeOrientation {
    Left,
    Right,
    Top,
    Bottom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpeProbe {
    pub x_nm: f64,
    pub y_nm: f64,
    pub orientation: EdgeOrientation,
    /// Distance to the nearest printed contour along the edge normal;
    /// infinite when no contour lies within the search window.
    pub displacement_nm: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpeReport {
    pub violations: u64,
    pub probes: Vec<EpeProbe>,
}

/// A maximal straight run of target boundary.
#[derive(Debug, Clone, Copy)]
struct Edge {
    orientation: EdgeOrientation,
    /// Boundary index across the edge (column boundary for Left/Right).
    across: usize,
    /// First pixel index along the edge.
    start: usize,
    len: usize,
}

fn pixel_or_dark(g: &Grid<u8>, y: isize, x: isize) -> u8 {
    if y < 0 || x < 0 || y as usize >= g.height() || x as usize >= g.width() {
        0
    } else {
        *g.get(y as usize, x as usize)
    }
}

fn extract_edges(t: &Grid<u8>) -> Vec<Edge> {
    let (h, w) = t.dims();
    let mut edges = Vec::new();
    // vertical boundaries between columns xb-1 and xb
    for xb in 0..=w {
        let mut run: Option<Edge> = None;
        for y in 0..=h {
            let kind = if y < h {
                let l = pixel_or_dark(t, y as isize, xb as isize - 1);
                let r = pixel_or_dark(t, y as isize, xb as isize);
                match (l, r) {
                    (0, 1) => Some(EdgeOrientation::Left),
                    (1, 0) => Some(EdgeOrientation::Right),
                    _ => None,
                }
            } else {
                None
            };
            match (&mut run, kind) {
                (Some(e), Some(k)) if e.orientation == k => e.len += 1,
                (cur, k) => {
                    if let Some(e) = cur.take() {
                        edges.push(e);
                    }
                    *cur = k.map(|orientation| Edge {
                        orientation,
                        across: xb,
                        start: y,
                        len: 1,
                    });
                }
            }
        }
    }
    // horizontal boundaries between rows yb-1 and yb
    for yb in 0..=h {
        let mut run: Option<Edge> = None;
        for x in 0..=w {
            let kind = if x < w {
                let a = pixel_or_dark(t, yb as isize - 1, x as isize);
                let b = pixel_or_dark(t, yb as isize, x as isize);
                match (a, b) {
                    (0, 1) => Some(EdgeOrientation::Top),
                    (1, 0) => Some(EdgeOrientation::Bottom),
                    _ => None,
                }
            } else {
                None
            };
            match (&mut run, kind) {
                (Some(e), Some(k)) if e.orientation == k => e.len += 1,
                (cur, k) => {
                    if let Some(e) = cur.take() {
                        edges.push(e);
                    }
                    *cur = k.map(|orientation| Edge {
                        orientation,
                        across: yb,
                        start: x,
                        len: 1,
                    });
                }
            }
        }
    }
    edges
}

/// Probe offsets (nm from the edge start). Long edges get
/// `floor(L / spacing) + 1` probes at `spacing` pitch, centered on the edge;
/// short edges get one midpoint probe.
fn probe_offsets(len_nm: f64, spec: &EpeSpec) -> Vec<f64> {
    if len_nm < spec.min_edge_len_nm {
        return vec![len_nm / 2.0];
    }
    let n = (len_nm / spec.sample_spacing_nm).floor() as usize + 1;
    let start = (len_nm - (n - 1) as f64 * spec.sample_spacing_nm) / 2.0;
    (0..n)
        .map(|j| start + j as f64 * spec.sample_spacing_nm)
        .collect()
}

/// Pixel rows (or columns) sampled for an offset. An offset landing exactly
/// between two pixel centers samples both.
fn probe_pixels(offset_nm: f64, nm_per_px: f64, len_px: usize) -> Vec<usize> {
    let f = offset_nm / nm_per_px - 0.5;
    let lo = f.floor();
    let frac = f - lo;
    let clamp = |v: f64| v.clamp(0.0, (len_px - 1) as f64) as usize;
    if frac < 0.5 {
        vec![clamp(lo)]
    } else if frac > 0.5 {
        vec![clamp(lo + 1.0)]
    } else {
        let (a, b) = (clamp(lo), clamp(lo + 1.0));
        if a == b {
            vec![a]
        } else {
            vec![a, b]
        }
    }
}

/// Distance in pixels from boundary `across` to the nearest printed
/// transition along a line, searching `window` pixels either way.
fn nearest_crossing(line: impl Fn(isize) -> u8, across: usize, window: usize) -> Option<usize> {
    let b = across as isize;
    for d in 0..=window as isize {
        for pos in [b - d, b + d] {
            if line(pos - 1) != line(pos) {
                return Some(d as usize);
            }
        }
    }
    None
}

/// Counts EPE violations of the printed image `z` against target `zt`.
pub fn epe_violations(z: &ResistImage, zt: &LayoutRaster, spec: &EpeSpec) -> Result<EpeReport> {
    spec.validate()?;
    z.pixels.same_dims(zt.pixels())?;
    let npp = zt.nm_per_px();
    let window = (4.0 * spec.tolerance_nm / npp).ceil() as usize;
    let mut probes = Vec::new();
    for e in extract_edges(zt.pixels()) {
        let len_nm = e.len as f64 * npp;
        for off in probe_offsets(len_nm, spec) {
            let mut worst: Option<f64> = Some(0.0);
            for p in probe_pixels(off, npp, e.len) {
                let along = e.start + p;
                let d = match e.orientation {
                    EdgeOrientation::Left | EdgeOrientation::Right => nearest_crossing(
                        |x| pixel_or_dark(&z.pixels, along as isize, x),
                        e.across,
                        window,
                    ),
                    EdgeOrientation::Top | EdgeOrientation::Bottom => nearest_crossing(
                        |y| pixel_or_dark(&z.pixels, y, along as isize),
                        e.across,
                        window,
                    ),
                };
                worst = match (worst, d) {
                    (Some(a), Some(b)) => Some(a.max(b as f64 * npp)),
                    _ => None,
                };
            }
            let displacement_nm = worst.unwrap_or(f64::INFINITY);
            let (x_nm, y_nm) = match e.orientation {
                EdgeOrientation::Left | EdgeOrientation::Right => {
                    (e.across as f64 * npp, e.start as f64 * npp + off)
                }
                EdgeOrientation::Top | EdgeOrientation::Bottom => {
                    (e.start as f64 * npp + off, e.across as f64 * npp)
                }
            };
            probes.push(EpeProbe {
                x_nm,
                y_nm,
                orientation: e.orientation,
                displacement_nm,
                violated: displacement_nm > spec.tolerance_nm,
            });
        }
    }
    let violations = probes.iter().filter(|p| p.violated).count() as u64;
    Ok(EpeReport { violations, probes })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreWeights {
    pub w_runtime: f64,
    pub w_epe: f64,
    pub w_pvb: f64,
    pub w_shape: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            w_runtime: 1.0,
            w_epe: 5000.0,
            w_pvb: 4.0,
            w_shape: 10000.0,
        }
    }
}

/// `w_runtime * runtime + w_epe * epe + w_pvb * pvb + w_shape * shape`.
///
/// EPE and PVB are reals so that averaged table rows can be scored directly.
pub fn score(
    runtime_s: f64,
    epe: f64,
    pvb: f64,
    shape_violations: f64,
    w: &ScoreWeights,
) -> Result<f64> {
    for (name, v) in [
        ("runtime_s", runtime_s),
        ("epe", epe),
        ("pvb", pvb),
        ("shape_violations", shape_violations),
    ] {
        if !(v >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "score",
                reason: format!("{name} must be non-negative, got {v}"),
            });
        }
    }
    Ok(w.w_runtime * runtime_s + w.w_epe * epe + w.w_pvb * pvb + w.w_shape * shape_violations)
}
