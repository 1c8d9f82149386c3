// SPDX-License-Identifier: Apache-2.0
//! Target designs: rectangle lists, rasters and synthetic generators.

use crate::rng::DetRng;
use crate::{Error, Grid, Result};

/// Binary target design on a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutRaster {
    pixels: Grid<u8>,
    nm_per_px: f64,
}

impl LayoutRaster {
    pub fn new(pixels: Grid<u8>, nm_per_px: f64) -> Result<Self> {
        if !(nm_per_px > 0.0 && nm_per_px.is_finite()) {
            return Err(Error::param(
                "nm_per_px",
                format!("must be positive, got {nm_per_px}"),
            ));
        }
        if pixels.height() == 0 || pixels.width() == 0 {
            return Err(Error::param("pixels", "raster must be non-empty"));
        }
        if let Some(v) = pixels.as_slice().iter().find(|&&v| v > 1) {
            return Err(Error::param(
                "pixels",
                format!("non-binary pixel value {v}"),
            ));
        }
        Ok(LayoutRaster { pixels, nm_per_px })
    }

    pub fn zeros(height: usize, width: usize, nm_per_px: f64) -> Result<Self> {
        Self::new(Grid::filled(height, width, 0), nm_per_px)
    }

    pub fn pixels(&self) -> &Grid<u8> {
        &self.pixels
    }

    pub fn nm_per_px(&self) -> f64 {
        self.nm_per_px
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dims()
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.as_slice().iter().filter(|&&v| v == 1).count()
    }

    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / self.pixels.as_slice().len() as f64
    }

    pub fn to_real(&self) -> Grid<f64> {
        self.pixels.map(|&v| v as f64)
    }

    /// Sub-raster; reads beyond the border are dark.
    pub fn window(&self, y0: isize, x0: isize, height: usize, width: usize) -> LayoutRaster {
        LayoutRaster {
            pixels: self.pixels.window(y0, x0, height, width),
            nm_per_px: self.nm_per_px,
        }
    }

    pub fn rot90(&self) -> LayoutRaster {
        LayoutRaster {
            pixels: self.pixels.rot90(),
            nm_per_px: self.nm_per_px,
        }
    }
}

/// Axis-aligned rectangle in nm, half-open: `[x, x+w) x [y, y+h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: u64,
    pub y: u64,
    pub w: u64,
    pub h: u64,
}

impl Rect {
    pub fn new(x: u64, y: u64, w: u64, h: u64) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w * self.h
    }

    /// Chebyshev gap between the two rectangles (0 when they touch or overlap).
    pub fn gap(&self, other: &Rect) -> u64 {
        let gx =
            (other.x.saturating_sub(self.x + self.w)).max(self.x.saturating_sub(other.x + other.w));
        let gy =
            (other.y.saturating_sub(self.y + self.h)).max(self.y.saturating_sub(other.y + other.h));
        gx.max(gy)
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.x < other.x + other.w
            && other.x < self.x + self.w
            && self.y < other.y + other.h
            && other.y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RectList {
    canvas_w_nm: u64,
    canvas_h_nm: u64,
    rects: Vec<Rect>,
}

impl RectList {
    pub fn new(canvas_w_nm: u64, canvas_h_nm: u64) -> Result<Self> {
        if canvas_w_nm == 0 || canvas_h_nm == 0 {
            return Err(Error::param("canvas", "canvas dimensions must be positive"));
        }
        Ok(RectList {
            canvas_w_nm,
            canvas_h_nm,
            rects: Vec::new(),
        })
    }

    pub fn with_rects(canvas_w_nm: u64, canvas_h_nm: u64, rects: Vec<Rect>) -> Result<Self> {
        let mut list = Self::new(canvas_w_nm, canvas_h_nm)?;
        for r in rects {
            list.push(r)?;
        }
        Ok(list)
    }

    /// Appends a rectangle after checking it is non-degenerate and on canvas.
    pub fn push(&mut self, r: Rect) -> Result<()> {
        if r.w == 0 || r.h == 0 {
            return Err(Error::param(
                "rect",
                format!("rectangle #{} has zero width or height", self.rects.len()),
            ));
        }
        if r.x + r.w > self.canvas_w_nm || r.y + r.h > self.canvas_h_nm {
            return Err(Error::RectOutOfCanvas {
                index: self.rects.len(),
                x: r.x,
                y: r.y,
                w: r.w,
                h: r.h,
                canvas_w: self.canvas_w_nm,
                canvas_h: self.canvas_h_nm,
            });
        }
        self.rects.push(r);
        Ok(())
    }

    pub fn canvas_w_nm(&self) -> u64 {
        self.canvas_w_nm
    }

    pub fn canvas_h_nm(&self) -> u64 {
        self.canvas_h_nm
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }
}

fn px_count(extent_nm: u64, nm_per_px: f64) -> Result<usize> {
    let n = extent_nm as f64 / nm_per_px;
    let r = n.round();
    if r < 1.0 || (n - r).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::param(
            "nm_per_px",
            format!("{nm_per_px} nm/px does not divide the {extent_nm} nm canvas"),
        ));
    }
    Ok(r as usize)
}

/// First pixel index whose center lies at or beyond `edge_nm`.
fn first_center_at_or_after(edge_nm: f64, nm_per_px: f64) -> i64 {
    (edge_nm / nm_per_px - 0.5).ceil() as i64
}

/// Pixel-center rasterization; a pixel is set iff its center lies inside any
/// rectangle.
pub fn rasterize(list: &RectList, nm_per_px: f64) -> Result<LayoutRaster> {
    if !(nm_per_px > 0.0 && nm_per_px.is_finite()) {
        return Err(Error::param(
            "nm_per_px",
            format!("must be positive, got {nm_per_px}"),
        ));
    }
    let w = px_count(list.canvas_w_nm, nm_per_px)?;
    let h = px_count(list.canvas_h_nm, nm_per_px)?;
    let mut pixels = Grid::filled(h, w, 0u8);
    for r in &list.rects {
        let span = |lo: u64, len: u64, n: usize| {
            let a = first_center_at_or_after(lo as f64, nm_per_px).clamp(0, n as i64) as usize;
            let b =
                first_center_at_or_after((lo + len) as f64, nm_per_px).clamp(0, n as i64) as usize;
            a..b
        };
        let xs = span(r.x, r.w, w);
        for y in span(r.y, r.h, h) {
            for x in xs.clone() {
                *pixels.get_mut(y, x) = 1;
            }
        }
    }
    LayoutRaster::new(pixels, nm_per_px)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    ViaLike,
    MetalLike,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: PatternKind,
    pub seed: u64,
    /// Target fraction of the canvas covered by shapes, in (0, 1).
    pub density: f64,
    pub min_feature_nm: u64,
    pub min_space_nm: u64,
    pub canvas_nm: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_feature_nm < 1 {
            return Err(Error::param("min_feature_nm", "must be >= 1"));
        }
        if self.min_space_nm < 1 {
            return Err(Error::param("min_space_nm", "must be >= 1"));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return Err(Error::param(
                "density",
                format!("must lie in (0, 1), got {}", self.density),
            ));
        }
        if self.canvas_nm < self.min_feature_nm + 2 * self.min_space_nm {
            return Err(Error::param(
                "canvas_nm",
                "canvas too small for one feature plus border spacing",
            ));
        }
        Ok(())
    }
}

const MAX_ATTEMPTS_PER_SHAPE: usize = 2000;

/// Generates a synthetic design. Shapes keep `min_space_nm` from each other and
/// from the canvas border; the output is a pure function of `spec`.
pub fn generate(spec: &GeneratorSpec) -> Result<RectList> {
    spec.validate()?;
    match spec.kind {
        PatternKind::ViaLike => generate_vias(spec),
        PatternKind::MetalLike => generate_metal(spec),
    }
}

fn generate_vias(spec: &GeneratorSpec) -> Result<RectList> {
    let f = spec.min_feature_nm;
    let s = spec.min_space_nm;
    let c = spec.canvas_nm;
    let pitch = (f + s) as f64;
    let packing_limit = (f * f) as f64 / (pitch * pitch);
    if spec.density > packing_limit {
        return Err(Error::Infeasible(format!(
            "via density {} exceeds the square packing limit {:.4} for feature {f} nm / space {s} nm",
            spec.density, packing_limit
        )));
    }
    let count = ((spec.density * (c * c) as f64) / (f * f) as f64)
        .round()
        .max(1.0) as usize;
    let lo = s;
    let hi = c - s - f;
    let mut rng = DetRng::new(spec.seed);
    let mut placed: Vec<Rect> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ok = false;
        for _ in 0..MAX_ATTEMPTS_PER_SHAPE {
            let x = lo + rng.below(hi - lo + 1);
            let y = lo + rng.below(hi - lo + 1);
            let cand = Rect::new(x, y, f, f);
            if placed.iter().all(|p| p.gap(&cand) >= s) {
                placed.push(cand);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Infeasible(format!(
                "could only place {} of {count} vias under the spacing rule",
                placed.len()
            )));
        }
    }
    RectList::with_rects(c, c, placed)
}

fn generate_metal(spec: &GeneratorSpec) -> Result<RectList> {
    let f = spec.min_feature_nm;
    let s = spec.min_space_nm;
    let c = spec.canvas_nm;
    let usable = c - 2 * s;
    let target_area = spec.density * (c * c) as f64;
    let min_len = (3 * f).min(usable);
    let max_len = (usable / 2).max(min_len);
    let mut rng = DetRng::new(spec.seed);
    let mut placed: Vec<Rect> = Vec::new();
    let mut area = 0u64;
    let mut failures = 0usize;
    while (area as f64) < target_area {
        let width = (f * (1 + rng.below(2))).min(usable);
        let len = min_len + rng.below(max_len - min_len + 1);
        let (w, h) = if rng.below(2) == 0 {
            (len, width)
        } else {
            (width, len)
        };
        let x = s + rng.below(usable - w + 1);
        let y = s + rng.below(usable - h + 1);
        let cand = Rect::new(x, y, w, h);
        if placed
            .iter()
            .all(|p| p.gap(&cand) >= s && !p.overlaps(&cand))
        {
            area += cand.area();
            placed.push(cand);
            failures = 0;
        } else {
            failures += 1;
            if failures > MAX_ATTEMPTS_PER_SHAPE {
                return Err(Error::Infeasible(format!(
                    "metal density stalled at {:.4} of requested {}",
                    area as f64 / (c * c) as f64,
                    spec.density
                )));
            }
        }
    }
    RectList::with_rects(c, c, placed)
}
