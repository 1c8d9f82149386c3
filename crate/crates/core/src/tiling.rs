// SPDX-License-Identifier: Apache-2.0
//! Half-overlapped tile decomposition of large clips and the corner / edge /
//! center keep-region merge.
//!
//! Along each axis, with `h = floor(stride / 2)`, the tile at grid index `i`
//! of `n` keeps
//!
//! * `i == 0`:      `[0, h + stride)` (three quarters of the tile)
//! * `i == n - 1`:  `[h, tile)`
//! * otherwise:     `[h, h + stride)` (the central half)
//!
//! With `tile == 2 * stride` the kept intervals abut exactly; an odd pixel
//! stride moves every seam half a pixel toward the origin. A tile that
//! is first or last on both axes is a corner (type A), on one axis an edge
//! (type B), and otherwise a center tile (type C). For the 6 um / 2 um default
//! this is the 1.5 x 1.5, 1 x 1.5 and 1 x 1 um rule.

use crate::ilt::MaskGrid;
use crate::layout::LayoutRaster;
use crate::{Error, Grid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    pub clip_nm: u64,
    pub tile_nm: u64,
    pub stride_nm: u64,
}

impl Default for TileSpec {
    fn default() -> Self {
        TileSpec {
            clip_nm: 6000,
            tile_nm: 2000,
            stride_nm: 1000,
        }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stride_nm == 0 || self.tile_nm != 2 * self.stride_nm {
            return Err(Error::Tiling(format!(
                "stride {} must be half of the tile size {}",
                self.stride_nm, self.tile_nm
            )));
        }
        if self.clip_nm < self.tile_nm
            || !(self.clip_nm - self.tile_nm).is_multiple_of(self.stride_nm)
        {
            return Err(Error::Tiling(format!(
                "clip {} is not tile {} plus a whole number of strides {}",
                self.clip_nm, self.tile_nm, self.stride_nm
            )));
        }
        if self.tiles_per_axis() < 2 {
            return Err(Error::Tiling(
                "clip equals the tile size; at least two tiles per axis are required".into(),
            ));
        }
        Ok(())
    }

    pub fn tiles_per_axis(&self) -> usize {
        ((self.clip_nm - self.tile_nm) / self.stride_nm + 1) as usize
    }

    fn in_px(&self, nm_per_px: f64) -> Result<PxSpec> {
        let conv = |v: u64, name: &str| -> Result<usize> {
            let p = v as f64 / nm_per_px;
            if (p - p.round()).abs() > 1e-9 || p < 1.0 {
                return Err(Error::Tiling(format!(
                    "{name} {v} nm is not a whole number of {nm_per_px} nm pixels"
                )));
            }
            Ok(p.round() as usize)
        };
        let px = PxSpec {
            clip: conv(self.clip_nm, "clip")?,
            tile: conv(self.tile_nm, "tile")?,
            stride: conv(self.stride_nm, "stride")?,
        };
        Ok(px)
    }
}

#[derive(Debug, Clone, Copy)]
struct PxSpec {
    clip: usize,
    tile: usize,
    stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TileRole {
    /// Corner tile.
    A,
    /// Edge tile.
    B,
    /// Center tile.
    C,
}

/// Pixel rectangle `[y0, y1) x [x0, x1)` in tile-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeepRegion {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl KeepRegion {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TilePos {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub raster: LayoutRaster,
    pub pos: TilePos,
    pub role: TileRole,
    pub keep: KeepRegion,
}

fn axis_keep(i: usize, n: usize, px: &PxSpec) -> (usize, usize) {
    let half = px.stride / 2;
    let lo = if i == 0 { 0 } else { half };
    let hi = if i + 1 == n {
        px.tile
    } else {
        half + px.stride
    };
    (lo, hi)
}

pub fn role_of(pos: TilePos, n: usize) -> TileRole {
    let edge_r = pos.row == 0 || pos.row + 1 == n;
    let edge_c = pos.col == 0 || pos.col + 1 == n;
    match (edge_r, edge_c) {
        (true, true) => TileRole::A,
        (false, false) => TileRole::C,
        _ => TileRole::B,
    }
}

fn keep_region(pos: TilePos, n: usize, px: &PxSpec) -> KeepRegion {
    let (y0, y1) = axis_keep(pos.row, n, px);
    let (x0, x1) = axis_keep(pos.col, n, px);
    KeepRegion { y0, y1, x0, x1 }
}

/// Splits a clip into row-major half-overlapped tiles.
pub fn split(clip: &LayoutRaster, spec: &TileSpec) -> Result<Vec<Tile>> {
    spec.validate()?;
    let px = spec.in_px(clip.nm_per_px())?;
    if clip.dims() != (px.clip, px.clip) {
        return Err(Error::dims((px.clip, px.clip), clip.dims()));
    }
    let n = spec.tiles_per_axis();
    let mut tiles = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let pos = TilePos { row, col };
            tiles.push(Tile {
                raster: clip.window(
                    (row * px.stride) as isize,
                    (col * px.stride) as isize,
                    px.tile,
                    px.tile,
                ),
                pos,
                role: role_of(pos, n),
                keep: keep_region(pos, n, &px),
            });
        }
    }
    Ok(tiles)
}

/// An optimized tile ready for merging.
#[derive(Debug, Clone)]
pub struct MaskTile {
    pub mask: MaskGrid,
    pub pos: TilePos,
    pub role: TileRole,
}

/// Assembles the clip mask from each tile's keep-region.
pub fn merge(tiles: &[MaskTile], spec: &TileSpec) -> Result<MaskGrid> {
    let (mask, writes) = merge_with_writes(tiles, spec)?;
    if let Some(i) = writes.as_slice().iter().position(|&c| c != 1) {
        let (y, x) = (i / writes.width(), i % writes.width());
        return Err(Error::Tiling(format!(
            "pixel ({y}, {x}) written {} times; keep-regions must partition the clip",
            writes.as_slice()[i]
        )));
    }
    Ok(mask)
}

/// Merge plus the per-pixel write count, for auditing the partition.
pub fn merge_with_writes(tiles: &[MaskTile], spec: &TileSpec) -> Result<(MaskGrid, Grid<u32>)> {
    spec.validate()?;
    let first = tiles
        .first()
        .ok_or_else(|| Error::Tiling("no tiles to merge".into()))?;
    let npp = first.mask.nm_per_px();
    let px = spec.in_px(npp)?;
    let n = spec.tiles_per_axis();
    let mut seen = vec![false; n * n];
    for t in tiles {
        if t.pos.row >= n || t.pos.col >= n {
            return Err(Error::Tiling(format!(
                "tile position {:?} outside the {n}x{n} grid",
                t.pos
            )));
        }
        if t.mask.dims() != (px.tile, px.tile) {
            return Err(Error::dims((px.tile, px.tile), t.mask.dims()));
        }
        if t.role != role_of(t.pos, n) {
            return Err(Error::Tiling(format!(
                "tile {:?} labelled {:?} but its grid position makes it {:?}",
                t.pos,
                t.role,
                role_of(t.pos, n)
            )));
        }
        let slot = &mut seen[t.pos.row * n + t.pos.col];
        if *slot {
            return Err(Error::Tiling(format!("duplicate tile at {:?}", t.pos)));
        }
        *slot = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Tiling(format!(
            "missing tile at row {}, col {}",
            i / n,
            i % n
        )));
    }
    let mut out = Grid::filled(px.clip, px.clip, 0.0);
    let mut writes = Grid::filled(px.clip, px.clip, 0u32);
    for t in tiles {
        let k = keep_region(t.pos, n, &px);
        let (oy, ox) = (t.pos.row * px.stride, t.pos.col * px.stride);
        for y in k.y0..k.y1 {
            for x in k.x0..k.x1 {
                *out.get_mut(oy + y, ox + x) = *t.mask.values().get(y, x);
                *writes.get_mut(oy + y, ox + x) += 1;
            }
        }
    }
    Ok((MaskGrid::new(out, npp)?, writes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(npp: f64, spec: &TileSpec) -> LayoutRaster {
        let n = (spec.clip_nm as f64 / npp) as usize;
        LayoutRaster::new(
            Grid::from_fn(n, n, |y, x| ((y * 7 + x * 3) % 5 == 0) as u8),
            npp,
        )
        .unwrap()
    }

    #[test]
    fn default_grid_roles_and_regions() {
        let spec = TileSpec::default();
        let tiles = split(&clip(20.0, &spec), &spec).unwrap();
        assert_eq!(tiles.len(), 25);
        let count = |r| tiles.iter().filter(|t| t.role == r).count();
        assert_eq!(
            (count(TileRole::A), count(TileRole::B), count(TileRole::C)),
            (4, 12, 9)
        );
        // at 20 nm/px: A keeps 1.5 um square, B 1 x 1.5 um, C 1 um square
        for t in &tiles {
            let (h, w) = (t.keep.height() * 20, t.keep.width() * 20);
            let mut dims = [h, w];
            dims.sort();
            match t.role {
                TileRole::A => assert_eq!(dims, [1500, 1500]),
                TileRole::B => assert_eq!(dims, [1000, 1500]),
                TileRole::C => assert_eq!(dims, [1000, 1000]),
            }
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        let single = TileSpec {
            clip_nm: 2000,
            tile_nm: 2000,
            stride_nm: 1000,
        };
        assert!(single.validate().is_err());
        let quarter = TileSpec {
            clip_nm: 6000,
            tile_nm: 2000,
            stride_nm: 500,
        };
        assert!(quarter.validate().is_err());
    }

    #[test]
    fn split_covers_every_pixel() {
        let spec = TileSpec::default();
        let c = clip(20.0, &spec);
        let tiles = split(&c, &spec).unwrap();
        let n = c.dims().0;
        let stride = 50;
        let mut cover = Grid::filled(n, n, 0u32);
        for t in &tiles {
            let (oy, ox) = (t.pos.row * stride, t.pos.col * stride);
            for y in 0..t.raster.dims().0 {
                for x in 0..t.raster.dims().1 {
                    *cover.get_mut(oy + y, ox + x) += 1;
                    assert_eq!(t.raster.pixels().get(y, x), c.pixels().get(oy + y, ox + x));
                }
            }
        }
        assert!(cover.as_slice().iter().all(|&v| v >= 1));
    }

    #[test]
    fn merge_reports_missing_and_duplicate_tiles() {
        let spec = TileSpec::default();
        let c = clip(20.0, &spec);
        let mut tiles: Vec<MaskTile> = split(&c, &spec)
            .unwrap()
            .into_iter()
            .map(|t| MaskTile {
                mask: MaskGrid::from_layout(&t.raster),
                pos: t.pos,
                role: t.role,
            })
            .collect();
        let last = tiles.pop().unwrap();
        assert!(merge(&tiles, &spec).is_err());
        tiles.push(tiles[0].clone());
        assert!(merge(&tiles, &spec).is_err());
        tiles.pop();
        tiles.push(last);
        assert!(merge(&tiles, &spec).is_ok());
    }

    #[test]
    fn proportional_keep_regions_for_other_sizes() {
        let spec = TileSpec {
            clip_nm: 1280,
            tile_nm: 512,
            stride_nm: 256,
        };
        let c = clip(8.0, &spec);
        let tiles = split(&c, &spec).unwrap();
        assert_eq!(tiles.len(), 16);
        let masks: Vec<MaskTile> = tiles
            .iter()
            .map(|t| MaskTile {
                mask: MaskGrid::from_layout(&t.raster),
                pos: t.pos,
                role: t.role,
            })
            .collect();
        let (m, writes) = merge_with_writes(&masks, &spec).unwrap();
        assert!(writes.as_slice().iter().all(|&v| v == 1));
        assert_eq!(m, MaskGrid::from_layout(&c));
    }
}
