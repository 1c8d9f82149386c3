// SPDX-License-Identifier: Apache-2.0
use litho_cfno::ilt::MaskGrid;
use litho_cfno::layout::LayoutRaster;
use litho_cfno::rng::DetRng;
use litho_cfno::tiling::{merge, merge_with_writes, split, MaskTile, Tile, TileRole, TileSpec};
use litho_cfno::Grid;

fn random_clip(side: usize, nm_per_px: f64, seed: u64) -> LayoutRaster {
    let mut rng = DetRng::new(seed);
    LayoutRaster::new(
        Grid::from_fn(side, side, |_, _| u8::from(rng.uniform() < 0.3)),
        nm_per_px,
    )
    .unwrap()
}

fn identity(tiles: &[Tile]) -> Vec<MaskTile> {
    tiles
        .iter()
        .map(|t| MaskTile {
            mask: MaskGrid::from_layout(&t.raster),
            pos: t.pos,
            role: t.role,
        })
        .collect()
}

#[test]
fn default_spec_partitions_the_clip_and_round_trips() {
    let spec = TileSpec::default();
    let clip = random_clip(1500, 4.0, 1);
    let tiles = split(&clip, &spec).unwrap();
    assert_eq!(tiles.len(), 25);
    let count = |r: TileRole| tiles.iter().filter(|t| t.role == r).count();
    assert_eq!(
        (count(TileRole::A), count(TileRole::B), count(TileRole::C)),
        (4, 12, 9)
    );
    let (mask, writes) = merge_with_writes(&identity(&tiles), &spec).unwrap();
    assert!(writes.as_slice().iter().all(|&c| c == 1));
    assert_eq!(mask, MaskGrid::from_layout(&clip));
}

#[test]
fn constant_tiles_merge_into_the_keep_region_mosaic() {
    let spec = TileSpec::default();
    let clip = random_clip(750, 8.0, 2);
    let tiles = split(&clip, &spec).unwrap();
    let n = spec.tiles_per_axis();
    let stride = 125;
    let marked: Vec<MaskTile> = tiles
        .iter()
        .map(|t| {
            let v = (t.pos.row * n + t.pos.col) as f64 / (n * n) as f64;
            MaskTile {
                mask: MaskGrid::new(Grid::filled(250, 250, v), 8.0).unwrap(),
                pos: t.pos,
                role: t.role,
            }
        })
        .collect();
    let merged = merge(&marked, &spec).unwrap();
    for y in 0..750 {
        for x in 0..750 {
            let owner = tiles
                .iter()
                .find(|t| {
                    let (oy, ox) = (t.pos.row * stride, t.pos.col * stride);
                    (oy + t.keep.y0..oy + t.keep.y1).contains(&y)
                        && (ox + t.keep.x0..ox + t.keep.x1).contains(&x)
                })
                .unwrap();
            let want = (owner.pos.row * n + owner.pos.col) as f64 / (n * n) as f64;
            assert_eq!(*merged.values().get(y, x), want, "pixel ({y}, {x})");
        }
    }
}

#[test]
fn merge_ignores_tile_order() {
    let spec = TileSpec {
        clip_nm: 1600,
        tile_nm: 640,
        stride_nm: 320,
    };
    let clip = random_clip(200, 8.0, 3);
    let mut tiles = identity(&split(&clip, &spec).unwrap());
    let first = merge(&tiles, &spec).unwrap();
    DetRng::new(9).shuffle(&mut tiles);
    assert_eq!(merge(&tiles, &spec).unwrap(), first);
    assert_eq!(first, MaskGrid::from_layout(&clip));
}

#[test]
fn overlap_content_outside_keep_regions_is_discarded() {
    let spec = TileSpec::default();
    let clip = random_clip(750, 8.0, 4);
    let tiles = split(&clip, &spec).unwrap();
    let noisy: Vec<MaskTile> = tiles
        .iter()
        .map(|t| {
            let keep = t.keep;
            let px = t.raster.pixels();
            let v = Grid::from_fn(250, 250, |y, x| {
                let inside = (keep.y0..keep.y1).contains(&y) && (keep.x0..keep.x1).contains(&x);
                if inside {
                    f64::from(*px.get(y, x))
                } else {
                    0.5
                }
            });
            MaskTile {
                mask: MaskGrid::new(v, 8.0).unwrap(),
                pos: t.pos,
                role: t.role,
            }
        })
        .collect();
    assert_eq!(merge(&noisy, &spec).unwrap(), MaskGrid::from_layout(&clip));
}
