// SPDX-License-Identifier: Apache-2.0
mod support;

use litho_cfno::ilt::MaskGrid;
use litho_cfno::layout::LayoutRaster;
use litho_cfno::litho::{
    aerial_image, resist, AerialImage, ResistImage, ResistModel, Simulator, SyntheticKernels,
};
use litho_cfno::metrics::{mse, pvb_area};
use litho_cfno::rng::DetRng;
use litho_cfno::Grid;
use proptest::prelude::*;
use support::oracles::{aerial_spatial, random_kernels, rel_err};

fn random_mask(rng: &mut DetRng, h: usize, w: usize) -> MaskGrid {
    MaskGrid::new(Grid::from_fn(h, w, |_, _| rng.uniform()), 8.0).unwrap()
}

#[test]
fn spectral_aerial_image_matches_spatial_convolution() {
    let mut rng = DetRng::new(11);
    let mask = random_mask(&mut rng, 32, 32);
    let k = random_kernels(&mut rng, 2, 8, 8);
    let got = aerial_image(&mask, &k).unwrap();
    let want = aerial_spatial(mask.values(), &k);
    let e = rel_err(got.intensity.as_slice(), want.as_slice());
    assert!(e <= 1e-10, "{e}");
}

#[test]
fn odd_kernels_and_doses_match_too() {
    let mut rng = DetRng::new(12);
    let mask = random_mask(&mut rng, 20, 27);
    let k = random_kernels(&mut rng, 3, 5, 7).with_dose(1.02).unwrap();
    let got = aerial_image(&mask, &k).unwrap();
    let e = rel_err(
        got.intensity.as_slice(),
        aerial_spatial(mask.values(), &k).as_slice(),
    );
    assert!(e <= 1e-10, "{e}");
}

#[test]
fn resist_is_a_pixelwise_comparison() {
    let mut rng = DetRng::new(13);
    let intensity = Grid::from_fn(9, 11, |_, _| rng.uniform_in(0.0, 2.0));
    let m = ResistModel::new(1.0, 10.0).unwrap();
    let z = resist(
        &AerialImage {
            intensity: intensity.clone(),
            nm_per_px: 8.0,
        },
        &m,
    );
    for y in 0..9 {
        for x in 0..11 {
            assert_eq!(*z.pixels.get(y, x) == 1, *intensity.get(y, x) >= 1.0);
        }
    }
}

#[test]
fn higher_dose_prints_a_superset_with_a_real_positive_kernel() {
    let kernels = SyntheticKernels {
        count: 1,
        ..SyntheticKernels::default()
    };
    let nominal = kernels.nominal().unwrap();
    let resist_model = ResistModel::relative_to(&nominal, 0.3, 1.0).unwrap();
    let sim = Simulator::new(
        nominal,
        kernels.defocus().unwrap(),
        resist_model,
        vec![0.98, 1.02],
    )
    .unwrap();
    let mut rng = DetRng::new(14);
    let mask = Grid::from_fn(64, 64, |_, _| f64::from(u8::from(rng.uniform() < 0.4)));
    let c = sim.corners(&mask).unwrap();
    assert_eq!(c.len(), 3);
    let (lo, hi) = (&c[1].pixels, &c[2].pixels);
    assert!(lo.as_slice().iter().zip(hi.as_slice()).all(|(a, b)| a <= b));
}

fn bits(v: &[bool], w: usize) -> Grid<u8> {
    Grid::from_vec(v.len() / w, w, v.iter().map(|&b| u8::from(b)).collect()).unwrap()
}

proptest! {
    #[test]
    fn mse_is_symmetric(a in prop::collection::vec(any::<bool>(), 48), b in prop::collection::vec(any::<bool>(), 48)) {
        let (ga, gb) = (bits(&a, 8), bits(&b, 8));
        let ab = mse(&ResistImage::new(ga.clone()).unwrap(), &LayoutRaster::new(gb.clone(), 1.0).unwrap()).unwrap();
        let ba = mse(&ResistImage::new(gb).unwrap(), &LayoutRaster::new(ga, 1.0).unwrap()).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(ab as usize, a.iter().zip(&b).filter(|(x, y)| x != y).count());
    }

    #[test]
    fn pvb_ignores_corner_order(imgs in prop::collection::vec(prop::collection::vec(any::<bool>(), 30), 2..5), seed in any::<u64>()) {
        let corners: Vec<ResistImage> = imgs.iter().map(|v| ResistImage::new(bits(v, 6)).unwrap()).collect();
        let mut shuffled = corners.clone();
        DetRng::new(seed).shuffle(&mut shuffled);
        prop_assert_eq!(pvb_area(&corners).unwrap(), pvb_area(&shuffled).unwrap());
    }
}
