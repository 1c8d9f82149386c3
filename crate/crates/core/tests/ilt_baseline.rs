// SPDX-License-Identifier: Apache-2.0
use litho_cfno::desk::DeskSetup;
use litho_cfno::ilt::{binarize, ilt_optimize_sim};
use litho_cfno::layout::{rasterize, Rect, RectList};
use litho_cfno::metrics::mse;

#[test]
fn optimized_square_beats_the_target_as_mask() {
    let desk = DeskSetup::default();
    let sim = desk.simulator().unwrap();
    let list = RectList::with_rects(1024, 1024, vec![Rect::new(412, 412, 200, 200)]).unwrap();
    let target = rasterize(&list, 8.0).unwrap();
    let plain = mse(&sim.print(&target.to_real()).unwrap(), &target).unwrap();
    let r = ilt_optimize_sim(&target, &sim, &desk.ilt).unwrap();
    let m = binarize(&r.mask, 0.5);
    let opt = mse(&sim.print(m.values()).unwrap(), &target).unwrap();
    assert!(opt < plain, "optimized {opt} vs plain {plain}");
    assert!(r.loss_trace.last().unwrap() < r.loss_trace.first().unwrap());
}
