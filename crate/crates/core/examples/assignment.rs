//! Label assignment on a fixed anchor grid: two targets compete for the
//! same anchors and the higher score wins.

use p2rkit::assign::{assign_k, build_anchor_grid, targets_from, AnchorPrediction, POSITIVES_PER_GT};
use p2rkit::geometry::{ImageSize, Point};

fn main() -> p2rkit::Result<()> {
    let grid = build_anchor_grid(ImageSize::new(128, 96), 16, 64.0, 1)?;
    println!("{} x {} cells, {} anchors", grid.cols, grid.rows, grid.num_anchors());

    // class 0 is likely near the left, class 1 near the right
    let preds: Vec<AnchorPrediction> = (0..grid.num_anchors())
        .map(|a| {
            let c = grid.anchor_center(a);
            let p = (c.x / 128.0).clamp(0.05, 0.95);
            AnchorPrediction {
                center: c,
                scores: vec![1.0 - p, p],
            }
        })
        .collect();
    let points = [(Point::new(50.0, 40.0), 0usize), (Point::new(70.0, 40.0), 1)];
    let boxes = [(Point::new(110.0, 80.0), 1usize)];
    let targets = targets_from(&points, &boxes);
    let res = assign_k(&grid, &preds, &targets, POSITIVES_PER_GT)?;
    for (t, pos) in targets.iter().zip(&res.positives) {
        let cells: Vec<_> = pos.iter().map(|&a| grid.cell_of(a)).collect();
        println!("{:?} {} label {} -> cells {cells:?}", t.kind, t.index, t.label);
    }
    let m_point = res.point_mask().iter().filter(|&&m| m).count();
    let m_box = res.box_mask().iter().filter(|&&m| m).count();
    println!("point mask {m_point} anchors, box mask {m_box} anchors, unmatched {:?}", res.unmatched);
    Ok(())
}
