//! Rotated IoU by polygon clipping, checked against the raster oracle, and
//! rotated NMS on a handful of boxes.

use std::f64::consts::FRAC_PI_4;

use p2rkit::geometry::{raster_iou, rotated_iou, rotated_nms, RBox};

fn main() {
    let pairs = [
        (RBox::new(0.0, 0.0, 1.0, 1.0, 0.0), RBox::new(0.0, 0.0, 1.0, 1.0, FRAC_PI_4)),
        (RBox::new(10.0, 10.0, 20.0, 6.0, 0.3), RBox::new(12.0, 11.0, 18.0, 8.0, -0.2)),
        (RBox::new(0.0, 0.0, 40.0, 4.0, 0.0), RBox::new(0.0, 0.0, 40.0, 4.0, 1.2)),
        (RBox::new(0.0, 0.0, 10.0, 10.0, 0.0), RBox::new(30.0, 0.0, 10.0, 10.0, 0.5)),
    ];
    println!("{:>10} {:>10} {:>10}", "clipping", "raster", "diff");
    for (a, b) in &pairs {
        let exact = rotated_iou(a, b);
        let approx = raster_iou(a, b, 2000);
        println!("{exact:>10.6} {approx:>10.6} {:>10.2e}", (exact - approx).abs());
    }

    let dets = vec![
        (RBox::new(50.0, 50.0, 40.0, 20.0, 0.10), 0.95),
        (RBox::new(52.0, 51.0, 40.0, 20.0, 0.15), 0.90),
        (RBox::new(120.0, 60.0, 30.0, 30.0, -0.4), 0.80),
        (RBox::new(50.0, 50.0, 40.0, 20.0, 1.47), 0.70),
    ];
    let keep = rotated_nms(&dets, 0.5);
    println!("NMS at 0.5 keeps {keep:?}");
}
