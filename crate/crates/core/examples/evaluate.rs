//! Rotated AP50 on a small hand-made set, with 11-point and all-point
//! interpolation.

use p2rkit::eval::{evaluate_map, ApMethod, DetectionRecord, EvalConfig, GroundTruth};
use p2rkit::geometry::RBox;

fn gt(id: &str, cat: &str, b: RBox, difficult: bool) -> GroundTruth {
    GroundTruth {
        image_id: id.into(),
        category: cat.into(),
        rbox: b,
        difficult,
    }
}

fn det(id: &str, cat: &str, score: f64, b: RBox) -> DetectionRecord {
    DetectionRecord {
        image_id: id.into(),
        category: cat.into(),
        score,
        rbox: b,
    }
}

fn main() -> p2rkit::Result<()> {
    let ship = RBox::new(50.0, 50.0, 40.0, 12.0, 0.4);
    let ship2 = RBox::new(140.0, 60.0, 44.0, 14.0, -0.2);
    let plane = RBox::new(200.0, 200.0, 60.0, 60.0, 0.8);
    let gts = vec![
        gt("a", "ship", ship, false),
        gt("a", "ship", ship2, false),
        gt("a", "plane", plane, false),
        gt("b", "ship", RBox::new(30.0, 30.0, 10.0, 4.0, 0.0), true),
    ];
    let dets = vec![
        det("a", "ship", 0.95, ship.translated(1.0, 0.5)),
        det("a", "ship", 0.90, RBox::new(300.0, 300.0, 40.0, 12.0, 0.0)),
        det("a", "ship", 0.60, ship2),
        det("a", "ship", 0.55, ship),
        det("b", "ship", 0.50, RBox::new(30.0, 30.0, 10.0, 4.0, 0.05)),
        det("a", "plane", 0.80, RBox::new(200.0, 200.0, 60.0, 60.0, 0.8 + 0.7)),
        det("a", "plane", 0.70, plane),
    ];
    for method in [ApMethod::ElevenPoint, ApMethod::AllPoint] {
        let r = evaluate_map(&dets, &gts, &EvalConfig { method, ..Default::default() })?;
        println!("{method:?}\n{}", r.to_table());
        print!("{}", r.to_csv("example"));
    }
    Ok(())
}
