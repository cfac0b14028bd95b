//! Buffer-level calls a training loop would make: raw RGB8 in, augmented
//! RGB8 and box targets out, then assignment masks and AP.

use p2rkit::batch::{assign_batch, default_library, evaluate_batch, synthesize_batch, version, AssignRequest, BatchRequest, RgbBuffer};
use p2rkit::eval::{DetectionRecord, EvalConfig, GroundTruth};
use p2rkit::geometry::ImageSize;
use p2rkit::pattern::{LabeledPoint, SynthesisConfig};

fn main() -> p2rkit::Result<()> {
    println!("p2rkit {}", version());
    let (w, h) = (160u32, 128u32);
    let images: Vec<RgbBuffer> = (0..4)
        .map(|k| {
            let data = (0..w * h).flat_map(|i| [(i % w) as u8, (i / w) as u8, 40 * k as u8]).collect();
            RgbBuffer::new(w, h, data)
        })
        .collect::<p2rkit::Result<_>>()?;
    let points = (0..4)
        .map(|k| vec![LabeledPoint::new(40.0 + 10.0 * k as f64, 50.0, "ship"), LabeledPoint::new(120.0, 90.0, "plane")])
        .collect();
    let req = BatchRequest {
        images,
        points,
        config: SynthesisConfig::default(),
        seed: 2024,
    };
    let out = synthesize_batch(&req, &default_library(req.seed))?;
    for (i, t) in out.targets.iter().enumerate() {
        println!("image {i}: {} synthetic targets", t.len());
    }

    let boxes: Vec<_> = out.targets[0].iter().map(|t| (t.rbox, usize::from(t.label == "plane"))).collect();
    let n_anchor = ImageSize::new(w, h);
    let cells = (w.div_ceil(16) * h.div_ceil(16)) as usize;
    let masks = assign_batch(&[AssignRequest {
        image: n_anchor,
        stride: 16,
        anchor_size: 64.0,
        anchors_per_cell: 5,
        num_classes: 2,
        scores: vec![0.5; cells * 5 * 2],
        points: vec![],
        boxes: boxes.clone(),
    }])?;
    println!("box mask positives: {}", masks[0].box_mask.iter().filter(|&&m| m).count());

    let gts: Vec<GroundTruth> = out.targets[0]
        .iter()
        .map(|t| GroundTruth {
            image_id: "0".into(),
            category: t.label.clone(),
            rbox: t.rbox,
            difficult: false,
        })
        .collect();
    let dets: Vec<DetectionRecord> = gts
        .iter()
        .map(|g| DetectionRecord {
            image_id: g.image_id.clone(),
            category: g.category.clone(),
            score: 1.0,
            rbox: g.rbox,
        })
        .collect();
    println!("mAP on its own targets: {:.4}", evaluate_batch(&dets, &gts, &EvalConfig::default())?.map);
    Ok(())
}
