//! Tiles a 2000x2000 image into 1024 px patches with 200 px overlap, then
//! merges detections made independently in each patch.

use image::{Rgb, RgbImage};
use p2rkit::dataset::{merge_detections, split_image, GtRecord, DEFAULT_OVERLAP, DEFAULT_PATCH_SIZE, MERGE_NMS_IOU};
use p2rkit::eval::DetectionRecord;
use p2rkit::geometry::RBox;

fn main() -> p2rkit::Result<()> {
    let img = RgbImage::from_fn(2000, 2000, |x, y| Rgb([(x / 8) as u8, (y / 8) as u8, 128]));
    let gts = vec![
        GtRecord::from_rbox(RBox::new(100.0, 100.0, 60.0, 20.0, 0.3), "ship", false),
        GtRecord::from_rbox(RBox::new(900.0, 950.0, 80.0, 40.0, -0.8), "plane", false),
        GtRecord::from_rbox(RBox::new(1900.0, 1500.0, 50.0, 50.0, 0.0), "tank", false),
    ];
    let patches = split_image(&img, &gts, DEFAULT_PATCH_SIZE, DEFAULT_OVERLAP)?;
    println!("{} patches", patches.len());

    // every patch "detects" its own objects perfectly
    let per_patch: Vec<_> = patches
        .iter()
        .map(|p| {
            let dets = p
                .gts
                .iter()
                .map(|g| DetectionRecord {
                    image_id: p.name("P0000"),
                    category: g.category.clone(),
                    score: 0.9,
                    rbox: g.rbox,
                })
                .collect();
            println!("  offset {:?}: {} objects", p.offset, p.gts.len());
            (p.offset, dets)
        })
        .collect();
    let merged = merge_detections(&per_patch, MERGE_NMS_IOU);
    println!("{} detections after merging:", merged.len());
    for d in &merged {
        println!("  {} {} at ({}, {})", d.image_id, d.category, d.rbox.x, d.rbox.y);
    }
    Ok(())
}
