//! Overlays SetRC patterns on a procedural scene and writes the result with
//! the synthetic boxes drawn on top.
//!
//! `cargo run --example synthesize -- [out_dir]`

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use p2rkit::pattern::{synthesize_seeded, LabeledPoint, PatternLibrary, SynthesisConfig};
use p2rkit::render::{draw_point, draw_rbox, PALETTE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64 / 37.0, y as f64 / 23.0);
        let v = (fx.sin() * fy.cos() * 40.0 + 110.0) as u8;
        if (x / 96 + y / 96) % 2 == 0 {
            Rgb([v, v.saturating_add(20), 70])
        } else {
            Rgb([150, v, v / 2])
        }
    })
}

fn main() -> p2rkit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("p2rkit-examples"));
    std::fs::create_dir_all(&out)?;

    let img = scene(512, 384);
    let points = vec![
        LabeledPoint::new(80.0, 90.0, "plane"),
        LabeledPoint::new(300.0, 120.0, "ship"),
        LabeledPoint::new(420.0, 300.0, "ship"),
        LabeledPoint::new(150.0, 280.0, "vehicle"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let library = PatternLibrary::setrc(true, &mut rng);
    let cfg = SynthesisConfig {
        patterns_per_image: Some(12),
        rng_seed: 7,
        ..Default::default()
    };
    let (aug, placed) = synthesize_seeded(&img, &points, &library, &cfg)?;

    let mut shown = aug.clone();
    for p in &placed {
        let k = points.iter().position(|q| q.label == p.label).unwrap_or(0);
        draw_rbox(&mut shown, &p.rbox, PALETTE[k % PALETTE.len()]);
        println!(
            "{:<8} x={:7.2} y={:7.2} w={:6.2} h={:6.2} theta={:+.3} flipped={}",
            p.label, p.rbox.x, p.rbox.y, p.rbox.w, p.rbox.h, p.rbox.theta, p.flipped
        );
    }
    for q in &points {
        draw_point(&mut shown, q.point, Rgb([255, 255, 255]));
    }
    aug.save(out.join("synth.png"))?;
    shown.save(out.join("synth_boxes.png"))?;
    println!("{} patterns placed; images in {}", placed.len(), out.display());
    Ok(())
}
