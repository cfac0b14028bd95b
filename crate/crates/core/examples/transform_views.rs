//! The three self-supervision views of an image and its boxes. Boxes
//! mapped with the same transform give zero consistency loss.
//!
//! `cargo run --example transform_views -- [out_dir]`

use std::f64::consts::PI;
use std::path::PathBuf;

use image::{Rgb, RgbImage};
use p2rkit::geometry::{transform_rbox, ImageSize, RBox};
use p2rkit::losses::{loss_flip, loss_rotate, loss_scale};
use p2rkit::render::{draw_rbox, PALETTE};
use p2rkit::transform::{apply_transform, TransformSpec};

fn main() -> p2rkit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("p2rkit-examples"));
    std::fs::create_dir_all(&out)?;
    let img = RgbImage::from_fn(256, 192, |x, y| Rgb([(x % 64 * 4) as u8, (y % 48 * 5) as u8, 90]));
    let size = ImageSize::new(256, 192);
    let boxes = vec![
        RBox::new(70.0, 60.0, 80.0, 24.0, 0.35),
        RBox::new(180.0, 130.0, 40.0, 40.0, -0.9),
    ];
    for (name, t) in [
        ("flip", TransformSpec::Flip),
        ("rotate", TransformSpec::Rotate(0.4 * PI)),
        ("scale", TransformSpec::Scale(0.7)),
    ] {
        let (timg, tboxes) = apply_transform(&img, &boxes, &t);
        let mut canvas = timg.clone();
        for (i, b) in tboxes.iter().enumerate() {
            draw_rbox(&mut canvas, b, PALETTE[i]);
        }
        canvas.save(out.join(format!("view_{name}.png")))?;
        let losses: Vec<f64> = boxes
            .iter()
            .map(|b| {
                let tb = transform_rbox(b, &t, size);
                match t {
                    TransformSpec::Flip => Ok(loss_flip(b.theta, tb.theta)),
                    TransformSpec::Rotate(r) => Ok(loss_rotate(b.theta, tb.theta, r)),
                    TransformSpec::Scale(s) => loss_scale(b, &tb, s),
                }
            })
            .collect::<p2rkit::Result<_>>()?;
        println!("{name:<7} canvas {:?}, consistency losses {losses:?}", timg.dimensions());
    }
    println!("views in {}", out.display());
    Ok(())
}
