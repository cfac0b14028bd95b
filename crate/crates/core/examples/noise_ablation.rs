//! Effect of point-annotation noise: boxes of the true shape placed at
//! points offset uniformly within +-sigma*h, evaluated at AP50.

use std::collections::BTreeMap;

use p2rkit::dataset::{GtRecord, NOISE_LEVELS};
use p2rkit::eval::{noise_sweep, noise_sweep_csv, shape_at_point, EvalConfig};
use p2rkit::geometry::RBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> p2rkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gts = BTreeMap::new();
    for img in 0..20 {
        let recs = (0..15)
            .map(|k| {
                let cat = ["ship", "plane", "vehicle"][k % 3];
                let (w, h) = match cat {
                    "ship" => (rng.random_range(40.0..90.0), rng.random_range(10.0..20.0)),
                    "plane" => (rng.random_range(40.0..70.0), rng.random_range(40.0..70.0)),
                    _ => (rng.random_range(15.0..25.0), rng.random_range(8.0..12.0)),
                };
                let b = RBox::new(
                    rng.random_range(50.0..950.0),
                    rng.random_range(50.0..950.0),
                    w,
                    h,
                    rng.random_range(-1.5..1.5),
                );
                GtRecord::from_rbox(b, cat, false)
            })
            .collect();
        gts.insert(format!("img{img:02}"), recs);
    }
    let mut sigmas = NOISE_LEVELS.to_vec();
    sigmas.extend([0.3, 0.5]);
    let mut det_rng = ChaCha8Rng::seed_from_u64(6);
    let rows = noise_sweep(&gts, &sigmas, 1, &EvalConfig::default(), shape_at_point(&mut det_rng))?;
    print!("{}", noise_sweep_csv(&rows));
    Ok(())
}
