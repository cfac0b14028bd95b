//! Gradient descent on the consistency losses for each view transform.
//!
//! `cargo run --example fit_demo -- [out_dir]` also writes the loss curves.

use std::path::PathBuf;

use p2rkit::cli::{random_fit_problem, TransformChoice};
use p2rkit::transform::fit_demo;

fn main() -> p2rkit::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    for (name, choice) in [
        ("flip", TransformChoice::Flip),
        ("rotate", TransformChoice::Rotate),
        ("scale", TransformChoice::Scale),
    ] {
        let problem = random_fit_problem(11, choice, 3, 1);
        let t0 = std::time::Instant::now();
        let report = fit_demo(&problem)?;
        let worst = report.residuals.iter().copied().fold(0.0, f64::max);
        println!(
            "{name:<7} {:?}: {} iterations, loss {:.3e} -> {:.3e}, worst residual {worst:.2e} ({:.1} ms)",
            problem.transform,
            report.iterations,
            report.losses[0],
            report.final_loss(),
            t0.elapsed().as_secs_f64() * 1e3
        );
        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("fit_{name}.csv")), report.trajectory_csv())?;
        }
    }
    Ok(())
}
