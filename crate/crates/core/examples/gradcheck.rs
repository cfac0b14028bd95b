//! Analytic loss gradients against central finite differences.

use p2rkit::cli::gradcheck_suite;
use p2rkit::geometry::RBox;
use p2rkit::losses::{grad_check, GradCheckCase};

fn main() -> p2rkit::Result<()> {
    for (name, err) in gradcheck_suite(0, 1000, 1e-5)? {
        println!("{:<12} max relative error {err:.3e}", name.as_str());
    }

    // a point exactly on the smooth-L1 transition is refused
    let kink = GradCheckCase::SmoothL1 {
        x: 1.0,
        target: 0.0,
        beta: 1.0,
    };
    match grad_check(&kink, 1e-5) {
        Err(e) => println!("rejected: {e}"),
        Ok(v) => println!("unexpected: {v}"),
    }

    let case = GradCheckCase::Scale {
        ori: RBox::new(40.0, 30.0, 20.0, 10.0, 0.4),
        trs: RBox::new(52.0, 41.0, 25.0, 12.0, -0.3),
        factor: 1.3,
    };
    println!("scale loss at a hand-picked point: {:.3e}", grad_check(&case, 1e-5)?);
    Ok(())
}
