//! Convergence classification across the three models, including the
//! heavy-tailed offspring family that reaches the divergent-moment branches.

use nalgebra::DMatrix;
use spinelab::bbm::{classify_bbm, BbmParams};
use spinelab::multitype::{classify_typed, TypedParams};
use spinelab::offspring::OffspringDist;
use spinelab::outype::{classify_ou, lambda_tilde_ou, OuParams};

fn main() -> spinelab::Result<()> {
    let binary = OffspringDist::finite(&[0.0, 1.0])?;
    let heavy = OffspringDist::log_power_tail(1.5, 2)?; // P(A log+ A) = inf
    let light = OffspringDist::log_power_tail(2.5, 2)?; // P(A log+ A) < inf

    println!("== BBM, r = 1 ==");
    let bbm = BbmParams::new(1.0, binary.clone(), 0.0)?;
    for (lambda, p) in [(-2.0, None), (-0.5, None), (-0.9, Some(2.0)), (-1.3, Some(2.0))] {
        let v = classify_bbm(&bbm, lambda, p)?;
        println!("lambda={lambda:>5}, p={p:?}: {} ({})", v.tag, v.reason);
    }
    let bbm_heavy = BbmParams::new(1.0, heavy.clone(), 0.0)?;
    let v = classify_bbm(&bbm_heavy, -0.5, None)?;
    println!("heavy tail gamma=1.5, lambda=-0.5: {} ({})", v.tag, v.reason);
    let bbm_light = BbmParams::new(1.0, light, 0.0)?;
    let v = classify_bbm(&bbm_light, -0.5, None)?;
    println!("heavy tail gamma=2.5, lambda=-0.5: {} ({})", v.tag, v.reason);

    println!("\n== two-type model with one heavy-tailed type ==");
    let typed = TypedParams::new(
        1.0,
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        None,
        vec![1.0, 2.0],
        vec![1.0, 1.0],
        vec![binary, heavy],
        0.0,
        0,
    )?;
    for (lambda, p) in [(-0.5, None), (-0.5, Some(1.5))] {
        let v = classify_typed(&typed, lambda, p)?;
        println!("lambda={lambda:>5}, p={p:?}: {} ({})", v.tag, v.reason);
    }

    println!("\n== OU model phase diagram slice (theta=10) ==");
    let ou = OuParams::new(10.0, 1.0, 1.0, 1.0, 0.0, 0.0)?;
    let tilde = lambda_tilde_ou(&ou)?;
    println!("lambda_tilde = {tilde:.6}");
    for (lambda, p) in [
        (tilde - 0.02, None),
        (tilde + 0.02, None),
        (-0.25, Some(2.0)),
        (-0.65, Some(1.08)),
        (-0.5, Some(2.0)),
    ] {
        let v = classify_ou(&ou, lambda, p)?;
        println!("lambda={lambda:>8.4}, p={p:?}: {} ({})", v.tag, v.reason);
    }
    Ok(())
}
