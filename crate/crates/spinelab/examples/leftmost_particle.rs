//! Speed of the left-most particle: `L(t)/t` approaches `-c_{lambda_tilde}`
//! slowly, with the well-known logarithmic lag at finite horizons.

use spinelab::bbm::{bbm_spectral, BbmParams};
use spinelab::mc::{lmp_estimate, McSettings, Model};
use spinelab::multitype::{lmp_speed_typed, TypedParams};
use spinelab::offspring::OffspringDist;
use nalgebra::DMatrix;

fn main() -> spinelab::Result<()> {
    let binary = OffspringDist::finite(&[0.0, 1.0])?;
    let bbm_params = BbmParams::new(1.0, binary.clone(), 0.0)?;
    let speed = -bbm_spectral(&bbm_params, -1.0)?.lambda_tilde; // c at the minimizer
    println!("== BBM, binary offspring at rate 1: limit speed -sqrt(2) ==");
    println!("{:>6} {:>12} {:>10} {:>14}", "t", "L(t)/t", "se", "gap to limit");
    let model = Model::Bbm(bbm_params);
    for (t, reps, cap) in [(4.0, 1500u64, 1u64 << 22), (7.0, 800, 1 << 24), (10.0, 300, 1 << 26)] {
        let settings = McSettings { cap, ..Default::default() };
        let est = lmp_estimate(&model, t, reps, 11, &settings)?;
        println!(
            "{t:>6.1} {:>12.5} {:>10.5} {:>14.5}",
            est.mean,
            est.se,
            est.mean + speed
        );
    }

    println!("\n== degenerate two-type model (a = 2, r = 1): limit speed -2 ==");
    let typed = TypedParams::new(
        1.0,
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        None,
        vec![2.0, 2.0],
        vec![1.0, 1.0],
        vec![binary.clone(), binary],
        0.0,
        0,
    )?;
    println!("closed-form front speed: {:.6}", lmp_speed_typed(&typed)?);
    let model = Model::Typed(typed);
    for (t, reps, cap) in [(4.0, 1000u64, 1u64 << 22), (8.0, 400, 1 << 25)] {
        let settings = McSettings { cap, ..Default::default() };
        let est = lmp_estimate(&model, t, reps, 13, &settings)?;
        println!("t = {t:>4.1}: L(t)/t = {:.5} +- {:.5}", est.mean, est.se);
    }
    Ok(())
}
