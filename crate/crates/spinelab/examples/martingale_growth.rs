//! Growth versus plateau of `E[Z_lambda(t)^p]`: the empirical discriminator
//! between the L^p-convergent and L^p-unbounded regimes.

use spinelab::bbm::{classify_bbm, BbmParams};
use spinelab::mc::{estimate_p_moment_curve, McSettings, Model};
use spinelab::offspring::OffspringDist;

fn main() -> spinelab::Result<()> {
    let params = BbmParams::new(1.0, OffspringDist::finite(&[0.0, 1.0])?, 0.0)?;
    let model = Model::Bbm(params.clone());
    let settings = McSettings::default();
    let p = 2.0;

    for (lambda, times, reps) in [
        (-0.5, vec![3.0, 3.5, 4.0, 4.5, 5.0], 3000u64),
        (-1.3, vec![0.5, 1.0, 1.5, 2.0, 2.5], 8000),
    ] {
        let verdict = classify_bbm(&params, lambda, Some(p))?;
        println!("lambda = {lambda}, p = {p}: classifier says {}", verdict.tag);
        let curve = estimate_p_moment_curve(&model, lambda, p, &times, reps, 99, &settings)?;
        println!("{:>6} {:>14} {:>12} {:>10}", "t", "E[Z^p]", "se", "flag");
        for (i, est) in curve.values.iter().enumerate() {
            println!(
                "{:>6.2} {:>14.6} {:>12.6} {:>10}",
                curve.times[i],
                est.mean,
                est.se,
                if curve.unreliable[i] { "UNRELIABLE" } else { "" }
            );
        }
        println!(
            "fitted log-slope = {:+.4} +- {:.4} (3 se)\n",
            curve.log_slope, curve.log_slope_halfwidth
        );
    }
    Ok(())
}
