//! Laws of the spine under the changed measure: accelerated fission counts
//! and drifted terminal position (BBM), type occupation against
//! `v_lambda^2 pi` (finite-type), drift against `E'_lambda` (OU).

use nalgebra::DMatrix;
use spinelab::bbm::BbmParams;
use spinelab::mc::{spine_statistics, McSettings, Model};
use spinelab::multitype::TypedParams;
use spinelab::offspring::OffspringDist;
use spinelab::outype::{ou_spectral, OuParams};

fn main() -> spinelab::Result<()> {
    let binary = OffspringDist::finite(&[0.0, 1.0])?;
    let settings = McSettings::default();

    let bbm = Model::Bbm(BbmParams::new(1.0, binary.clone(), 0.0)?);
    let typed = Model::Typed(TypedParams::new(
        1.0,
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        None,
        vec![1.0, 2.0],
        vec![1.0, 1.0],
        vec![binary.clone(), binary],
        0.0,
        0,
    )?);
    // start the OU type at its stationary scale so the drift statistic has
    // no warm-up transient
    let mu = ou_spectral(&OuParams::new(10.0, 1.0, 1.0, 1.0, 0.0, 0.0)?, -0.5)?.mu;
    let ou = Model::Ou(OuParams::new(10.0, 1.0, 1.0, 1.0, 0.0, (10.0 / (2.0 * mu)).sqrt())?);

    for (model, lambda, t, reps) in [
        (bbm, -1.0, 2.0, 4000u64),
        (typed, -1.0, 50.0, 800),
        (ou, -0.5, 20.0, 800),
    ] {
        println!("== {} spine statistics (lambda = {lambda}, t = {t}) ==", model.name());
        let report = spine_statistics(&model, lambda, t, reps, 7, &settings)?;
        for s in &report.stats {
            println!(
                "{:>26}: observed {:>10.5}, expected {:>10.5}, z = {:+.2} {}",
                s.name,
                s.observed,
                s.expected,
                s.z,
                if s.within_three_se() { "" } else { "(!)" }
            );
        }
        println!();
    }
    Ok(())
}
