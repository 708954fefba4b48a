//! The spine change of measure in action: a pathwise construction with its
//! spine record, and the Radon-Nikodym fingerprint
//! `E_P[F Z_lambda(t)]/Z_lambda(0) = E_Q[F]` checked by Monte Carlo for all
//! three models.

use nalgebra::DMatrix;
use spinelab::bbm::{simulate_q_bbm, BbmParams};
use spinelab::mc::{rn_consistency, McSettings, Model};
use spinelab::multitype::TypedParams;
use spinelab::offspring::OffspringDist;
use spinelab::outype::OuParams;

fn main() -> spinelab::Result<()> {
    let binary = OffspringDist::finite(&[0.0, 1.0])?;
    let bbm = BbmParams::new(1.0, OffspringDist::finite(&[0.1, 0.6, 0.3])?, 0.0)?;

    println!("== one spine construction (BBM, lambda = -1, t = 3) ==");
    let (snap, rec) = simulate_q_bbm(&bbm, -1.0, 3.0, 5, 1 << 20)?;
    println!("population at t: {} particles", snap.len());
    println!("spine fissions: {} (label {})", rec.n_t(), rec.terminal_label);
    for (k, f) in rec.fissions.iter().enumerate() {
        println!(
            "  S_{} = {:.4}: xi = {:+.4}, extra offspring = {}",
            k + 1,
            f.time,
            f.position,
            f.extra_offspring
        );
    }
    println!("terminal position xi_t = {:+.4}\n", rec.terminal_position);

    println!("== change-of-measure identity, F = exp(-|N_t|), t = 1 ==");
    let typed = TypedParams::new(
        1.0,
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        None,
        vec![1.0, 2.0],
        vec![1.0, 1.0],
        vec![binary.clone(), binary],
        0.0,
        0,
    )?;
    let models = [
        (Model::Bbm(bbm), -0.5),
        (Model::Typed(typed), -0.5),
        (Model::Ou(OuParams::new(10.0, 1.0, 1.0, 1.0, 0.0, 0.0)?), -0.5),
    ];
    let settings = McSettings {
        step: 0.005,
        ..Default::default()
    };
    for (model, lambda) in models {
        let rep = rn_consistency(&model, lambda, 1.0, 4000, 42, &settings)?;
        println!(
            "{:>5}: P side {:.5} +- {:.5} | Q side {:.5} +- {:.5} | z = {:+.2}",
            model.name(),
            rep.p_side.mean,
            rep.p_side.se,
            rep.q_side.mean,
            rep.q_side.se,
            rep.z
        );
    }
    Ok(())
}
