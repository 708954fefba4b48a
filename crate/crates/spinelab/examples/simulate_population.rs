//! Exact population simulation under the original measure, with the
//! additive martingale evaluated on each snapshot.

use nalgebra::DMatrix;
use spinelab::bbm::{bbm_spectral, simulate_p_bbm, z_lambda_bbm, BbmParams};
use spinelab::multitype::{simulate_p_typed, typed_spectral, z_lambda_typed, TypedParams};
use spinelab::offspring::OffspringDist;
use spinelab::outype::{ou_spectral, simulate_p_ou, z_lambda_ou, OuParams};

fn main() -> spinelab::Result<()> {
    let binary = OffspringDist::finite(&[0.0, 1.0])?;

    let bbm = BbmParams::new(1.0, OffspringDist::finite(&[0.2, 0.5, 0.3])?, 0.0)?;
    let spec = bbm_spectral(&bbm, -0.5)?;
    println!("== BBM snapshot at t = 3 ==");
    let snap = simulate_p_bbm(&bbm, 3.0, 2024, 1 << 20)?;
    println!("alive particles: {}", snap.len());
    println!("Z_lambda(3) = {:.6} (E Z = e^(lambda x0) = 1)", z_lambda_bbm(&snap, &spec));
    let min = snap.particles.iter().map(|p| p.position).fold(f64::INFINITY, f64::min);
    let max = snap.particles.iter().map(|p| p.position).fold(f64::NEG_INFINITY, f64::max);
    println!("positions span [{min:.3}, {max:.3}]");
    for p in snap.particles.iter().take(4) {
        println!("  particle {}: x = {:+.4}, born {:.4}", p.label, p.position, p.birth_time);
    }

    println!("\n== two-type snapshot at t = 3 ==");
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
    let tspec = typed_spectral(&typed, -1.0)?;
    let snap = simulate_p_typed(&typed, 3.0, 7, 1 << 20)?;
    let per_type: Vec<usize> = (0..2)
        .map(|k| snap.particles.iter().filter(|p| p.type_value == k).count())
        .collect();
    println!("alive particles: {} (type counts {:?})", snap.len(), per_type);
    println!("Z_lambda(3) = {:.6}", z_lambda_typed(&snap, &tspec));

    println!("\n== OU-type snapshot at t = 2 (h = 0.01) ==");
    let ou = OuParams::new(10.0, 1.0, 1.0, 1.0, 0.0, 0.0)?;
    let ospec = ou_spectral(&ou, -0.5)?;
    let snap = simulate_p_ou(&ou, 2.0, 0.01, 11, 1 << 20)?;
    println!("alive particles: {}", snap.len());
    println!("Z_lambda(2) = {:.6}", z_lambda_ou(&snap, &ospec));
    for p in snap.particles.iter().take(4) {
        println!(
            "  particle {}: x = {:+.4}, type = {:+.4}, born {:.4}",
            p.label, p.position, p.type_value, p.birth_time
        );
    }
    Ok(())
}
