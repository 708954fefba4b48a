//! Spectral layer of all three models: eigenvalue, speed function, the
//! speed minimizer, and the derived decay-rate / front-speed constants.

use nalgebra::DMatrix;
use spinelab::bbm::{bbm_spectral, BbmParams};
use spinelab::multitype::{
    decay_rate_typed, lambda_tilde_typed, lmp_speed_typed, typed_spectral, TypedParams,
};
use spinelab::numeric::linspace;
use spinelab::offspring::OffspringDist;
use spinelab::outype::{lambda_tilde_ou, ou_spectral, OuParams};

fn main() -> spinelab::Result<()> {
    let binary = OffspringDist::finite(&[0.0, 1.0])?;

    println!("== single-type BBM (r = 1, binary offspring) ==");
    let bbm = BbmParams::new(1.0, binary.clone(), 0.0)?;
    println!("{:>8} {:>12} {:>12}", "lambda", "E_lambda", "c_lambda");
    for &l in &linspace(-2.0, -0.25, 8) {
        let s = bbm_spectral(&bbm, l)?;
        println!("{l:>8.3} {:>12.6} {:>12.6}", s.e_lambda, s.c_lambda.unwrap());
    }
    println!("lambda_tilde = {:.6}\n", bbm_spectral(&bbm, -1.0)?.lambda_tilde);

    println!("== two-type branching diffusion ==");
    let typed = TypedParams::new(
        1.0,
        DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]),
        Some(vec![0.5, 0.5]),
        vec![1.0, 2.0],
        vec![1.0, 1.0],
        vec![binary.clone(), binary.clone()],
        0.0,
        0,
    )?;
    println!(
        "{:>8} {:>12} {:>12} {:>10} {:>10}",
        "lambda", "E_lambda", "E'_lambda", "v_1", "v_2"
    );
    for &l in &linspace(-2.0, -0.25, 8) {
        let s = typed_spectral(&typed, l)?;
        println!(
            "{l:>8.3} {:>12.6} {:>12.6} {:>10.6} {:>10.6}",
            s.e_lambda, s.e_prime, s.v_lambda[0], s.v_lambda[1]
        );
    }
    let tilde = lambda_tilde_typed(&typed)?;
    println!("lambda_tilde(theta) = {tilde:.8}");
    println!("left-most particle speed = {:.8}", lmp_speed_typed(&typed)?);
    println!(
        "decay rate of Z at lambda = 1.5 lambda_tilde: {:.8}\n",
        decay_rate_typed(&typed, 1.5 * tilde)?
    );

    println!("== OU-type branching diffusion (theta=10, a=r=rho=1) ==");
    let ou = OuParams::new(10.0, 1.0, 1.0, 1.0, 0.0, 0.0)?;
    println!(
        "{:>8} {:>10} {:>10} {:>10} {:>12} {:>10}",
        "lambda", "mu", "psi-", "psi+", "E_lambda", "E'_lambda"
    );
    for &l in &linspace(-0.65, -0.1, 8) {
        let s = ou_spectral(&ou, l)?;
        println!(
            "{l:>8.3} {:>10.6} {:>10.6} {:>10.6} {:>12.6} {:>10.6}",
            s.mu, s.psi_minus, s.psi_plus, s.e_lambda, s.e_prime
        );
    }
    println!("admissible interval: ({:.6}, 0)", ou.lambda_min());
    println!("lambda_tilde(theta) = {:.8}", lambda_tilde_ou(&ou)?);
    Ok(())
}
