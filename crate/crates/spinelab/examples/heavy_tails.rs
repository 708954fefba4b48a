//! The log-power-tail family `p_k ~ k^-2 (log k)^-gamma`: finite mean with
//! divergent higher moments, the inputs that separate the classifier's
//! L-log-L and p-th-moment branches from the generic case.

use spinelab::offspring::OffspringDist;
use spinelab::rng::{stream, Context};

fn main() -> spinelab::Result<()> {
    for gamma in [1.5, 2.5] {
        let d = OffspringDist::log_power_tail(gamma, 2)?;
        println!("== {d} ==");
        println!("P(A = 0)        = {:.12}", d.p_zero());
        println!("mean m          = {:.12}", d.mean());
        println!("P(A log+ A)     = {}", pretty(d.xlogx()));
        println!("P(A^1.5)        = {}", pretty(d.p_moment(1.5)));
        println!("P(A^0.5)        = {:.12}", d.p_moment(0.5));
        println!("Q~(A~^0.5)      = {}", pretty(d.size_biased_q_moment(0.5)));

        let mut rng = stream(1, Context::Aux, 0);
        let n = 200_000;
        let draws: Vec<u64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let zeros = draws.iter().filter(|&&k| k == 0).count();
        let max = draws.iter().max().unwrap();
        println!(
            "{n} draws: zero fraction {:.4} (exact {:.4}), largest draw {max}",
            zeros as f64 / n as f64,
            d.p_zero()
        );
        println!();
    }

    // size-biasing a finite law
    let d = OffspringDist::finite(&[0.5, 0.5])?;
    let sb = d.size_bias();
    println!("size bias of {d}: mean {} -> {}", d.mean(), sb.mean());
    Ok(())
}

fn pretty(x: f64) -> String {
    if x.is_infinite() {
        "infinity".to_string()
    } else {
        format!("{x:.12}")
    }
}
