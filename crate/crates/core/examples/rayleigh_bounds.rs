//! Rayleigh zero-forcing penalty across SNR: scalar closed form, quadrature
//! check, optimal Laplace rate and the multi-block bound terms.
//!
//! cargo run --release --example rayleigh_bounds

use channel_pac::bound::{
    lambda_star, omega_rayleigh_scalar, quad_entropy_t, quad_omega_rayleigh, rayleigh_full_terms,
};
use channel_pac::channel::db_to_linear;

fn main() -> channel_pac::Result<()> {
    let (d, k, lipschitz) = (32, 100.0, 0.05);
    println!(
        "{:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "SNR dB", "omega", "quad", "entropy", "lambda*", "penalty", "log term"
    );
    for db in [-10.0, -5.0, 0.0, 5.0, 10.0, 20.0] {
        let gamma = db_to_linear(db);
        let terms = rayleigh_full_terms(d, k, lipschitz, gamma)?;
        println!(
            "{db:>7.1} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            omega_rayleigh_scalar(gamma)?,
            quad_omega_rayleigh(gamma)?,
            quad_entropy_t(gamma)?,
            lambda_star(k, lipschitz, gamma)?,
            terms.penalty,
            terms.log_term
        );
    }
    Ok(())
}
