//! Finite-difference checks of backpropagation and of the variational
//! objective gradient on seeded random networks.
//!
//! cargo run --release --example gradient_check

use channel_pac::gradcheck::{check_network, check_objective};

fn main() -> channel_pac::Result<()> {
    let mut failures = 0;
    for seed in 0..10 {
        for r in [check_network(seed)?, check_objective(seed)?] {
            println!("{:>2} {:<50} {:.2e} (tol {:.0e})", seed, r.label, r.max_rel_error, r.tolerance);
            failures += usize::from(!r.passed());
        }
    }
    println!("{failures} failures");
    Ok(())
}
