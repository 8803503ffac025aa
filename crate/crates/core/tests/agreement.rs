//! Closed forms against simulated means on randomized configurations.

mod common;

use common::{agreement_checks, random_config};
use relevo::simulator;

#[test]
fn randomized_configs_agree_with_simulation() {
    let mut total = 0;
    let mut passed = 0;
    for seed in 100..106 {
        let cfg = random_config(seed, 20_000);
        let traces = simulator::run(&cfg).unwrap();
        for c in agreement_checks(&cfg, &traces) {
            total += 1;
            if c.passes() {
                passed += 1;
            } else {
                eprintln!(
                    "seed {seed} {}: analytic {:.6} simulated {:.6} ± {:.6} (z = {:.2})",
                    c.name,
                    c.analytic,
                    c.simulated.mean,
                    c.simulated.std_error,
                    c.z()
                );
            }
        }
    }
    assert!(passed as f64 >= 0.95 * total as f64, "{passed}/{total} checks within 3 SE");
}
