//! The static, gradient-oracle and drift sweeps on the default fixture,
//! T = 2^10..2^16 with 5 seeds each, followed by the log-log fits.

use evolving_ac::experiment::worker_count;
use evolving_ac::verify::{rate_suite, RateSweep};

fn print_sweep(name: &str, sweep: &RateSweep) {
    println!("{name}");
    for h in &sweep.group.per_t {
        println!(
            "  T = {:>6}  G_T {:.4e} ± {:.1e}  W_T {:.4e} ± {:.1e}  F_T {:.3e}",
            h.horizon, h.g_t.mean, h.g_t.std, h.w_t.mean, h.w_t.std, h.f_t.mean
        );
    }
    let fits = &sweep.group.rate_fits;
    for (label, fit) in [("G_T", &fits.g_t), ("W_T", &fits.w_t)] {
        if let Some(fit) = fit {
            println!("  {label} slope {:.3}  R² {:.3}", fit.slope, fit.r_squared);
        }
    }
    if !sweep.group.flags.is_empty() {
        println!("  flags: {}", sweep.group.flags.join(", "));
    }
}

fn main() -> evolving_ac::Result<()> {
    let suite = rate_suite(worker_count()?, None)?;
    print_sweep("static", &suite.fixed);
    print_sweep("gradient", &suite.gradient);
    print_sweep("drift", &suite.drift);
    println!(
        "drift/static G_T at T = 2^16: {:.1}",
        suite.drift.group.g_t.mean / suite.fixed.group.g_t.mean
    );
    Ok(())
}
