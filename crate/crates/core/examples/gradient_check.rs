//! Exact policy gradient against central finite differences of the solved
//! objective, with and without entropy regularization.

use evolving_ac::mdp::{random_mdp, soft_values, FiniteMdp};
use evolving_ac::oracle::exact_policy_gradient;
use evolving_ac::policy::PolicyParams;
use evolving_ac::reward::{regularized_reward, RewardParams};
use nalgebra::DVector;

fn objective(
    mdp: &FiniteMdp,
    theta: &PolicyParams,
    phi: &RewardParams,
) -> evolving_ac::Result<f64> {
    let v = soft_values(mdp, &theta.probs_table(), |s, a| {
        regularized_reward(phi, theta, s, a)
    })?
    .v;
    Ok(mdp.rho().iter().zip(v.iter()).map(|(r, v)| r * v).sum())
}

fn main() -> evolving_ac::Result<()> {
    let mdp = random_mdp(4, 3, 11, 1.0, 0.0, 0.9)?;
    let logits = (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect();
    let theta = PolicyParams::from_flat(4, 3, logits)?;
    let h = 1e-5;
    for alpha in [0.0, 0.1] {
        let phi = RewardParams::from_mdp(&mdp, alpha)?;
        let exact = exact_policy_gradient(&mdp, &theta, &phi)?;
        let mut fd = DVector::zeros(theta.len());
        for k in 0..theta.len() {
            let mut e = DVector::zeros(theta.len());
            e[k] = 1.0;
            fd[k] = (objective(&mdp, &theta.offset(&e, h)?, &phi)?
                - objective(&mdp, &theta.offset(&e, -h)?, &phi)?)
                / (2.0 * h);
        }
        println!(
            "α = {alpha}: J = {:.6}, ‖∇J‖ = {:.6}, relative error {:.2e}",
            exact.objective,
            exact.grad.norm(),
            (&exact.grad - &fd).norm() / fd.norm()
        );
    }
    Ok(())
}
