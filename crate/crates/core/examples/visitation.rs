//! Exact discounted visitation and soft values of the uniform policy on the
//! default fixture, and the restart kernel's γ-contraction toward ν.

use evolving_ac::mdp::{
    apply_sampling_operator, exact_visitation, soft_values, MdpGenerator, StateDistribution,
};
use evolving_ac::policy::PolicyParams;
use evolving_ac::reward::{regularized_reward, RewardParams};

fn main() -> evolving_ac::Result<()> {
    let mdp = MdpGenerator::default_fixture().generate()?;
    let theta = PolicyParams::zeros(mdp.n_states(), mdp.n_actions());
    let probs = theta.probs_table();
    let phi = RewardParams::from_mdp(&mdp, 0.01)?;

    let nu = exact_visitation(&mdp, &probs)?;
    println!("ν  = {:.5?}", nu.probs());
    let values = soft_values(&mdp, &probs, |s, a| regularized_reward(&phi, &theta, s, a))?;
    println!("Ṽ  = {:.5?}", values.v.as_slice());

    let mut dist = StateDistribution::new(vec![1.0, 0.0, 0.0, 0.0, 0.0])?;
    println!("\n k   ‖ν_k − ν‖₁   γ^k‖ν_0 − ν‖₁");
    let start = dist.l1_distance(&nu);
    for k in 0..=10 {
        println!(
            "{k:>2}   {:.3e}    {:.3e}",
            dist.l1_distance(&nu),
            mdp.gamma().powi(k) * start
        );
        dist = apply_sampling_operator(&mdp, &probs, &dist)?;
    }
    Ok(())
}
