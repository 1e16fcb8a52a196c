//! The TD system at the uniform policy for tabular and rank-deficient
//! features: ω*, λ, ε and both sides of the TD-error bound.

use evolving_ac::mdp::{FeatureMap, MdpGenerator};
use evolving_ac::oracle::{snapshot, td_error_bound_check};
use evolving_ac::policy::PolicyParams;
use evolving_ac::reward::RewardParams;

fn main() -> evolving_ac::Result<()> {
    let mdp = MdpGenerator::default_fixture().generate()?;
    let theta = PolicyParams::zeros(mdp.n_states(), mdp.n_actions());
    let phi = RewardParams::from_mdp(&mdp, 0.01)?;
    let maps = [
        ("tabular", FeatureMap::tabular(5)),
        ("projection d=3", FeatureMap::random_projection(5, 3, 1)?),
        ("constant", FeatureMap::constant(5)),
    ];
    for (name, features) in &maps {
        let snap = snapshot(&mdp, features, &theta, &phi, 10.0)?;
        let bound = td_error_bound_check(&mdp, features, &theta, &phi)?;
        println!("{name}");
        println!("  ω*        = {:.4?}", snap.omega_star.as_slice());
        println!("  residual  = {:.2e}", snap.residual);
        println!("  λ         = {:.4e}", snap.lambda);
        println!("  ε         = {:.4e}", snap.epsilon);
        println!("  TD gap    = {:.4e} ≤ 2√2ε = {:.4e}", bound.lhs, bound.rhs);
    }
    Ok(())
}
