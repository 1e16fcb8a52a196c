//! Each reward-update rule over one short run: the measured reward
//! variation F_T next to the actor and critic errors.

use evolving_ac::actor_critic::{run_acer, RunInit, RunSettings, StepSchedule};
use evolving_ac::mdp::{FeatureMap, MdpGenerator};
use evolving_ac::metrics::second_half_averages;
use evolving_ac::reward::{OracleConfig, RewardOracle};

fn main() -> evolving_ac::Result<()> {
    let mdp = MdpGenerator::default_fixture().generate()?;
    let features = FeatureMap::tabular(mdp.n_states());
    let init = RunInit::defaults(&mdp, 0.05)?;
    let horizon = 1 << 12;
    let configs: Vec<(&str, OracleConfig)> = vec![
        ("static", OracleConfig::fixed()),
        ("gradient", OracleConfig::gradient_based(1.0, 1.0, 2.0, 17)),
        (
            "anneal",
            serde_json::from_str(
                r#"{"kind":"EntropyAnneal","c_phi":1,"clip":1,"params":{"alpha_target":0.0,"tau":500}}"#,
            )?,
        ),
        (
            "blend",
            serde_json::from_str(&format!(
                r#"{{"kind":"ShapingBlend","c_phi":1,"clip":1,"params":{{"endpoint":{:?}}}}}"#,
                vec![0.5; 15]
            ))?,
        ),
        ("drift", OracleConfig::constant_drift(0.01, 23)),
    ];
    println!(
        "{:<10} {:>12} {:>12} {:>12} {:>10}",
        "oracle", "G_T", "W_T", "F_T", "T²·F_T"
    );
    for (name, config) in &configs {
        let oracle = RewardOracle::new(config, &init.phi, 1)?;
        let mut settings = RunSettings::new(horizon, 1);
        settings.schedule = StepSchedule::new(0.05, 3.0, 9)?;
        let trace = run_acer(&mdp, &features, &init, oracle, &settings)?;
        let m = second_half_averages(&trace)?;
        println!(
            "{name:<10} {:>12.4e} {:>12.4e} {:>12.4e} {:>10.3}",
            m.g_t,
            m.w_t,
            m.f_t,
            m.f_t * (horizon as f64).powi(2)
        );
    }
    Ok(())
}
