//! One run on the default fixture: writes the trace CSV and prints the
//! summary JSON.

use evolving_ac::actor_critic::{run_acer, RunInit, RunSettings, StepSchedule};
use evolving_ac::mdp::{FeatureMap, MdpGenerator};
use evolving_ac::reward::{OracleConfig, RewardOracle};

fn main() -> evolving_ac::Result<()> {
    let mdp = MdpGenerator::default_fixture().generate()?;
    let features = FeatureMap::tabular(mdp.n_states());
    let init = RunInit::defaults(&mdp, 0.01)?;
    let oracle = RewardOracle::new(&OracleConfig::fixed(), &init.phi, 1)?;
    let mut settings = RunSettings::new(1 << 14, 1);
    settings.schedule = StepSchedule::new(0.05, 3.0, 9)?;

    let trace = run_acer(&mdp, &features, &init, oracle, &settings)?.with_label("static");
    let path = std::env::temp_dir().join("acer_run.csv");
    trace.save_csv(&path)?;
    println!("trace: {} ({} rows)", path.display(), trace.records.len());
    println!("{}", serde_json::to_string_pretty(&trace.summary()?)?);
    Ok(())
}
