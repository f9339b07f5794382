use std::time::Duration;

use pbrl_core::algorithms::{run_algorithm, AlgoConfig, AlgoVariant, RunOutput};
use pbrl_core::mdp::LayeredMdp;
use pbrl_core::preference::{sample_comparison, Oracle, PreferenceModel};
use pbrl_harness::EnvSpec;
use pbrl_service::{PendingQuery, SessionSpec, Side};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_SEED: u64 = 77;
pub const TIMEOUT: Duration = Duration::from_secs(60);

pub fn grid_spec(log: Option<std::path::PathBuf>) -> SessionSpec {
    SessionSpec {
        name: Some("grid".into()),
        env: EnvSpec::Gridworld { size: 3, blocks: 3, block_reward: 1.0 / 3.0 },
        env_seed: 4,
        algo: AlgoConfig::new(AlgoVariant::PepsFixed { n: 80 }, 11),
        log,
        resume_from: None,
        resume_session: None,
    }
}

/// The same run answered in-process by the deterministic model.
pub fn reference_run(spec: &SessionSpec) -> (LayeredMdp, RunOutput) {
    let mdp = spec.env.build(spec.env_seed).unwrap();
    let mut oracle = Oracle::new(PreferenceModel::Deterministic, &mdp, ORACLE_SEED).unwrap();
    let out = run_algorithm(&mdp, &mut oracle, &spec.algo).unwrap();
    (mdp, out)
}

/// Answers like the deterministic model, drawing tie-breaks from `rng`
/// exactly as the in-process oracle does.
pub fn robot_choice(mdp: &LayeredMdp, query: &PendingQuery, rng: &mut ChaCha8Rng) -> Side {
    let (l, r) = (query.left.trajectory(), query.right.trajectory());
    sample_comparison(&PreferenceModel::Deterministic, mdp, &l, &r, rng).unwrap().into()
}
