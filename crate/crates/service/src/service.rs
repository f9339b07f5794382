//! Session registry and the algorithm threads behind it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use pbrl_core::algorithms::{run_algorithm, AlgoConfig, AlgoVariant};
use pbrl_core::mdp::LayeredMdp;
use pbrl_core::preference::{Oracle, PreferenceModel, Winner};
use pbrl_harness::EnvSpec;
use serde::{Deserialize, Serialize};

use crate::replay::{read_label_log, session_winners};
use crate::session::{PendingQuery, RunState, Session, SessionOracle, SessionStatus, Side};
use crate::ServiceError;

/// What a session runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub env: EnvSpec,
    #[serde(default)]
    pub env_seed: u64,
    pub algo: AlgoConfig,
    /// Label log to append to.
    #[serde(default)]
    pub log: Option<PathBuf>,
    /// Earlier log whose answers for `resume_session` are replayed first.
    #[serde(default)]
    pub resume_from: Option<PathBuf>,
    #[serde(default)]
    pub resume_session: Option<String>,
}

/// Upper bound on the comparisons `config` can ask for on `states` states.
pub fn comparison_bound(config: &AlgoConfig, states: usize) -> Option<u64> {
    let s = states as u64;
    Some(match config.variant {
        AlgoVariant::PepsFixed { n } => n / 2,
        AlgoVariant::PepsBudget { n0 } | AlgoVariant::PepsTarget { n0, .. } => n0 / 2 * s,
        AlgoVariant::Peps2 { n2, .. } => n2 / 2 * s,
        AlgoVariant::Pps { n2, .. } => n2 * s,
    })
}

#[derive(Default)]
struct Registry {
    sessions: BTreeMap<String, Arc<Session>>,
    next_id: u64,
}

/// Shared service state; clones refer to the same sessions.
#[derive(Clone, Default)]
pub struct PreferenceService {
    registry: Arc<Mutex<Registry>>,
}

impl PreferenceService {
    pub fn new() -> Self {
        Self::default()
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a session without starting an algorithm; the returned
    /// session doubles as the human oracle via [`SessionOracle`].
    pub fn open_session(
        &self,
        name: Option<String>,
        mdp: Arc<LayeredMdp>,
        expected_comparisons: Option<u64>,
        log: Option<PathBuf>,
        replay: Vec<Winner>,
    ) -> Result<Arc<Session>, ServiceError> {
        let mut reg = self.registry();
        let id = format!("s{}", reg.next_id);
        reg.next_id += 1;
        let name = name.unwrap_or_else(|| id.clone());
        let session = Arc::new(Session::new(id.clone(), name, mdp, expected_comparisons, log, replay)?);
        reg.sessions.insert(id, session.clone());
        Ok(session)
    }

    /// Builds the environment and starts the run on its own thread.
    pub fn start(&self, spec: SessionSpec) -> Result<Arc<Session>, ServiceError> {
        let mdp = Arc::new(spec.env.build(spec.env_seed).map_err(|e| ServiceError::BadSpec(e.to_string()))?);
        spec.algo.validate().map_err(|e| ServiceError::BadSpec(e.to_string()))?;
        let replay = match &spec.resume_from {
            Some(path) => {
                let id = spec
                    .resume_session
                    .as_deref()
                    .ok_or_else(|| ServiceError::BadSpec("resume_from needs resume_session".into()))?;
                session_winners(&read_label_log(path)?, id)?
            }
            None => Vec::new(),
        };
        let bound = comparison_bound(&spec.algo, mdp.state_count());
        let session = self.open_session(spec.name.clone(), mdp.clone(), bound, spec.log.clone(), replay)?;
        let worker = session.clone();
        let algo = spec.algo;
        std::thread::Builder::new()
            .name(format!("run-{}", session.id()))
            .spawn(move || {
                let human = Arc::new(SessionOracle(worker.clone()));
                let result = Oracle::new(PreferenceModel::Human(human), &mdp, algo.seed)
                    .map_err(|e| e.to_string())
                    .and_then(|mut oracle| run_algorithm(&mdp, &mut oracle, &algo).map_err(|e| e.to_string()));
                worker.set_run(match result {
                    Ok(out) => RunState::Finished {
                        policy_hash: out.policy.digest(),
                        comparisons: out.counters.comparisons,
                        env_steps: out.counters.env_steps,
                        episodes: out.counters.episodes,
                    },
                    Err(error) => RunState::Failed { error },
                });
            })
            .map_err(|e| ServiceError::Io(e.to_string()))?;
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ServiceError> {
        self.registry().sessions.get(id).cloned().ok_or_else(|| ServiceError::UnknownSession(id.into()))
    }

    pub fn sessions(&self) -> Vec<SessionStatus> {
        let all: Vec<Arc<Session>> = self.registry().sessions.values().cloned().collect();
        all.iter().map(|s| s.status()).collect()
    }

    pub fn next(&self, session_id: &str) -> Result<Option<PendingQuery>, ServiceError> {
        Ok(self.session(session_id)?.next())
    }

    pub fn status(&self, session_id: &str) -> Result<SessionStatus, ServiceError> {
        Ok(self.session(session_id)?.status())
    }

    pub fn answer(&self, query_id: &str, side: Side) -> Result<PendingQuery, ServiceError> {
        let all: Vec<Arc<Session>> = self.registry().sessions.values().cloned().collect();
        let owner = all.into_iter().find(|s| s.knows(query_id));
        match owner {
            Some(s) => s.answer(query_id, side),
            None => Err(ServiceError::UnknownQuery(query_id.into())),
        }
    }

    /// Closes every session, failing blocked comparisons.
    pub fn close_all(&self) {
        let all: Vec<Arc<Session>> = self.registry().sessions.values().cloned().collect();
        for s in all {
            s.close();
        }
    }
}
