//! Tabular layered MDPs, preference oracles, dueling bandits and
//! preference-based policy search.

pub mod algorithms;
pub mod dueling;
pub mod env;
pub mod explorer;
pub mod ledger;
pub mod mdp;
pub mod preference;
