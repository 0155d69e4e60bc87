//! Core of the recovery-procedure workbench: a dynamic model of the VAM
//! raw-material feed section, its PID loops, the MAL03 feed-pressure
//! malfunction, an episodic RL environment, the qualitative influence-graph
//! planner and a from-scratch PPO agent.

pub mod control;
pub mod envgym;
pub mod plantsim;
pub mod scenario;
pub mod planner;
pub mod ppo;
