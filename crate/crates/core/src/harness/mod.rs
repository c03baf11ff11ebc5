//! Experiment layer: configuration, training driver, evaluation against
//! single-expert baselines, statistics and logs.

pub mod config;
pub mod eval;
pub mod log;
pub mod stats;
pub mod train;

pub use config::Config;
pub use eval::{
    baseline_single_expert, evaluate, EvalReport, Greedy, OraclePolicy, Policy, PolicyEval,
    RandomPolicy, SingleExpert,
};
pub use log::{read_episode_log, write_episode_log, EpisodeRecord, MetricRecord, StepRecord};
pub use stats::{mean_stderr, wilcoxon_signed_rank, win_rate, WilcoxonResult};
pub use train::{eval_corpus, train, train_corpus, train_to_dir, TrainRun, TrainSummary};
