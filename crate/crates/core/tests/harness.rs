//! End-to-end runs of the training and evaluation harness on the default world.

use orchestrator::agent::load_checkpoint;
use orchestrator::harness::log::{read_jsonl, MetricRecord};
use orchestrator::harness::{
    baseline_single_expert, eval_corpus, evaluate, read_episode_log, train, train_to_dir, Config,
    Greedy, OraclePolicy, RandomPolicy,
};

#[test]
fn default_training_logs_exactly_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::default();
    let run = train_to_dir(&cfg, dir.path()).unwrap();
    let steps = read_episode_log(&dir.path().join("episodes.jsonl")).unwrap();
    let metrics: Vec<MetricRecord> = read_jsonl(&dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(steps.len(), 1000);
    assert_eq!(metrics.len(), 1000);
    assert_eq!(metrics.last().unwrap().step, 1000);
    assert_eq!(metrics.iter().filter(|m| m.synced).count(), 10);
    let ck = load_checkpoint(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(ck.step, 1000);
    assert_eq!(ck.net, run.agent.online);
    assert!(steps.iter().all(|s| (1..=6).contains(&s.t)));
    let again = train(&cfg).unwrap();
    let rewards = |xs: &[MetricRecord]| xs.iter().map(|m| m.reward.to_bits()).collect::<Vec<_>>();
    assert_eq!(rewards(&metrics), rewards(&again.metrics));
}

#[test]
fn oracle_routing_is_the_upper_reference() {
    let cfg = Config::default();
    let env = cfg.environment().unwrap();
    let prompts = eval_corpus(&cfg).unwrap();
    let (oracle, _) = evaluate(&env, &OraclePolicy, &prompts, 1, 0).unwrap();
    assert_eq!(oracle.routing_accuracy, Some(1.0));
    for i in 0..env.action_count() {
        let (single, _) = baseline_single_expert(&env, &cfg, i, &prompts, 1, 0).unwrap();
        assert!(
            oracle.mean_oracle_fraction >= single.mean_oracle_fraction,
            "expert {i}: {} > {}",
            single.mean_oracle_fraction,
            oracle.mean_oracle_fraction
        );
        assert!(single.mean_return < oracle.mean_return, "expert {i}");
    }
}

#[test]
fn trained_policy_is_shorter_than_random() {
    let cfg = Config::default();
    let run = train(&cfg).unwrap();
    let env = cfg.environment().unwrap();
    let prompts = eval_corpus(&cfg).unwrap();
    let (greedy, _) = evaluate(
        &env,
        &Greedy {
            net: &run.agent.online,
        },
        &prompts,
        1,
        0,
    )
    .unwrap();
    let (random, _) = evaluate(&env, &RandomPolicy, &prompts, 1, 0).unwrap();
    println!(
        "mean length greedy {:.3} random {:.3}",
        greedy.mean_length, random.mean_length
    );
    assert!(greedy.mean_length < random.mean_length);
}
