//! Trains one agent per seed and compares it with every single-expert baseline
//! on held-out prompts.
//!
//! ```text
//! cargo run --release --example sweep -- [seeds] [steps]
//! ```

use orchestrator::harness::{
    baseline_single_expert, eval_corpus, evaluate, train, Config, EvalReport, Greedy, OraclePolicy,
    RandomPolicy,
};

fn main() -> orchestrator::Result<()> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let seeds = args.first().copied().unwrap_or(5);
    let steps = args.get(1).copied().unwrap_or(1000);
    for seed in 0..seeds {
        let cfg = Config {
            seed,
            total_steps: steps,
            ..Config::default()
        };
        let run = train(&cfg)?;
        let env = cfg.environment()?;
        let prompts = eval_corpus(&cfg)?;
        let (greedy, _) = evaluate(
            &env,
            &Greedy {
                net: &run.agent.online,
            },
            &prompts,
            1,
            seed,
        )?;
        let mut baselines = Vec::new();
        for i in 0..env.action_count() {
            baselines.push(baseline_single_expert(&env, &cfg, i, &prompts, 1, seed)?.0);
        }
        baselines.push(evaluate(&env, &OraclePolicy, &prompts, 1, seed)?.0);
        baselines.push(evaluate(&env, &RandomPolicy, &prompts, 1, seed)?.0);
        let report = EvalReport::new(greedy, baselines)?;
        println!(
            "seed {seed}: loss {:?} -> {:?}",
            run.summary.first_decile_loss, run.summary.last_decile_loss
        );
        println!("{}", report.table());
    }
    Ok(())
}
