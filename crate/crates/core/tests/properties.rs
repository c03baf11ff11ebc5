//! Property tests over random prompts, ledgers and episodes.

use std::collections::BTreeSet;

use orchestrator::agent::{masked_argmax, select_action, QNetwork};
use orchestrator::embedder::{
    embed_state, serialize_reflection_state, StateEmbedding, EMBEDDING_DIM,
};
use orchestrator::env::{Environment, Prompt};
use orchestrator::reflection::{
    critic_score, extract_command, AtomicCommand, CommandSet, Subscores, TaskCategory, MAX_ATTEMPTS,
};
use orchestrator::registry::{CanvasState, Modality, Registry};
use orchestrator::rng;
use orchestrator::sim::{oracle_fraction, PromptGenerator};
use proptest::prelude::*;
use rand::Rng;

fn env() -> Environment {
    Environment::synthetic(Registry::default_synthetic())
}

fn prompt(seed: u64, difficulty: usize) -> Prompt {
    PromptGenerator::default()
        .generate(seed, difficulty, &mut rng::stream(seed, &[11]))
        .unwrap()
}

/// Plays one episode with uniformly random legal actions.
fn random_episode(env: &Environment, p: &Prompt, seed: u64) -> Vec<(usize, bool, f64, u32, bool)> {
    let mut r = rng::stream(seed, &[12]);
    let mut s = env.reset(p).unwrap();
    let mut out = Vec::new();
    while !s.done {
        let mask = env.legal_actions(&s);
        let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let a = legal[r.random_range(0..legal.len())];
        let blank = s.canvas.is_blank();
        let step = env.step(&s, a, &mut r).unwrap();
        out.push((a, blank, step.reward, step.state.t, step.done));
        s = step.state;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn embedding_is_unit_norm_and_deterministic(text in ".{0,80}") {
        let a = embed_state(&text);
        prop_assert_eq!(a.values().len(), EMBEDDING_DIM);
        if a == StateEmbedding::sentinel() {
            prop_assert_eq!(a.values()[0], 1.0);
        } else {
            prop_assert!((a.norm() - 1.0).abs() < 1e-6);
        }
        let b = embed_state(&text);
        prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn permuting_remaining_changes_serialization(
        items in prop::collection::vec(("[a-z]{1,8}", 0u32..3), 2..5),
        rot in 1usize..4,
    ) {
        let rem: Vec<(&str, u32)> = items.iter().map(|(t, a)| (t.as_str(), *a)).collect();
        let mut rotated = rem.clone();
        rotated.rotate_left(rot % rem.len());
        prop_assume!(rotated != rem);
        prop_assert_ne!(
            serialize_reflection_state(Some("x"), &rem),
            serialize_reflection_state(Some("x"), &rotated)
        );
    }

    #[test]
    fn eligibility_partitions_the_registry(atoms in prop::collection::btree_set(0usize..6, 0..4)) {
        let reg = Registry::default_synthetic();
        let all: BTreeSet<usize> = (0..reg.len()).collect();
        let blank: BTreeSet<usize> = reg.eligible(&CanvasState::Blank).into_iter().collect();
        let p = prompt(atoms.len() as u64, 6);
        let canvas = CanvasState::symbolic(atoms.iter().map(|&i| p.atoms[i].clone()), None);
        let drawn: BTreeSet<usize> = reg.eligible(&canvas).into_iter().collect();
        prop_assert!(blank.is_disjoint(&drawn));
        prop_assert_eq!(blank.union(&drawn).copied().collect::<BTreeSet<_>>(), all);
        for i in blank {
            prop_assert_eq!(reg.get(i).unwrap().modality, Modality::T2I);
        }
    }

    #[test]
    fn invoke_keeps_satisfied_atoms_unless_removing(seed in any::<u64>(), expert in 7usize..12, pick in 0usize..6) {
        let reg = Registry::default_synthetic();
        let p = prompt(seed, 6);
        let present: Vec<_> = p.atoms.iter().filter(|a| !a.category.is_removal()).take(3).cloned().collect();
        let canvas = CanvasState::symbolic(present.clone(), None);
        let cmd = AtomicCommand::from_atoms(1, vec![p.atoms[pick % p.atoms.len()].clone()]);
        let (a, qa) = reg.invoke(expert, &cmd, &canvas, &mut rng::stream(seed, &[1])).unwrap();
        let (b, qb) = reg.invoke(expert, &cmd, &canvas, &mut rng::stream(seed, &[1])).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(qa.to_bits(), qb.to_bits());
        prop_assert!((0.0..=10.0).contains(&qa));
        if !cmd.category.is_removal() {
            for atom in &present {
                prop_assert!(a.satisfies(atom));
            }
        }
    }

    #[test]
    fn raw_is_bounded_and_ten_only_when_perfect(
        seed in any::<u64>(),
        keep in prop::collection::vec(any::<bool>(), 6),
        quality in 0.0f64..=10.0,
        styled in any::<bool>(),
    ) {
        let p = prompt(seed, 6);
        let atoms = p.atoms.iter().zip(&keep).filter(|(_, k)| **k).map(|(a, _)| a.clone());
        let style = if styled { p.style.clone() } else { None };
        let canvas = CanvasState::symbolic(atoms, style);
        let v = critic_score(&canvas, &p.as_command(), &CommandSet::with_next_id(1), &p, quality);
        let s = v.subscores.unwrap();
        prop_assert!((0.0..=10.0).contains(&v.raw));
        prop_assert_eq!(v.raw, s.mean());
        let perfect = [s.content, s.spatial, s.visual, s.style].iter().all(|&x| x == 10.0);
        prop_assert_eq!(v.raw == 10.0, perfect);
    }

    #[test]
    fn extract_drain_is_stable_under_reordering(
        attempts in prop::collection::vec(0u32..3, 1..8),
        seed in any::<u64>(),
    ) {
        let build = |order: &[usize]| {
            let mut set = CommandSet::with_next_id(100);
            for &i in order {
                let mut c = AtomicCommand::from_text(i as u64, format!("cmd {i}"));
                c.attempts = attempts[i];
                set.push(c);
            }
            set
        };
        let drain = |mut set: CommandSet| {
            let mut ids = Vec::new();
            while let (Some(c), rest) = extract_command(set) {
                ids.push(c.id);
                set = rest;
            }
            ids
        };
        let order: Vec<usize> = (0..attempts.len()).collect();
        let mut shuffled = order.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng::stream(seed, &[]));
        let a = drain(build(&order));
        prop_assert_eq!(&a, &drain(build(&shuffled)));
        // Drain order is attempts first, then id.
        let keys: Vec<(u32, u64)> = a.iter().map(|&id| (attempts[id as usize], id)).collect();
        prop_assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn episodes_respect_modality_bounds_and_budget(seed in any::<u64>(), d in 1usize..=6) {
        let env = env();
        let trace = random_episode(&env, &prompt(seed, d), seed);
        prop_assert!((1..=6).contains(&trace.len()));
        for (i, &(a, blank, r, t, done)) in trace.iter().enumerate() {
            prop_assert_eq!(a < 7, blank, "modality at step {}", i);
            prop_assert!((-0.30 - 1e-12..=0.95 + 1e-12).contains(&r));
            prop_assert_eq!(t as usize, i + 1);
            prop_assert_eq!(done, i + 1 == trace.len());
        }
    }

    #[test]
    fn ledger_accounts_for_every_atom(seed in any::<u64>(), d in 1usize..=6) {
        let env = env();
        let p = prompt(seed, d);
        let mut r = rng::stream(seed, &[13]);
        let mut s = env.reset(&p).unwrap();
        let mut fractions = vec![0.0];
        while !s.done {
            let a = *env.registry.eligible(&s.canvas).first().unwrap() + (seed as usize % 5);
            let a = if env.legal_actions(&s)[a] { a } else { env.registry.eligible(&s.canvas)[0] };
            s = env.step(&s, a, &mut r).unwrap().state;
            fractions.push(oracle_fraction(&s.canvas, &p));
            // Each unsatisfied, non-abandoned atom sits in exactly one live command.
            let abandoned: BTreeSet<_> = s.c_rem.abandoned.iter().flat_map(|c| &c.payload).collect();
            for atom in p.atoms.iter().filter(|a| !s.canvas.satisfies(a) && !abandoned.contains(a)) {
                let holders = s.c_curr.iter().chain(s.c_rem.iter()).filter(|c| c.payload.contains(atom)).count();
                prop_assert_eq!(holders, 1, "atom {:?}", atom);
            }
            for c in s.c_curr.iter().chain(s.c_rem.iter()).chain(s.c_rem.abandoned.iter()) {
                prop_assert!(c.attempts <= MAX_ATTEMPTS);
            }
        }
        if !p.atoms.iter().any(|a| a.category.is_removal()) {
            prop_assert!(fractions.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn replay_is_bit_identical(seed in any::<u64>(), d in 1usize..=6) {
        let env = env();
        let p = prompt(seed, d);
        let a = random_episode(&env, &p, seed);
        let b = random_episode(&env, &p, seed);
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!((x.0, x.1, x.3, x.4), (y.0, y.1, y.3, y.4));
            prop_assert_eq!(x.2.to_bits(), y.2.to_bits());
        }
    }

    #[test]
    fn shifting_q_values_keeps_the_greedy_choice(
        q in prop::collection::vec(-5120i32..5120, 12),
        mask in prop::collection::vec(any::<bool>(), 12),
        c in -800i32..800,
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        // Dyadic values keep every sum exact, so ties survive the shift.
        let q: Vec<f64> = q.iter().map(|&x| f64::from(x) / 1024.0).collect();
        let c = f64::from(c) / 8.0;
        let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
        let a = masked_argmax(&q, &mask).unwrap();
        prop_assert!(mask[a]);
        prop_assert_eq!(a, masked_argmax(&shifted, &mask).unwrap());
    }

    #[test]
    fn exploration_never_leaves_the_mask(seed in any::<u64>(), eps in 0.0f64..=1.0, bits in 1u16..4096) {
        let mask: Vec<bool> = (0..12).map(|i| bits >> i & 1 == 1).collect();
        let net = QNetwork::new(&[EMBEDDING_DIM, 8, 12], &mut rng::stream(seed, &[1]));
        let s = embed_state("CUR:add 2 boats|REM:");
        let mut r = rng::stream(seed, &[2]);
        for _ in 0..20 {
            prop_assert!(mask[select_action(&net, &s, &mask, eps, &mut r).unwrap()]);
        }
    }
}

#[test]
fn subscore_mean_is_unweighted() {
    let s = Subscores {
        content: 5.0,
        spatial: 10.0,
        visual: 8.0,
        style: 10.0,
    };
    assert_eq!(s.mean(), 8.25);
    assert_eq!(TaskCategory::ALL.len(), 9);
}
