//! DQN learner: Q-network, Adam, replay, target network and masked
//! epsilon-greedy action selection.

pub mod adam;
pub mod checkpoint;
pub mod network;
pub mod replay;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use network::QNetwork;
pub use replay::{ReplayBuffer, Transition};

use crate::embedder::{StateEmbedding, EMBEDDING_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_starts: usize,
    pub target_sync_interval: u64,
    pub exploration_fraction: f64,
    pub epsilon_initial: f64,
    pub epsilon_final: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![64, 64],
            gamma: 0.99,
            lr: 5e-4,
            batch_size: 16,
            buffer_capacity: 500,
            learning_starts: 50,
            target_sync_interval: 100,
            exploration_fraction: 0.5,
            epsilon_initial: 1.0,
            epsilon_final: 0.1,
        }
    }
}

/// Linear decay from `initial` to `final_` over `fraction` of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub final_: f64,
    pub fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            initial: 1.0,
            final_: 0.1,
            fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: u64, horizon: u64) -> Result<f64> {
        if horizon == 0 {
            return Err(Error::Domain("epsilon horizon must be positive".into()));
        }
        let span = self.fraction * horizon as f64;
        let progress = if span > 0.0 { step as f64 / span } else { 1.0 };
        if progress >= 1.0 {
            return Ok(self.final_);
        }
        Ok(self.initial + (self.final_ - self.initial) * progress)
    }
}

/// Default schedule: 1.0 to 0.1 over half the horizon.
pub fn epsilon_at(step: u64, horizon: u64) -> Result<f64> {
    EpsilonSchedule::default().at(step, horizon)
}

/// Greedy choice over legal actions; ties go to the lowest index.
pub fn masked_argmax(q: &[f64], mask: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &legal)) in q.iter().zip(mask).enumerate() {
        if legal && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::EmptyMask)
}

/// Epsilon-greedy over legal actions. Always consumes one uniform draw, plus
/// one index draw when exploring.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: &StateEmbedding,
    mask: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if legal.is_empty() {
        return Err(Error::EmptyMask);
    }
    let u: f64 = rng.random();
    if u < epsilon {
        return Ok(legal[rng.random_range(0..legal.len())]);
    }
    masked_argmax(&net.forward(state.values()), mask)
}

/// Bellman targets, bootstrapping from legal successor actions only.
pub fn td_targets(batch: &[&Transition], target: &QNetwork, gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return t.reward;
            }
            let q = target.forward(t.next.values());
            let best = if t.next_mask.iter().any(|&m| m) {
                q.iter()
                    .zip(&t.next_mask)
                    .filter(|(_, &m)| m)
                    .map(|(v, _)| *v)
                    .fold(f64::NEG_INFINITY, f64::max)
            } else {
                q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            t.reward + gamma * best
        })
        .collect()
}

/// Mean squared error between `Q(s, a)` and `targets`, with its gradient.
pub fn loss_and_gradient(
    net: &QNetwork,
    batch: &[&Transition],
    targets: &[f64],
) -> (f64, Vec<f64>) {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    let mut d_out = vec![0.0; net.output_dim()];
    for (t, &y) in batch.iter().zip(targets) {
        let input = t.state.values();
        let trace = net.trace(input);
        let err = trace.output()[t.action] - y;
        loss += err * err;
        d_out.iter_mut().for_each(|d| *d = 0.0);
        d_out[t.action] = 2.0 * err / n;
        net.backward(input, &trace, &d_out, &mut grad);
    }
    (loss / n, grad)
}

/// One Adam step on the TD loss; returns the loss before the step.
pub fn train_batch(
    net: &mut QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    adam: &mut AdamState,
    lr: f64,
    gamma: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let targets = td_targets(batch, target, gamma);
    let (loss, grad) = loss_and_gradient(net, batch, &targets);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "loss {loss} at adam step {}",
            adam.t + 1
        )));
    }
    adam.step(net.params_mut(), &grad, lr);
    if !net.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters after adam step {}",
            adam.t
        )));
    }
    Ok(loss)
}

/// True when the target network should be refreshed after `step` completed steps.
pub fn maybe_sync(step: u64, interval: u64) -> bool {
    interval > 0 && step > 0 && step.is_multiple_of(interval)
}

/// Online and target networks with their optimiser and replay memory.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub online: QNetwork,
    pub target: QNetwork,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(config: DqnConfig, actions: usize, rng: &mut R) -> Self {
        let mut shape = vec![EMBEDDING_DIM];
        shape.extend(&config.hidden);
        shape.push(actions);
        let online = QNetwork::new(&shape, rng);
        Self::from_network(config, online)
    }

    pub fn from_network(config: DqnConfig, online: QNetwork) -> Self {
        let target = online.clone();
        let adam = AdamState::new(online.param_count());
        let buffer = ReplayBuffer::new(config.buffer_capacity, config.learning_starts);
        DqnAgent {
            config,
            online,
            target,
            adam,
            buffer,
        }
    }

    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.online);
    }

    /// Samples a batch and trains once; `None` until learning starts.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if !self.buffer.can_sample() {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch_size, rng)?;
        let loss = train_batch(
            &mut self.online,
            &self.target,
            &batch,
            &mut self.adam,
            self.config.lr,
            self.config.gamma,
        )?;
        Ok(Some(loss))
    }
}
