"""Advantage actor-critic training over combat episodes.

All allied agents share one actor and one critic. Episodes are collected
under an epsilon-soft behavior policy (greedy with probability 1 - eps,
otherwise sampled proportionally to the actor's probabilities), and one
gradient step per episode is taken from the whole aggregated trajectory
using Monte Carlo discounted returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .checkpoint import (FORMAT_VERSION, EncodingSchema, PolicyCheckpoint,
                         ProvenanceEntry)
from .engine import N_ACTIONS, Scenario
from .errors import ContractError, NumericError, TransferIncompatibilityError
from .influence import (LAYOUT_VERSION, assemble_state,
                        build_global_influence_map, encoded_state_length)
from .network import (ACTOR_HEAD, CRITIC_HEAD, backward, forward_cached,
                      init_params, sgd_update)

PROB_FLOOR = 1e-12
DEFAULT_HIDDEN_DIMS = (256, 128)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear exploration decay from epsilon_initial down to epsilon_min.

    The rate is fixed so the floor is reached after decay_steps
    environmental steps, counted across episode boundaries.
    """

    epsilon_initial: float = 1.0
    epsilon_min: float = 1e-4
    decay_steps: int = 30_000

    def __post_init__(self):
        if not 0.0 < self.epsilon_min <= self.epsilon_initial <= 1.0:
            raise ContractError(
                f"need 0 < epsilon_min <= epsilon_initial <= 1, got "
                f"{self.epsilon_min}, {self.epsilon_initial}")
        if self.decay_steps < 1:
            raise ContractError(f"decay_steps must be >= 1, got {self.decay_steps}")


def epsilon_at(t: int, schedule: EpsilonSchedule) -> float:
    """Exploration rate after t environmental steps; non-increasing in t."""
    if t < 0:
        raise ContractError(f"step index must be >= 0, got {t}")
    value = schedule.epsilon_initial * (1.0 - t / schedule.decay_steps)
    return max(value, schedule.epsilon_min)


def select_action(action_probs, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-soft choice over the action set.

    With probability 1 - epsilon takes the argmax (ties resolve to the
    lowest action index); otherwise samples an action proportionally to
    its probability.
    """
    p = np.asarray(action_probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ContractError(f"action_probs must be a 1-D vector, got shape {p.shape}")
    if not np.isfinite(p).all() or (p < 0).any():
        raise NumericError(f"degenerate action probabilities: {p}")
    total = float(p.sum())
    if abs(total - 1.0) > 1e-6:
        raise NumericError(f"action probabilities sum to {total}, expected 1")
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() >= epsilon:
        return int(np.argmax(p))
    cumulative = np.cumsum(p)
    draw = rng.random() * cumulative[-1]
    return int(min(np.searchsorted(cumulative, draw, side="right"), p.size - 1))


def discounted_returns(step_rewards, discount: float = 0.9) -> np.ndarray:
    """G_t = r_t + discount * G_{t+1}, computed by a reverse scan."""
    rewards = np.asarray(step_rewards, dtype=np.float64)
    returns = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.size - 1, -1, -1):
        acc = rewards[t] + discount * acc
        returns[t] = acc
    return returns


@dataclass
class AgentRollout:
    """One agent's collected samples for a single episode."""

    unit_id: int
    states: np.ndarray        # (m, state_length)
    actions: np.ndarray       # (m,)
    step_indices: np.ndarray  # (m,) environment step each sample came from
    behavior_probs: np.ndarray  # (m, n_actions) actor output at selection time
    values: np.ndarray        # (m,) critic estimates


@dataclass
class Trajectory:
    """Everything one episode contributes to a training update."""

    agents: list[AgentRollout]
    step_rewards: np.ndarray  # (T,) shared team reward per step
    episode_reward: float
    win: bool

    @property
    def sample_count(self) -> int:
        return sum(a.actions.size for a in self.agents)


def _stack_trajectory(traj: Trajectory, discount: float):
    if not traj.agents or traj.sample_count == 0:
        raise ContractError("trajectory has no samples")
    states = np.vstack([a.states for a in traj.agents])
    actions = np.concatenate([a.actions for a in traj.agents])
    step_returns = discounted_returns(traj.step_rewards, discount)
    returns = np.concatenate([step_returns[a.step_indices] for a in traj.agents])
    return states, actions, returns


def a2c_losses(traj: Trajectory, actor, critic, discount: float = 0.9,
               ) -> tuple[float, float]:
    """Actor and critic losses for one trajectory under the given params.

    Advantage is G_t - V(s_t) with the critic treated as a constant in the
    actor loss; both losses are averaged over all (agent, step) samples.
    """
    actor_loss, critic_loss, _, _, _ = a2c_gradients(traj, actor, critic, discount)
    return actor_loss, critic_loss


def a2c_gradients(traj: Trajectory, actor, critic, discount: float = 0.9):
    """Losses plus parameter gradients for one episode's update.

    Returns (actor_loss, critic_loss, actor_grads, critic_grads, values)
    where values are the critic's estimates in trajectory sample order.
    """
    states, actions, returns = _stack_trajectory(traj, discount)
    m = states.shape[0]

    probs, actor_acts = forward_cached(actor, states)
    values, critic_acts = forward_cached(critic, states)
    advantages = returns - values

    taken = probs[np.arange(m), actions]
    taken_floored = np.maximum(taken, PROB_FLOOR)
    actor_loss = float(-(np.log(taken_floored) * advantages).mean())
    critic_loss = float(((returns - values) ** 2).mean())

    # d actor_loss / d probs: nonzero only at the taken action.
    dprobs = np.zeros_like(probs)
    live = taken >= PROB_FLOOR  # inside the floor the log is constant
    dprobs[np.arange(m), actions] = np.where(
        live, -advantages / (taken_floored * m), 0.0)
    actor_grads = backward(actor, actor_acts, dprobs)

    dvalues = 2.0 * (values - returns) / m
    critic_grads = backward(critic, critic_acts, dvalues)
    return actor_loss, critic_loss, actor_grads, critic_grads, values


@dataclass(frozen=True)
class RunConfig:
    """One training run's scenario, encoding and optimization settings."""

    scenario: Scenario
    resolution: int = 37
    episodes: int = 2000
    seeds: int = 31
    schedule: EpsilonSchedule = field(default_factory=EpsilonSchedule)
    lr: float = 1e-4
    discount: float = 0.9
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ContractError(f"discount must be in (0, 1), got {self.discount}")
        if self.episodes < 1:
            raise ContractError(f"episodes must be >= 1, got {self.episodes}")
        if self.seeds < 1:
            raise ContractError(f"seeds must be >= 1, got {self.seeds}")
        encoded_state_length(self.resolution)  # validates the resolution

    @property
    def encoding_schema(self) -> EncodingSchema:
        return EncodingSchema(
            resolution=self.resolution,
            state_length=encoded_state_length(self.resolution),
            layout_version=LAYOUT_VERSION,
        )


@dataclass
class RunResult:
    """Artifacts of one seeded training run."""

    checkpoint: PolicyCheckpoint
    rewards: np.ndarray   # (episodes,) episode rewards
    wins: np.ndarray      # (episodes,) bool
    epsilons: np.ndarray  # (episodes,) epsilon at each episode's first step
    rng_seed: int


def _initial_networks(config: RunConfig, initial: PolicyCheckpoint | None,
                      rng_seed: int):
    schema = config.encoding_schema
    if initial is not None:
        if initial.schema != schema:
            raise TransferIncompatibilityError(
                f"checkpoint schema {initial.schema} does not match the target "
                f"run schema {schema}")
        return initial.actor.copy(), initial.critic.copy(), list(initial.provenance)
    rng = np.random.default_rng(np.random.SeedSequence((rng_seed, 0)))
    d = schema.state_length
    actor = init_params((d, *config.hidden_dims, N_ACTIONS), ACTOR_HEAD, rng)
    critic = init_params((d, *config.hidden_dims, 1), CRITIC_HEAD, rng)
    return actor, critic, []


def collect_episode(config: RunConfig, actor, episode_seed: int,
                    global_step: int) -> tuple[Trajectory, int, float]:
    """Roll out one episode under the epsilon-soft policy.

    Returns the trajectory (critic values not yet filled), the updated
    environmental step counter, and the epsilon in force at the first step.
    """
    scenario = config.scenario
    episode, observations = engine.reset(scenario, episode_seed)
    d = config.encoding_schema.state_length

    per_agent_states: dict[int, list[np.ndarray]] = {}
    per_agent_actions: dict[int, list[int]] = {}
    per_agent_steps: dict[int, list[int]] = {}
    per_agent_probs: dict[int, list[np.ndarray]] = {}
    prev_grids: dict[int, object] = {}
    step_rewards: list[float] = []
    first_epsilon = epsilon_at(global_step, config.schedule)

    while not episode.terminal:
        global_grid = build_global_influence_map(
            episode.units, scenario.map_width, scenario.map_height,
            scenario.sight_range)
        batch = np.empty((len(observations), d), dtype=np.float64)
        for i, obs in enumerate(observations):
            encoded, current_grid = assemble_state(
                obs, global_grid, prev_grids.get(obs.observer_id),
                obs.last_action, config.resolution,
                scenario.map_width, scenario.map_height)
            batch[i] = encoded.vector
            prev_grids[obs.observer_id] = current_grid
        probs, _ = forward_cached(actor, batch)
        eps = epsilon_at(global_step, config.schedule)
        actions = []
        for i, obs in enumerate(observations):
            a = select_action(probs[i], eps, episode.rng)
            actions.append(a)
            uid = obs.observer_id
            per_agent_states.setdefault(uid, []).append(batch[i])
            per_agent_actions.setdefault(uid, []).append(a)
            per_agent_steps.setdefault(uid, []).append(episode.step_count)
            per_agent_probs.setdefault(uid, []).append(probs[i])
        outcome = engine.step(episode, actions)
        step_rewards.append(outcome.step_reward)
        observations = outcome.observations
        global_step += 1

    agents = []
    for uid in sorted(per_agent_states):
        m = len(per_agent_actions[uid])
        agents.append(AgentRollout(
            unit_id=uid,
            states=np.vstack(per_agent_states[uid]),
            actions=np.array(per_agent_actions[uid], dtype=np.int64),
            step_indices=np.array(per_agent_steps[uid], dtype=np.int64),
            behavior_probs=np.vstack(per_agent_probs[uid]),
            values=np.full(m, np.nan),
        ))
    episode_reward = engine.compute_episode_reward(
        episode.damage_log, episode.win, scenario.r_max)
    traj = Trajectory(
        agents=agents,
        step_rewards=np.array(step_rewards, dtype=np.float64),
        episode_reward=episode_reward,
        win=episode.win,
    )
    return traj, global_step, first_epsilon


def train_run(config: RunConfig, initial_checkpoint: PolicyCheckpoint | None = None,
              rng_seed: int = 0) -> RunResult:
    """Train shared actor/critic networks for config.episodes episodes.

    Each episode produces exactly one gradient update from its aggregated
    trajectory. Identical (config, initial checkpoint, rng_seed) inputs
    reproduce the identical reward series and final parameters.
    """
    actor, critic, provenance = _initial_networks(config, initial_checkpoint, rng_seed)
    episode_seed_rng = np.random.default_rng(np.random.SeedSequence((rng_seed, 1)))

    rewards = np.zeros(config.episodes, dtype=np.float64)
    wins = np.zeros(config.episodes, dtype=bool)
    epsilons = np.zeros(config.episodes, dtype=np.float64)
    global_step = 0
    for index in range(config.episodes):
        episode_seed = int(episode_seed_rng.integers(0, 2**63 - 1))
        traj, global_step, first_eps = collect_episode(
            config, actor, episode_seed, global_step)
        _, _, actor_grads, critic_grads, values = a2c_gradients(
            traj, actor, critic, config.discount)
        offset = 0
        for agent in traj.agents:
            agent.values = values[offset:offset + agent.actions.size]
            offset += agent.actions.size
        actor = sgd_update(actor, actor_grads, config.lr)
        critic = sgd_update(critic, critic_grads, config.lr)
        rewards[index] = traj.episode_reward
        wins[index] = traj.win
        epsilons[index] = first_eps

    provenance.append(ProvenanceEntry(
        scenario=config.scenario.name,
        episodes=config.episodes,
        rng_seed=rng_seed,
    ))
    ckpt = PolicyCheckpoint(
        format_version=FORMAT_VERSION,
        schema=config.encoding_schema,
        actor=actor,
        critic=critic,
        provenance=tuple(provenance),
    )
    return RunResult(checkpoint=ckpt, rewards=rewards, wins=wins,
                     epsilons=epsilons, rng_seed=rng_seed)
