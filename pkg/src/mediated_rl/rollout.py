"""Vectorized episode sampling and training-batch assembly.

A trajectory batch advances ``batch`` episodes in lockstep (these games have
a fixed horizon), storing time-major arrays. Per step: agents sample from
masked policies, the coalition forms (or carries over mid-window), the
mediator samples env actions for members, and the env steps. Sampling order
is fixed, so a seeded generator makes rollouts bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import AgentBatch, AgentLearner, filter_trainable_steps
from .approx import sample_categorical
from .games import GameKind, PayoffSpec, base_obs_batch, obs_dim, step_batch
from .mediation import FREE, commit_index, legal_action_mask_batch
from .mediator import MediatorBatch, MediatorLearner


@dataclass
class TrajectoryBatch:
    """Batch of episodes, time-major: leading axes are (horizon, batch, agents)."""

    base: np.ndarray        # (T+1, B, N, obs_dim); row T is the terminal obs
    status: np.ndarray      # (T, B, N) in {-1, 0, 1}
    choice: np.ndarray      # (T, B, N) agent-head action ids (commit included)
    member: np.ndarray      # (T, B, N) coalition flags
    med_action: np.ndarray  # (T, B, N) mediator env actions, -1 outside coalition
    env_action: np.ndarray  # (T, B, N) executed env actions
    reward: np.ndarray      # (T, B, N)

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    @property
    def batch(self) -> int:
        return self.reward.shape[1]

    @property
    def num_agents(self) -> int:
        return self.reward.shape[2]


def sample_batch(spec: PayoffSpec, k: int, agents: list[AgentLearner],
                 mediator: MediatorLearner | None, batch: int,
                 rng: np.random.Generator) -> TrajectoryBatch:
    """Roll out ``batch`` complete episodes under the current policies."""
    t_max, n, d = spec.horizon, spec.num_agents, obs_dim(spec)
    mediated = mediator is not None
    base = np.empty((t_max + 1, batch, n, d))
    status = np.zeros((t_max, batch, n), dtype=np.int64)
    choice = np.empty((t_max, batch, n), dtype=np.int64)
    member = np.zeros((t_max, batch, n), dtype=bool)
    med_action = np.full((t_max, batch, n), -1, dtype=np.int64)
    env_action = np.empty((t_max, batch, n), dtype=np.int64)
    reward = np.empty((t_max, batch, n))

    endow = np.ones((batch, n)) if spec.kind is GameKind.ITERATIVE_PGG else None
    coalition = np.zeros((batch, n), dtype=bool)
    commit_ids = np.asarray([commit_index(a) for a in spec.num_actions])

    for t in range(t_max):
        base[t] = base_obs_batch(spec, t, endow, batch)
        if t % k != 0:
            status[t] = np.where(coalition, 1, -1)
        for i, agent in enumerate(agents):
            obs = base[t, :, i]
            if agent.status_feature:
                obs = np.concatenate([obs, status[t, :, i, None]], axis=1)
            if mediated:
                masks = legal_action_mask_batch(status[t, :, i],
                                                agent.num_env_actions)
            else:
                masks = np.ones((batch, agent.num_actions), dtype=bool)
            probs = agent.policy(obs, masks)
            choice[t, :, i] = sample_categorical(probs, rng)
        if mediated:
            if t % k == 0:
                coalition = choice[t] == commit_ids[None, :]
            member[t] = coalition
            env_action[t] = np.where(coalition, 0, choice[t])
            rows_b, rows_i = np.nonzero(coalition)
            if rows_b.size:
                actor_in = mediator_actor_inputs(
                    mediator, base[t], coalition, rows_b, rows_i)
                probs = mediator.policy(actor_in, rows_i)
                acts = sample_categorical(probs, rng)
                med_action[t, rows_b, rows_i] = acts
                env_action[t, rows_b, rows_i] = acts
        else:
            env_action[t] = choice[t]
        reward[t], endow = step_batch(spec, t, endow, env_action[t])
    base[t_max] = base_obs_batch(spec, t_max, endow, batch)
    return TrajectoryBatch(base=base, status=status, choice=choice,
                           member=member, med_action=med_action,
                           env_action=env_action, reward=reward)


def mediator_actor_inputs(mediator: MediatorLearner, base_t: np.ndarray,
                          coalition: np.ndarray, rows_b: np.ndarray,
                          rows_i: np.ndarray) -> np.ndarray:
    """Actor input rows for the given (episode, member) pairs."""
    obs = base_t[rows_b, rows_i]
    if mediator.symmetric:
        frac = coalition.mean(axis=1)[rows_b, None]
        return np.concatenate([obs, frac], axis=1)
    n = coalition.shape[1]
    coal = coalition[rows_b].astype(np.float64)
    ids = np.zeros((rows_i.size, n))
    ids[np.arange(rows_i.size), rows_i] = 1.0
    return np.concatenate([obs, coal, ids], axis=1)


def mediator_critic_inputs(mediator: MediatorLearner, base_t: np.ndarray,
                           coalition: np.ndarray) -> np.ndarray:
    """Critic input rows: all observations plus the coalition encoding."""
    b = base_t.shape[0]
    if mediator.symmetric:
        return coalition.mean(axis=1)[:, None]
    return np.concatenate([base_t.reshape(b, -1),
                           coalition.astype(np.float64)], axis=1)


# ---------------------------------------------------------------------------
# Training-batch assembly


def window_reward_sums(reward_i: np.ndarray, k: int,
                       gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted reward sums and end steps for the window starting at each t.

    Only rows at window boundaries are meaningful; windows truncate at the
    horizon. Returns (sums (T, B), end (T,)).
    """
    t_max = reward_i.shape[0]
    sums = np.empty_like(reward_i)
    ends = np.empty(t_max, dtype=np.int64)
    for t in range(0, t_max, k):
        end = min(t + k, t_max)
        ends[t:end] = end
        coefs = gamma ** np.arange(end - t)
        sums[t] = coefs @ reward_i[t:end]
    return sums, ends


def build_agent_batch(traj: TrajectoryBatch, agent: AgentLearner,
                      k: int, gamma: float) -> AgentBatch:
    """Trainable records for one agent: status 0 or -1 steps only, with
    k-step targets substituted on commit decisions."""
    i = agent.index
    t_max, b = traj.horizon, traj.batch
    status_i = traj.status[:, :, i]
    reward_i = traj.reward[:, :, i]

    reward_sum = reward_i.copy()
    boot_t = np.broadcast_to(np.arange(1, t_max + 1)[:, None], (t_max, b)).copy()
    if agent.mediated:
        committed = (status_i == FREE) & (traj.choice[:, :, i]
                                          == commit_index(agent.num_env_actions))
        if k > 1 and committed.any():
            wsums, wends = window_reward_sums(reward_i, k, gamma)
            reward_sum = np.where(committed, wsums, reward_sum)
            boot_t = np.where(committed, wends[:, None], boot_t)
    coef = np.where(boot_t < t_max, gamma ** (boot_t - np.arange(t_max)[:, None]), 0.0)

    keep = filter_trainable_steps(status_i)
    t_idx, b_idx = np.nonzero(keep)
    critic_obs = traj.base[t_idx, b_idx, i]
    actor_obs = critic_obs
    if agent.status_feature:
        actor_obs = np.concatenate(
            [critic_obs, status_i[t_idx, b_idx, None].astype(np.float64)], axis=1)
    if agent.mediated:
        masks = legal_action_mask_batch(status_i[t_idx, b_idx],
                                        agent.num_env_actions)
    else:
        masks = np.ones((t_idx.size, agent.num_actions), dtype=bool)
    return AgentBatch(
        actor_obs=actor_obs,
        critic_obs=critic_obs,
        actions=traj.choice[t_idx, b_idx, i],
        masks=masks,
        reward_sum=reward_sum[t_idx, b_idx],
        bootstrap_obs=traj.base[boot_t[t_idx, b_idx], b_idx, i],
        bootstrap_coef=coef[t_idx, b_idx],
    )


def build_mediator_batch(traj: TrajectoryBatch,
                         mediator: MediatorLearner) -> MediatorBatch:
    """Flatten a trajectory batch into the mediator's training layout."""
    t_max, b, n = traj.horizon, traj.batch, traj.num_agents
    critic_cur = np.concatenate(
        [mediator_critic_inputs(mediator, traj.base[t], traj.member[t])
         for t in range(t_max)], axis=0)
    next_member = np.concatenate([traj.member[1:], traj.member[-1:]], axis=0)
    critic_next = np.concatenate(
        [mediator_critic_inputs(mediator, traj.base[t + 1], next_member[t])
         for t in range(t_max)], axis=0)
    terminal = np.zeros((t_max, b), dtype=bool)
    terminal[t_max - 1] = True

    # np.nonzero on (T, B, N) lists samples t-major, matching the per-t loop.
    t_idx, b_idx, i_idx = np.nonzero(traj.member)
    actor_in = np.empty((t_idx.size, mediator.actor.sizes[0]))
    pos = 0
    for t in range(t_max):
        rows_b, rows_i = np.nonzero(traj.member[t])
        if rows_b.size:
            actor_in[pos:pos + rows_b.size] = mediator_actor_inputs(
                mediator, traj.base[t], traj.member[t], rows_b, rows_i)
            pos += rows_b.size
    actor_agent = i_idx
    actor_step = t_idx * b + b_idx
    return MediatorBatch(
        critic_cur=critic_cur,
        critic_next=critic_next,
        terminal=terminal.reshape(-1),
        rewards=traj.reward.reshape(-1, n),
        member=traj.member.reshape(-1, n),
        actor_in=actor_in,
        actor_actions=traj.med_action[t_idx, b_idx, i_idx],
        actor_masks=mediator.action_masks(actor_agent),
        actor_agent=actor_agent,
        actor_step=actor_step,
        horizon=t_max,
        batch=b,
    )
