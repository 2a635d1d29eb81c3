"""Markov-game interface and the concrete social-dilemma environments.

Five environments: one-shot prisoner's dilemma, prisoner's dilemma with a
sacrifice action, a two-step asymmetric prisoner's dilemma, the one-shot
public goods game, and a 10-turn compounding public goods game. Matrix games
are pure table lookups; the public goods games are closed-form formulas.

Action index conventions: 0 = defect, 1 = cooperate/contribute, and for the
sacrifice variant 2 = sacrifice. Joint actions are index tuples in fixed
agent order; payoff tables are indexed ``table[a_0, a_1, ..., agent]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError

DEFECT = 0
COOPERATE = 1
SACRIFICE = 2

ITER_PGG_HORIZON = 10
ITER_PGG_CONTRIB_SHARE = 0.5


class GameKind(Enum):
    MATRIX = "matrix"
    ONE_SHOT_PGG = "pgg"
    ITERATIVE_PGG = "pgg_iter"


@dataclass(frozen=True)
class PayoffSpec:
    """Immutable description of a game.

    ``payoff_tables`` is one array per state (matrix games only), each of
    shape ``num_actions + (num_agents,)``. PGG variants instead carry the
    multiplier ``n`` with 1 < n < N.
    """

    kind: GameKind
    num_agents: int
    num_actions: tuple[int, ...]
    horizon: int = 1
    payoff_tables: tuple[np.ndarray, ...] | None = None
    multiplier: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.num_agents < 1:
            raise ConfigError("num_agents must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if len(self.num_actions) != self.num_agents:
            raise ConfigError("num_actions must list one action count per agent")
        if self.kind is GameKind.MATRIX:
            if self.payoff_tables is None or len(self.payoff_tables) != self.horizon:
                raise ConfigError("matrix games need one payoff table per state")
            want = tuple(self.num_actions) + (self.num_agents,)
            for table in self.payoff_tables:
                if table.shape != want:
                    raise ConfigError(
                        f"payoff table shape {table.shape} != expected {want}"
                    )
        else:
            if self.multiplier is None:
                raise ConfigError("PGG games need a multiplier")
            if not 1.0 < self.multiplier < self.num_agents:
                raise ConfigError(
                    f"PGG multiplier must satisfy 1 < n < N, got n={self.multiplier}, "
                    f"N={self.num_agents}"
                )
            if any(a != 2 for a in self.num_actions):
                raise ConfigError("PGG agents have exactly two actions")

    @property
    def max_actions(self) -> int:
        return max(self.num_actions)


@dataclass(frozen=True)
class GameState:
    """Per-episode state, passed by value. Terminal iff turn == spec.horizon."""

    turn: int
    endowments: np.ndarray | None = None


def is_terminal(spec: PayoffSpec, state: GameState) -> bool:
    return state.turn >= spec.horizon


# ---------------------------------------------------------------------------
# Environment constructors


def _matrix_spec(name: str, tables: list[list[list[tuple[float, ...]]]],
                 num_actions: tuple[int, ...]) -> PayoffSpec:
    arrays = tuple(np.asarray(t, dtype=np.float64) for t in tables)
    return PayoffSpec(
        kind=GameKind.MATRIX,
        num_agents=len(num_actions),
        num_actions=num_actions,
        horizon=len(arrays),
        payoff_tables=arrays,
        name=name,
    )


def prisoners_dilemma() -> PayoffSpec:
    """One-shot PD: mutual defection nets 0, mutual cooperation 2, temptation 7."""
    table = [
        [(0.0, 0.0), (7.0, -5.0)],  # agent 0 defects
        [(-5.0, 7.0), (2.0, 2.0)],  # agent 0 cooperates
    ]
    return _matrix_spec("pd", [table], (2, 2))


def pd_with_sacrifice() -> PayoffSpec:
    """Asymmetric PD where agent 1 can sacrifice its payoff for welfare 5."""
    table = [
        [(1.0, 1.0), (3.0, 0.0), (5.0, 0.0)],
        [(0.0, 3.0), (2.0, 2.0), (5.0, 0.0)],
    ]
    return _matrix_spec("pds", [table], (2, 3))


def two_step_pd() -> PayoffSpec:
    """Two-step PD; in the first state mutual cooperation pays (-1, 4)."""
    state0 = [
        [(0.0, 0.0), (7.0, -5.0)],
        [(-5.0, 7.0), (-1.0, 4.0)],
    ]
    state1 = [
        [(0.0, 0.0), (7.0, -5.0)],
        [(-5.0, 7.0), (2.0, 2.0)],
    ]
    return _matrix_spec("pd2", [state0, state1], (2, 2))


def one_shot_pgg(num_agents: int, multiplier: float) -> PayoffSpec:
    return PayoffSpec(
        kind=GameKind.ONE_SHOT_PGG,
        num_agents=num_agents,
        num_actions=(2,) * num_agents,
        horizon=1,
        multiplier=multiplier,
        name="pgg",
    )


def iterative_pgg(num_agents: int, multiplier: float,
                  horizon: int = ITER_PGG_HORIZON) -> PayoffSpec:
    return PayoffSpec(
        kind=GameKind.ITERATIVE_PGG,
        num_agents=num_agents,
        num_actions=(2,) * num_agents,
        horizon=horizon,
        multiplier=multiplier,
        name="pgg_iter",
    )


_BUILTINS = {
    "pd": prisoners_dilemma,
    "pds": pd_with_sacrifice,
    "pd2": two_step_pd,
}


def make_spec(env: str, num_agents: int = 3, multiplier: float = 2.0) -> PayoffSpec:
    """Build a spec from an environment id: pd | pds | pd2 | pgg | pgg-iter."""
    env = env.replace("_", "-")
    if env in _BUILTINS:
        return _BUILTINS[env]()
    if env == "pgg":
        return one_shot_pgg(num_agents, multiplier)
    if env == "pgg-iter":
        return iterative_pgg(num_agents, multiplier)
    raise ConfigError(f"unknown environment {env!r}")


# ---------------------------------------------------------------------------
# Stepping


def reset(spec: PayoffSpec, seed: int | None = None) -> GameState:
    """Fresh episode state. These games have deterministic starts; the seed
    argument exists for interface symmetry only."""
    del seed
    if spec.kind is GameKind.ITERATIVE_PGG:
        return GameState(turn=0, endowments=np.ones(spec.num_agents))
    return GameState(turn=0)


def pgg_reward(contributions: np.ndarray, num_agents: int,
               multiplier: float) -> np.ndarray:
    """One-shot PGG reward: r_i = (n/N) * sum_j c_j - c_i, c_i in {0, 1}."""
    c = np.asarray(contributions, dtype=np.float64)
    if c.shape != (num_agents,) or not np.isin(c, (0.0, 1.0)).all():
        raise ContractError("contributions must be a binary vector of length N")
    return (multiplier / num_agents) * c.sum() - c


def pgg_iter_step(spec: PayoffSpec, state: GameState,
                  contributions: np.ndarray) -> tuple[GameState, np.ndarray]:
    """One turn of the compounding PGG.

    Each contributor pays half its endowment into the pool; the pool is
    multiplied by n and split equally among all N agents. The per-step reward
    is the endowment delta, so undiscounted returns telescope to final minus
    initial endowment.
    """
    if state.turn >= spec.horizon:
        raise ContractError("step on a terminal state")
    c = np.asarray(contributions, dtype=np.float64)
    e = state.endowments
    paid = ITER_PGG_CONTRIB_SHARE * e * c
    share = spec.multiplier * paid.sum() / spec.num_agents
    new_e = e - paid + share
    rewards = new_e - e
    return GameState(turn=state.turn + 1, endowments=new_e), rewards


def step(spec: PayoffSpec, state: GameState,
         joint_action: np.ndarray) -> tuple[GameState, np.ndarray]:
    """Advance one turn; returns (next state, per-agent rewards)."""
    if state.turn >= spec.horizon:
        raise ContractError("step on a terminal state")
    action = np.asarray(joint_action, dtype=np.int64)
    if action.shape != (spec.num_agents,):
        raise ContractError("joint action must supply one action per agent")
    if np.any(action < 0) or np.any(action >= np.asarray(spec.num_actions)):
        raise ContractError(f"action out of range: {action.tolist()}")
    if spec.kind is GameKind.MATRIX:
        rewards = spec.payoff_tables[state.turn][tuple(action)].copy()
        return GameState(turn=state.turn + 1), rewards
    if spec.kind is GameKind.ONE_SHOT_PGG:
        rewards = pgg_reward(action, spec.num_agents, spec.multiplier)
        return GameState(turn=state.turn + 1), rewards
    return pgg_iter_step(spec, state, action)


def step_batch(spec: PayoffSpec, turn: int, endowments: np.ndarray | None,
               actions: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """Vectorized ``step`` over a batch of episodes advancing in lockstep.

    ``actions`` has shape (B, N); returns (rewards (B, N), new endowments or
    None). Matches the scalar ``step`` exactly (property-tested).
    """
    if turn >= spec.horizon:
        raise ContractError("step on a terminal state")
    if spec.kind is GameKind.MATRIX:
        table = spec.payoff_tables[turn]
        rewards = table[tuple(actions[:, i] for i in range(spec.num_agents))]
        return rewards, None
    c = actions.astype(np.float64)
    if spec.kind is GameKind.ONE_SHOT_PGG:
        rewards = (spec.multiplier / spec.num_agents) * c.sum(
            axis=1, keepdims=True) - c
        return rewards, None
    paid = ITER_PGG_CONTRIB_SHARE * endowments * c
    share = spec.multiplier * paid.sum(axis=1, keepdims=True) / spec.num_agents
    new_e = endowments - paid + share
    return new_e - endowments, new_e


# ---------------------------------------------------------------------------
# Observations


def obs_dim(spec: PayoffSpec) -> int:
    """Length of the per-agent base observation (what critics see)."""
    if spec.kind is GameKind.ITERATIVE_PGG:
        return 2  # (endowment, normalized turn)
    return 1  # constant dummy, or normalized turn for multi-step matrix games


def base_obs_batch(spec: PayoffSpec, turn: int,
                   endowments: np.ndarray | None, batch: int) -> np.ndarray:
    """Per-agent base observations for a batch, shape (B, N, obs_dim)."""
    n = spec.num_agents
    if spec.kind is GameKind.ITERATIVE_PGG:
        obs = np.empty((batch, n, 2))
        obs[:, :, 0] = endowments
        obs[:, :, 1] = turn / spec.horizon
        return obs
    value = turn / spec.horizon if spec.horizon > 1 else 1.0
    return np.full((batch, n, 1), value)
