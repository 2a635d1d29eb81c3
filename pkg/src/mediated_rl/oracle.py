"""Exact game-theoretic reference computations.

Expected payoffs of mixed strategy profiles under the mediation protocol,
best-response gaps, the analytically optimal constrained mediator for the
public goods game, welfare bounds used to normalize reported rewards, and a
Monte-Carlo sampler to cross-check the exact expectations.

Matrix games are evaluated by full enumeration over choices, coalitions, and
mediator actions; the public goods game exploits agent symmetry (coalition
sizes instead of subsets) to stay polynomial in N.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import games
from .errors import ConfigError, ContractError, UnsupportedGameError
from .games import GameKind, PayoffSpec

DIST_TOL = 5e-12


def _check_dist(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < -DIST_TOL) or abs(p.sum() - 1.0) > DIST_TOL:
        raise ContractError(f"not a probability vector: {p}")
    return p


@dataclass
class MixedProfile:
    """Stationary mixed strategies for agents and (optionally) the mediator.

    ``agent_policies[state][agent]`` is a distribution over that agent's env
    actions, plus a trailing commit entry when ``mediated``. The mediator's
    per-coalition policy is either explicit per coalition
    (``mediator_by_coalition[state][bits][agent]``, bits a 0/1 tuple) or, for
    the symmetric PGG, a contribute probability per coalition size
    (``mediator_by_size[s]``).
    """

    agent_policies: list[list[np.ndarray]]
    mediated: bool = False
    mediator_by_coalition: list[dict[tuple[int, ...], dict[int, np.ndarray]]] | None = None
    mediator_by_size: np.ndarray | None = None

    def __post_init__(self):
        self.agent_policies = [[_check_dist(p) for p in state]
                               for state in self.agent_policies]
        if self.mediator_by_size is not None:
            self.mediator_by_size = np.asarray(self.mediator_by_size, dtype=np.float64)

    def mediator_dist(self, state: int, coalition: tuple[int, ...],
                      agent: int, num_env_actions: int) -> np.ndarray:
        """The mediator's action distribution for one coalition member."""
        if self.mediator_by_size is not None:
            p = float(self.mediator_by_size[sum(coalition)])
            return np.array([1.0 - p, p])
        table = self.mediator_by_coalition[state]
        dist = table[coalition][agent]
        if dist.shape[0] != num_env_actions:
            raise ContractError("mediator distribution has wrong arity")
        return dist


def uniform_profile(spec: PayoffSpec, mediated: bool) -> MixedProfile:
    """Uniform play everywhere; handy as a test fixture and CLI default."""
    policies = [[np.full(a + mediated, 1.0 / (a + mediated))
                 for a in spec.num_actions] for _ in range(spec.horizon)]
    if not mediated:
        return MixedProfile(agent_policies=policies)
    if spec.kind is GameKind.ONE_SHOT_PGG:
        return MixedProfile(agent_policies=policies, mediated=True,
                            mediator_by_size=np.full(spec.num_agents + 1, 0.5))
    by_coal = []
    for _ in range(spec.horizon):
        table = {}
        for bits in itertools.product((0, 1), repeat=spec.num_agents):
            table[bits] = {i: np.full(spec.num_actions[i], 1.0 / spec.num_actions[i])
                           for i in range(spec.num_agents) if bits[i]}
        by_coal.append(table)
    return MixedProfile(agent_policies=policies, mediated=True,
                        mediator_by_coalition=by_coal)


# ---------------------------------------------------------------------------
# Expected payoffs


def expected_payoffs(spec: PayoffSpec, profile: MixedProfile, k: int = 1,
                     gamma: float = 1.0) -> np.ndarray:
    """Exact per-agent expected return under the profile.

    Covers matrix games of any (small) horizon and the one-shot PGG; general
    policies in the iterative PGG have no closed form here.
    """
    if spec.kind is GameKind.ITERATIVE_PGG:
        raise UnsupportedGameError(
            "exact expectations for the iterative PGG are not supported")
    if spec.kind is GameKind.ONE_SHOT_PGG:
        return _pgg_expected(spec, profile)
    return _matrix_expected(spec, profile, k, gamma)


def _env_part(policy: np.ndarray, num_env_actions: int) -> np.ndarray:
    """Policy renormalized over env actions (commit masked out)."""
    env = policy[:num_env_actions]
    mass = env.sum()
    if mass <= 0.0:
        return np.full(num_env_actions, 1.0 / num_env_actions)
    return env / mass


def _expected_table(table: np.ndarray, dists: list[np.ndarray]) -> np.ndarray:
    out = table
    for d in dists:
        out = np.tensordot(d, out, axes=(0, 0))
    return out


def _matrix_expected(spec: PayoffSpec, profile: MixedProfile, k: int,
                     gamma: float) -> np.ndarray:
    n = spec.num_agents

    def recurse(t: int, coalition: tuple[int, ...]) -> np.ndarray:
        if t == spec.horizon:
            return np.zeros(n)
        boundary = t % k == 0
        choice_dists = []
        for i in range(n):
            pol = profile.agent_policies[t][i]
            if not profile.mediated or boundary:
                choice_dists.append(pol)
            elif coalition[i]:
                forced = np.zeros(spec.num_actions[i] + 1)
                forced[-1] = 1.0
                choice_dists.append(forced)
            else:
                locked = np.zeros(spec.num_actions[i] + 1)
                locked[:-1] = _env_part(pol, spec.num_actions[i])
                choice_dists.append(locked)
        total = np.zeros(n)
        for joint in itertools.product(*(range(len(d)) for d in choice_dists)):
            prob = float(np.prod([choice_dists[i][joint[i]] for i in range(n)]))
            if prob == 0.0:
                continue
            if profile.mediated:
                committed = tuple(int(joint[i] == spec.num_actions[i])
                                  for i in range(n))
                new_coal = committed if boundary else coalition
            else:
                new_coal = (0,) * n
            env_dists = []
            for i in range(n):
                if profile.mediated and new_coal[i]:
                    env_dists.append(profile.mediator_dist(
                        t, new_coal, i, spec.num_actions[i]))
                else:
                    point = np.zeros(spec.num_actions[i])
                    point[joint[i]] = 1.0
                    env_dists.append(point)
            rewards = _expected_table(spec.payoff_tables[t], env_dists)
            total += prob * (rewards + gamma * recurse(t + 1, new_coal))
        return total

    return recurse(0, (0,) * n)


def _poisson_binomial(probs: np.ndarray) -> np.ndarray:
    """Distribution of the number of successes among independent Bernoullis."""
    dist = np.array([1.0])
    for p in probs:
        dist = np.convolve(dist, [1.0 - p, p])
    return dist


def _pgg_expected(spec: PayoffSpec, profile: MixedProfile) -> np.ndarray:
    n_agents, mult = spec.num_agents, spec.multiplier
    pols = profile.agent_policies[0]
    direct = np.array([pol[games.COOPERATE] for pol in pols])
    if not profile.mediated:
        contrib = direct
    else:
        commit = np.array([pol[-1] for pol in pols])
        p_size = profile.mediator_by_size
        if p_size is None:
            raise ContractError("PGG profiles use mediator_by_size")
        contrib = np.empty(n_agents)
        for j in range(n_agents):
            others = _poisson_binomial(np.delete(commit, j))
            contrib[j] = direct[j] + commit[j] * float(
                others @ p_size[1:n_agents + 1])
    return (mult / n_agents) * contrib.sum() - contrib


# ---------------------------------------------------------------------------
# Best response


def _pure_plans(spec: PayoffSpec, profile: MixedProfile, agent: int,
                k: int) -> list[list[np.ndarray]]:
    """All pure strategies of one agent as per-state point distributions.

    A plan fixes the choice at every (state, status) the agent can face:
    at window boundaries any head action, mid-window env actions only
    (committed agents are forced, so their mid-window entry is irrelevant
    and the original distribution is kept).
    """
    arity = [len(profile.agent_policies[t][agent]) for t in range(spec.horizon)]
    options: list[list[np.ndarray | None]] = []
    for t in range(spec.horizon):
        if not profile.mediated or t % k == 0:
            choices = []
            for a in range(arity[t]):
                point = np.zeros(arity[t])
                point[a] = 1.0
                choices.append(point)
        else:
            choices = []
            for a in range(spec.num_actions[agent]):
                point = np.zeros(arity[t])
                point[a] = 1.0
                choices.append(point)
        options.append(choices)
    plans = []
    for combo in itertools.product(*options):
        plans.append(list(combo))
    return plans


def best_response_gap(spec: PayoffSpec, profile: MixedProfile, agent: int,
                      k: int = 1, gamma: float = 1.0) -> float:
    """How much agent ``agent`` can gain by a pure deviation (>= 0)."""
    current = expected_payoffs(spec, profile, k, gamma)[agent]
    best = -np.inf
    for plan in _pure_plans(spec, profile, agent, k):
        dev = MixedProfile(
            agent_policies=[
                [plan[t] if i == agent else profile.agent_policies[t][i]
                 for i in range(spec.num_agents)]
                for t in range(spec.horizon)],
            mediated=profile.mediated,
            mediator_by_coalition=profile.mediator_by_coalition,
            mediator_by_size=profile.mediator_by_size)
        best = max(best, expected_payoffs(spec, dev, k, gamma)[agent])
    return float(best - current)


# ---------------------------------------------------------------------------
# Optimal constrained mediator for the symmetric one-shot PGG


def optimal_constrained_mediator_pgg(num_agents: int,
                                     multiplier: float) -> np.ndarray:
    """Contribute probability per coalition size for the welfare-maximal
    incentive-compatible mediator.

    With everyone outside the coalition defecting, a member of a coalition
    of size s earns v_in(s) = (n/N) s p_s - p_s and an outsider earns
    v_out(s) = (n/N) s p_s. Maximizing welfare of the full coalition sets
    p_N = 1; walking down, each p_s is pushed as high as the encouragement
    constraint v_in(s+1) >= v_out(s) allows (leaving a coalition of s+1 and
    joining one of s are mirror comparisons, so this also settles
    incentive-compatibility). Sizes whose members would lose by contributing
    get p_s = 0.
    """
    if not 1.0 < multiplier < num_agents:
        raise ConfigError("PGG requires 1 < n < N")
    ratio = multiplier / num_agents
    p = np.zeros(num_agents + 1)
    p[num_agents] = 1.0
    for s in range(num_agents - 1, 0, -1):
        if ratio * s <= 1.0:
            p[s] = 0.0
        else:
            p[s] = min(1.0, (ratio * (s + 1) - 1.0) * p[s + 1] / (ratio * s))
    return p


def full_commit_pgg_profile(spec: PayoffSpec,
                            p_by_size: np.ndarray) -> MixedProfile:
    """Everyone commits; the mediator plays the given size-indexed policy."""
    point = np.array([0.0, 0.0, 1.0])
    return MixedProfile(
        agent_policies=[[point.copy() for _ in range(spec.num_agents)]],
        mediated=True, mediator_by_size=p_by_size)


# ---------------------------------------------------------------------------
# Reward normalization and welfare bounds


def normalization_constants(spec: PayoffSpec) -> tuple[float, float]:
    """(all-defect per-agent return, full-cooperation per-agent return).

    Reported rewards are affinely mapped so these land on 0 and 1.
    """
    if spec.kind is GameKind.ONE_SHOT_PGG:
        return 0.0, spec.multiplier - 1.0
    if spec.kind is GameKind.ITERATIVE_PGG:
        state = games.reset(spec)
        total = np.zeros(spec.num_agents)
        for _ in range(spec.horizon):
            state, rewards = games.pgg_iter_step(
                spec, state, np.ones(spec.num_agents))
            total += rewards
        return 0.0, float(total.mean())
    low = 0.0
    high = 0.0
    for table in spec.payoff_tables:
        low += float(table[(0,) * spec.num_agents].mean())
        high += float(table.sum(axis=-1).max()) / spec.num_agents
    return low, high


def normalized_reward(spec: PayoffSpec, mean_return: float) -> float:
    low, high = normalization_constants(spec)
    return (mean_return - low) / (high - low)


def pure_nash_payoffs(spec: PayoffSpec) -> list[np.ndarray]:
    """Payoff vectors of all pure Nash equilibria of a one-shot matrix game."""
    if spec.kind is not GameKind.MATRIX or spec.horizon != 1:
        raise UnsupportedGameError("pure Nash enumeration is for one-shot matrix games")
    table = spec.payoff_tables[0]
    out = []
    for joint in itertools.product(*(range(a) for a in spec.num_actions)):
        stable = True
        for i in range(spec.num_agents):
            for alt in range(spec.num_actions[i]):
                dev = list(joint)
                dev[i] = alt
                if table[tuple(dev)][i] > table[joint][i] + 1e-12:
                    stable = False
                    break
            if not stable:
                break
        if stable:
            out.append(table[joint].copy())
    return out


def max_mediated_welfare(spec: PayoffSpec) -> tuple[float, np.ndarray]:
    """Best social welfare a full-coalition mediator can reach while keeping
    every agent at least as well off as at a pure Nash fallback.

    Solved as a small LP over joint-outcome distributions. Returns the
    optimum and the optimal joint distribution (shaped like the payoff
    table without its reward axis).
    """
    nash = pure_nash_payoffs(spec)
    if not nash:
        raise UnsupportedGameError("no pure Nash fallback to anchor deviations")
    fallback = np.max(np.stack(nash), axis=0)
    table = spec.payoff_tables[0]
    flat = table.reshape(-1, spec.num_agents)
    welfare = flat.sum(axis=1)
    res = linprog(
        c=-welfare,
        A_ub=-flat.T,
        b_ub=-fallback,
        A_eq=np.ones((1, flat.shape[0])),
        b_eq=np.array([1.0]),
        bounds=[(0.0, 1.0)] * flat.shape[0],
        method="highs")
    if not res.success:
        raise UnsupportedGameError(f"welfare LP failed: {res.message}")
    return float(-res.fun), res.x.reshape(table.shape[:-1])


# ---------------------------------------------------------------------------
# Monte-Carlo cross-check


def sample_profile_payoffs(spec: PayoffSpec, profile: MixedProfile,
                           episodes: int, rng: np.random.Generator,
                           k: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Empirical mean and standard error of per-agent returns under a profile."""
    n = spec.num_agents
    totals = np.zeros((episodes, n))
    if spec.kind is GameKind.ITERATIVE_PGG:
        raise UnsupportedGameError("profile sampling targets the exact-oracle games")

    coalition = np.zeros((episodes, n), dtype=bool)
    for t in range(spec.horizon):
        choices = np.empty((episodes, n), dtype=np.int64)
        for i in range(n):
            pol = profile.agent_policies[t][i]
            if profile.mediated and t % k != 0:
                env = _env_part(pol, spec.num_actions[i])
                free = np.concatenate([env, [0.0]])
                forced = np.zeros(spec.num_actions[i] + 1)
                forced[-1] = 1.0
                cdf_free = np.cumsum(free)
                cdf_forced = np.cumsum(forced)
                u = rng.random(episodes)
                pick_free = (cdf_free[None, :] < u[:, None]).sum(axis=1)
                choices[:, i] = np.where(coalition[:, i],
                                         (cdf_forced[None, :] < u[:, None]).sum(axis=1),
                                         pick_free)
            else:
                cdf = np.cumsum(pol)
                u = rng.random(episodes)
                choices[:, i] = np.minimum((cdf[None, :] < u[:, None]).sum(axis=1),
                                           pol.shape[0] - 1)
        if profile.mediated:
            if t % k == 0:
                coalition = choices == np.asarray(spec.num_actions)[None, :]
            env_actions = np.where(coalition, 0, choices)
            env_actions = _sample_mediator_actions(
                spec, profile, t, coalition, env_actions, rng)
        else:
            env_actions = choices
        rewards, _ = games.step_batch(spec, t, None, env_actions)
        totals += rewards
    mean = totals.mean(axis=0)
    stderr = totals.std(axis=0, ddof=1) / np.sqrt(episodes)
    return mean, stderr


def _sample_mediator_actions(spec: PayoffSpec, profile: MixedProfile, t: int,
                             coalition: np.ndarray, env_actions: np.ndarray,
                             rng: np.random.Generator) -> np.ndarray:
    out = env_actions.copy()
    if profile.mediator_by_size is not None:
        sizes = coalition.sum(axis=1)
        p = profile.mediator_by_size[sizes]
        draws = rng.random(coalition.shape) < p[:, None]
        out = np.where(coalition, draws.astype(np.int64), out)
        return out
    bits_all = [tuple(row) for row in coalition.astype(int)]
    for bits in set(bits_all):
        if sum(bits) == 0:
            continue
        rows = np.array([b == bits for b in bits_all])
        for i, flag in enumerate(bits):
            if flag:
                dist = profile.mediator_dist(t, bits, i, spec.num_actions[i])
                cdf = np.cumsum(dist)
                u = rng.random(int(rows.sum()))
                out[rows, i] = np.minimum((cdf[None, :] < u[:, None]).sum(axis=1),
                                          dist.shape[0] - 1)
    return out


def mediator_copy_profile(spec: PayoffSpec,
                          profile: MixedProfile) -> MixedProfile:
    """Mediator that replays each member's own (commit-renormalized) policy.

    Under this mediator, membership has no effect on anyone's action
    distribution, so it satisfies both constraints with equality.
    """
    if not profile.mediated:
        raise ContractError("copy profile needs a mediated agent profile")
    by_coal = []
    for t in range(spec.horizon):
        table = {}
        for bits in itertools.product((0, 1), repeat=spec.num_agents):
            table[bits] = {
                i: _env_part(profile.agent_policies[t][i], spec.num_actions[i])
                for i in range(spec.num_agents) if bits[i]}
        by_coal.append(table)
    return MixedProfile(agent_policies=profile.agent_policies,
                        mediated=True, mediator_by_coalition=by_coal)


def conditional_commit_values(spec: PayoffSpec, profile: MixedProfile,
                              agent: int, k: int = 1,
                              gamma: float = 1.0) -> tuple[float, float]:
    """Agent's expected return conditioned on committing vs. acting itself.

    Both branches keep every other agent on the original profile; "acting
    itself" plays the commit-renormalized env part of its own policy.
    """
    polices = profile.agent_policies
    commit_point = np.zeros(spec.num_actions[agent] + 1)
    commit_point[-1] = 1.0
    solo = np.zeros(spec.num_actions[agent] + 1)
    solo[:-1] = _env_part(polices[0][agent], spec.num_actions[agent])
    out = []
    for branch in (commit_point, solo):
        branched = MixedProfile(
            agent_policies=[
                [branch if (i == agent and t == 0) else polices[t][i]
                 for i in range(spec.num_agents)]
                for t in range(spec.horizon)],
            mediated=True,
            mediator_by_coalition=profile.mediator_by_coalition,
            mediator_by_size=profile.mediator_by_size)
        out.append(float(expected_payoffs(spec, branched, k, gamma)[agent]))
    return out[0], out[1]
