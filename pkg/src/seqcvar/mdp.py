"""Finite-horizon tabular MDPs, deterministic policies, rollouts.

Rewards attach to transitions ``(state, action, next_state)``. A solver at stage
``t`` sees ``horizon - t`` remaining decisions; ``V_T = 0``.

Rollouts draw from numpy's PCG64 bit generator (``numpy.random.Generator(
PCG64(seed))``, one uniform ``random()`` per transition, inverse-CDF over the
outcome list in stored order). PCG64 output is specified bit-for-bit, so a seed
identifies a trajectory on every platform.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .riskdist import PROB_TOL, DiscreteDistribution, mixture, shift_scale

DEFAULT_ATOM_BOUND = 10**6
TIE_TOL = 1e-12


class Outcome(NamedTuple):
    next_state: int
    prob: float
    reward: float


class PolicyHoleError(KeyError):
    """A rollout reached a (stage, state) the policy does not cover."""


class AtomBoundError(RuntimeError):
    pass


class InvalidMDPError(ValueError):
    pass


@dataclass(frozen=True)
class FiniteHorizonMDP:
    """Tabular MDP; ``transitions[s][a]`` is a tuple of :class:`Outcome`.

    Outcomes sharing ``(next_state, reward)`` are merged on construction so the
    list of outcomes is the support of the one-step law.
    """

    n_states: int
    n_actions: int
    horizon: int
    gamma: float
    transitions: tuple
    terminal: tuple
    x0: int = 0
    labels: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        rows = []
        for s_rows in self.transitions:
            rows.append(tuple(_merge_outcomes(a_row) for a_row in s_rows))
        object.__setattr__(self, "transitions", tuple(rows))
        object.__setattr__(self, "terminal", tuple(bool(t) for t in self.terminal))

    @classmethod
    def from_triples(cls, n_states, n_actions, horizon, gamma, triples, terminal=(), x0=0,
                     labels=None) -> "FiniteHorizonMDP":
        """Build from ``(s, a, s', p, r)`` rows; terminal states get 0-reward self-loops."""
        terminal_set = set(terminal)
        table = [[[] for _ in range(n_actions)] for _ in range(n_states)]
        for s, a, s2, p, r in triples:
            table[s][a].append(Outcome(int(s2), float(p), float(r)))
        for s in terminal_set:
            table[s] = [[Outcome(s, 1.0, 0.0)] for _ in range(n_actions)]
        flags = tuple(s in terminal_set for s in range(n_states))
        return cls(n_states, n_actions, horizon, float(gamma), table, flags, x0, labels)

    def outcomes(self, s: int, a: int) -> tuple:
        return self.transitions[s][a]

    def replace(self, **changes) -> "FiniteHorizonMDP":
        kw = dict(n_states=self.n_states, n_actions=self.n_actions, horizon=self.horizon,
                  gamma=self.gamma, transitions=self.transitions, terminal=self.terminal,
                  x0=self.x0, labels=self.labels)
        kw.update(changes)
        return FiniteHorizonMDP(**kw)

    def to_dict(self) -> dict:
        triples = [[s, a, o.next_state, o.prob, o.reward]
                   for s in range(self.n_states) for a in range(self.n_actions)
                   for o in self.transitions[s][a]]
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "x0": self.x0,
            "terminal": [s for s in range(self.n_states) if self.terminal[s]],
            "transitions": triples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteHorizonMDP":
        # Terminal rows are taken verbatim so that validate() can report bad ones.
        n_s, n_a = int(d["n_states"]), int(d["n_actions"])
        table = [[[] for _ in range(n_a)] for _ in range(n_s)]
        for s, a, s2, p, r in d["transitions"]:
            table[int(s)][int(a)].append(Outcome(int(s2), float(p), float(r)))
        term = set(d.get("terminal", ()))
        return cls(n_s, n_a, int(d["horizon"]), float(d["gamma"]), table,
                   tuple(s in term for s in range(n_s)), int(d.get("x0", 0)))

    @classmethod
    def from_json(cls, text: str) -> "FiniteHorizonMDP":
        return cls.from_dict(json.loads(text))


def _merge_outcomes(row: Iterable) -> tuple:
    merged: dict[tuple[int, float], float] = {}
    for o in row:
        o = Outcome(int(o[0]), float(o[1]), float(o[2]))
        if o.prob == 0.0:
            continue
        key = (o.next_state, o.reward)
        merged[key] = merged.get(key, 0.0) + o.prob
    return tuple(Outcome(s2, p, r) for (s2, r), p in merged.items())


def validate(mdp: FiniteHorizonMDP) -> list[str]:
    """All invariant violations, each naming its location. Empty means valid."""
    problems = []
    if not (0.0 < mdp.gamma <= 1.0):
        problems.append(f"gamma={mdp.gamma} outside (0, 1]")
    if mdp.horizon < 0:
        problems.append(f"negative horizon {mdp.horizon}")
    if not (0 <= mdp.x0 < mdp.n_states):
        problems.append(f"x0={mdp.x0} out of range")
    if len(mdp.transitions) != mdp.n_states or len(mdp.terminal) != mdp.n_states:
        problems.append("transition table / terminal flags do not cover n_states")
        return problems
    for s in range(mdp.n_states):
        if len(mdp.transitions[s]) != mdp.n_actions:
            problems.append(f"state {s}: {len(mdp.transitions[s])} action rows, expected {mdp.n_actions}")
            continue
        for a in range(mdp.n_actions):
            row = mdp.transitions[s][a]
            if not row:
                problems.append(f"(state {s}, action {a}): no outcomes")
                continue
            total = sum(o.prob for o in row)
            if abs(total - 1.0) > PROB_TOL:
                problems.append(f"(state {s}, action {a}): probabilities sum to {total:.12g}")
            for o in row:
                if not (0 <= o.next_state < mdp.n_states):
                    problems.append(f"(state {s}, action {a}): next state {o.next_state} out of range")
                if o.prob < 0:
                    problems.append(f"(state {s}, action {a}): negative probability {o.prob}")
            if mdp.terminal[s] and any(o.next_state != s or o.reward != 0.0 for o in row):
                problems.append(f"terminal state {s}, action {a}: must be a 0-reward self-loop")
    return problems


def check_valid(mdp: FiniteHorizonMDP) -> None:
    problems = validate(mdp)
    if problems:
        raise InvalidMDPError("; ".join(problems))


@dataclass(frozen=True)
class PolicyTable:
    """Deterministic Markov policy ``choice[t, s]``; -1 marks an undefined entry."""

    choice: np.ndarray

    def __call__(self, t: int, s: int) -> int:
        a = int(self.choice[t, s])
        if a < 0:
            raise PolicyHoleError(f"policy has no action for stage {t}, state {s}")
        return a

    def to_list(self) -> list:
        return self.choice.tolist()


def argmax_lowest(q: Sequence[float], tol: float = TIE_TOL) -> int:
    """Index of the maximum, lowest index among entries within ``tol`` of it."""
    q = np.asarray(q, dtype=float)
    return int(np.flatnonzero(q >= q.max() - tol)[0])


def argmax_lowest_nd(q: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """:func:`argmax_lowest` along the last axis."""
    best = q.max(axis=-1, keepdims=True)
    return np.argmax(q >= best - tol, axis=-1)


def argmax_set(q: Sequence[float], tol: float = 1e-9) -> frozenset:
    q = np.asarray(q, dtype=float)
    return frozenset(np.flatnonzero(q >= q.max() - tol).tolist())


@dataclass
class Step:
    stage: int
    state: int
    action: int
    reward: float
    next_state: int
    outcome: int


@dataclass
class Trajectory:
    steps: list
    gamma: float
    alpha_trace: list | None = None

    @property
    def realized_return(self) -> float:
        return float(sum(self.gamma ** st.stage * st.reward for st in self.steps))

    @property
    def states(self) -> list[int]:
        if not self.steps:
            return []
        return [st.state for st in self.steps] + [self.steps[-1].next_state]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "state", "action", "reward", "alpha_t"])
        for i, st in enumerate(self.steps):
            alpha = "" if self.alpha_trace is None else repr(self.alpha_trace[i])
            w.writerow([st.stage, st.state, st.action, repr(st.reward), alpha])
        return buf.getvalue()


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_outcome(rng: np.random.Generator, row: Sequence[Outcome]) -> int:
    u = rng.random()
    acc = 0.0
    for i, o in enumerate(row):
        acc += o.prob
        if u < acc:
            return i
    return len(row) - 1


def rollout(mdp: FiniteHorizonMDP, decide: Callable, seed: int, start: int | None = None,
            start_stage: int = 0, state_info=None) -> Trajectory:
    """Generic rollout driver.

    ``decide(t, s, info)`` returns ``(action, update)`` where ``update(outcome_index)``
    yields the next ``info``; ``info`` is the per-trajectory augmentation (the
    tracked risk level for precommitted policies, ``None`` otherwise).
    """
    rng = make_rng(seed)
    s = mdp.x0 if start is None else start
    info = state_info
    steps = []
    trace = [] if info is not None else None
    for t in range(start_stage, mdp.horizon):
        if mdp.terminal[s]:
            break
        a, update = decide(t, s, info)
        row = mdp.transitions[s][a]
        k = sample_outcome(rng, row)
        o = row[k]
        if trace is not None:
            trace.append(info)
        steps.append(Step(t, s, a, o.reward, o.next_state, k))
        info = update(k) if update is not None else None
        s = o.next_state
    return Trajectory(steps, mdp.gamma, trace)


def simulate(mdp: FiniteHorizonMDP, policy: PolicyTable, seed: int) -> Trajectory:
    return rollout(mdp, lambda t, s, _: (policy(t, s), None), seed)


def visit_frequencies(mdp: FiniteHorizonMDP, policy, n_rollouts: int, seed: int,
                      rollout_fn: Callable | None = None) -> dict[int, dict[int, float]]:
    """First-visit action frequencies over ``n_rollouts`` seeded rollouts.

    Rollout ``i`` uses seed ``seed + i``. Only states where an action was taken
    count as visited; the per-state frequencies sum to the fraction of rollouts
    visiting the state.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    trajectories = [simulate(mdp, policy, seed + i) if rollout_fn is None else rollout_fn(seed + i)
                    for i in range(n_rollouts)]
    return first_visit_frequencies(trajectories)


def first_visit_frequencies(trajectories: Sequence[Trajectory]) -> dict[int, dict[int, float]]:
    counts: dict[int, dict[int, int]] = {}
    for traj in trajectories:
        seen = set()
        for st in traj.steps:
            if st.state in seen:
                continue
            seen.add(st.state)
            by_action = counts.setdefault(st.state, {})
            by_action[st.action] = by_action.get(st.action, 0) + 1
    n = len(trajectories)
    return {s: {a: c / n for a, c in sorted(acts.items())} for s, acts in sorted(counts.items())}


def expected_value_dp(mdp: FiniteHorizonMDP) -> tuple[np.ndarray, PolicyTable, np.ndarray]:
    """Classical finite-horizon value iteration.

    Returns ``(V, policy, Q)`` with ``V`` of shape ``(T+1, S)`` and ``Q`` of shape
    ``(T, S, A)``.
    """
    T, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    V = np.zeros((T + 1, S))
    Q = np.zeros((T, S, A))
    choice = np.zeros((T, S), dtype=int)
    for t in range(T - 1, -1, -1):
        for s in range(S):
            if mdp.terminal[s]:
                continue
            for a in range(A):
                Q[t, s, a] = sum(o.prob * (o.reward + mdp.gamma * V[t + 1, o.next_state])
                                 for o in mdp.transitions[s][a])
            choice[t, s] = argmax_lowest(Q[t, s])
            V[t, s] = Q[t, s, choice[t, s]]
    return V, PolicyTable(choice), Q


def evaluate_policy(mdp: FiniteHorizonMDP, policy: PolicyTable) -> np.ndarray:
    T, S = mdp.horizon, mdp.n_states
    V = np.zeros((T + 1, S))
    for t in range(T - 1, -1, -1):
        for s in range(S):
            if mdp.terminal[s]:
                continue
            V[t, s] = sum(o.prob * (o.reward + mdp.gamma * V[t + 1, o.next_state])
                          for o in mdp.transitions[s][policy(t, s)])
    return V


def return_distribution_exact(mdp: FiniteHorizonMDP, policy: PolicyTable, from_state: int,
                              from_stage: int = 0, atom_bound: int = DEFAULT_ATOM_BOUND
                              ) -> DiscreteDistribution:
    """Exact law of the discounted return from ``(from_stage, from_state)`` under ``policy``.

    Backward distributional recursion over stages; no sampling.
    """
    zero = DiscreteDistribution.point(0.0)
    memo: dict[tuple[int, int], DiscreteDistribution] = {}

    def dist(t: int, s: int) -> DiscreteDistribution:
        if t >= mdp.horizon or mdp.terminal[s]:
            return zero
        key = (t, s)
        if key not in memo:
            row = mdp.transitions[s][policy(t, s)]
            d = mixture([(o.prob, shift_scale(dist(t + 1, o.next_state), o.reward, mdp.gamma))
                         for o in row])
            if len(d) > atom_bound:
                raise AtomBoundError(
                    f"return distribution at stage {t}, state {s} has {len(d)} atoms "
                    f"(bound {atom_bound}); use the enumeration oracle on a smaller instance")
            memo[key] = d
        return memo[key]

    return dist(from_stage, from_state)


def random_mdp(seed: int, n_states: int = 4, n_actions: int = 2, horizon: int = 3,
               max_branching: int = 3, gamma: float = 1.0, n_terminal: int = 0) -> FiniteHorizonMDP:
    """Seeded random MDP for cross-checks; rewards are multiples of 0.1 in [-1, 1]."""
    rng = make_rng(seed)
    terminal = list(range(n_states - n_terminal, n_states))
    triples = []
    for s in range(n_states):
        if s in terminal:
            continue
        for a in range(n_actions):
            k = int(rng.integers(1, max_branching + 1))
            succ = rng.choice(n_states, size=k, replace=True)
            probs = rng.dirichlet(np.ones(k))
            probs[-1] = 1.0 - probs[:-1].sum()
            for s2, p in zip(succ, probs):
                r = round(float(rng.integers(-10, 11)) / 10.0, 1)
                triples.append((s, a, int(s2), float(p), r))
    return FiniteHorizonMDP.from_triples(n_states, n_actions, horizon, gamma, triples, terminal, x0=0)
