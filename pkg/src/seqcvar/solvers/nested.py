"""Nested CVaR: CVaR_alpha of ``r + gamma * V_{t+1}(x')`` applied stage by stage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import FiniteHorizonMDP, PolicyTable, argmax_lowest, check_valid
from ..riskdist import check_alpha, tail_mean


@dataclass(frozen=True)
class NCvarSolution:
    alpha: float
    values: np.ndarray  # (T+1, S)
    q_values: np.ndarray  # (T, S, A)
    policy: PolicyTable

    def to_dict(self) -> dict:
        return {"method": "nested", "alpha": self.alpha, "values": self.values.tolist(),
                "q_values": self.q_values.tolist(), "policy": self.policy.to_list()}


def nested_q(mdp: FiniteHorizonMDP, v_next: np.ndarray, s: int, a: int, alpha: float) -> float:
    row = mdp.transitions[s][a]
    vals = np.array([o.reward + mdp.gamma * v_next[o.next_state] for o in row])
    probs = np.array([o.prob for o in row])
    if alpha == 1.0:
        return float(np.dot(vals, probs))
    return tail_mean(vals, probs, alpha)


def solve_ncvar(mdp: FiniteHorizonMDP, alpha: float) -> NCvarSolution:
    alpha = check_alpha(alpha)
    check_valid(mdp)
    T, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    V = np.zeros((T + 1, S))
    Q = np.zeros((T, S, A))
    choice = np.zeros((T, S), dtype=int)
    for t in range(T - 1, -1, -1):
        for s in range(S):
            if mdp.terminal[s]:
                continue
            for a in range(A):
                Q[t, s, a] = nested_q(mdp, V[t + 1], s, a, alpha)
            choice[t, s] = argmax_lowest(Q[t, s])
            V[t, s] = Q[t, s, choice[t, s]]
    return NCvarSolution(alpha, V, Q, PolicyTable(choice))
