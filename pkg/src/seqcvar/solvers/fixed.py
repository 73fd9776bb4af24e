"""Fixed CVaR by distributional backward induction.

Each stage picks the action whose induced return distribution (given the
stage's own downstream choices) has the largest CVaR at the same level alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import (DEFAULT_ATOM_BOUND, AtomBoundError, FiniteHorizonMDP, PolicyTable,
                   argmax_lowest, check_valid)
from ..riskdist import DiscreteDistribution, check_alpha, cvar_tail, mixture, shift_scale


@dataclass(frozen=True)
class FCvarSolution:
    alpha: float
    return_dists: list  # [t][s] -> DiscreteDistribution, t = 0..T
    cvar_values: np.ndarray  # (T+1, S)
    q_values: np.ndarray  # (T, S, A) CVaR of each candidate distribution
    policy: PolicyTable

    def to_dict(self) -> dict:
        return {
            "method": "fixed", "alpha": self.alpha,
            "values": self.cvar_values.tolist(), "q_values": self.q_values.tolist(),
            "policy": self.policy.to_list(),
            "return_dists": [[d.atoms for d in stage] for stage in self.return_dists],
        }


def candidate_distribution(mdp: FiniteHorizonMDP, nxt: list, s: int, a: int) -> DiscreteDistribution:
    return mixture([(o.prob, shift_scale(nxt[o.next_state], o.reward, mdp.gamma))
                    for o in mdp.transitions[s][a]])


def solve_fcvar(mdp: FiniteHorizonMDP, alpha: float,
                atom_bound: int = DEFAULT_ATOM_BOUND) -> FCvarSolution:
    alpha = check_alpha(alpha)
    check_valid(mdp)
    T, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    zero = DiscreteDistribution.point(0.0)
    dists = [None] * (T + 1)
    dists[T] = [zero] * S
    values = np.zeros((T + 1, S))
    Q = np.zeros((T, S, A))
    choice = np.zeros((T, S), dtype=int)
    for t in range(T - 1, -1, -1):
        stage = []
        for s in range(S):
            if mdp.terminal[s]:
                stage.append(zero)
                continue
            cands = [candidate_distribution(mdp, dists[t + 1], s, a) for a in range(A)]
            for a, d in enumerate(cands):
                if len(d) > atom_bound:
                    raise AtomBoundError(f"stage {t}, state {s}, action {a}: {len(d)} atoms "
                                         f"exceeds bound {atom_bound}")
                Q[t, s, a] = cvar_tail(d, alpha)
            choice[t, s] = argmax_lowest(Q[t, s])
            stage.append(cands[choice[t, s]])
            values[t, s] = Q[t, s, choice[t, s]]
        dists[t] = stage
    return FCvarSolution(alpha, dists, values, Q, PolicyTable(choice))
