"""Brute-force references for small instances.

Everything here walks the trajectory tree explicitly. Nothing is memoised and
no numerical kernel is shared with the solvers except ``cvar_tail``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .mdp import FiniteHorizonMDP
from .riskdist import DiscreteDistribution, check_alpha, cvar_tail
from .solvers.precommitted import GridError, PCvarSolution


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class EnumerationBudget:
    max_trajectories: int = 10**6
    max_depth: int = 64

    def __post_init__(self):
        if self.max_trajectories < 1 or self.max_depth < 1:
            raise ValueError("enumeration budget must be positive")


def _check_depth(mdp: FiniteHorizonMDP, from_stage: int, budget: EnumerationBudget):
    if mdp.horizon - from_stage > budget.max_depth:
        raise BudgetExceeded(f"depth {mdp.horizon - from_stage} exceeds budget {budget.max_depth}")


def _walk(mdp, start, from_stage, choose, budget, info=None):
    """Leaves ``(return, probability)`` of the tree rooted at ``(from_stage, start)``.

    ``choose(t, s, info)`` gives ``(action, child_infos)``; ``child_infos`` is
    indexed by outcome.
    """
    leaves = []
    stack = [(from_stage, start, info, 0.0, 1.0, 1.0)]
    while stack:
        t, s, inf, ret, disc, prob = stack.pop()
        if t >= mdp.horizon or mdp.terminal[s]:
            leaves.append((ret, prob))
            if len(leaves) > budget.max_trajectories:
                raise BudgetExceeded(f"more than {budget.max_trajectories} trajectories")
            continue
        a, child_infos = choose(t, s, inf)
        for k, o in enumerate(mdp.transitions[s][a]):
            child = None if child_infos is None else child_infos[k]
            stack.append((t + 1, o.next_state, child, ret + disc * o.reward,
                          disc * mdp.gamma, prob * o.prob))
    return leaves


def _leaves_to_dist(leaves) -> DiscreteDistribution:
    total = sum(p for _, p in leaves)
    # Products of many probabilities drift from 1 by a few ulps.
    return DiscreteDistribution([(r, p / total) for r, p in leaves])


def enumerate_returns(mdp: FiniteHorizonMDP, policy, from_state: int,
                      budget: EnumerationBudget = EnumerationBudget(),
                      from_stage: int = 0) -> DiscreteDistribution:
    """Return distribution of a Markov policy by exhaustive tree walk."""
    _check_depth(mdp, from_stage, budget)
    leaves = _walk(mdp, from_state, from_stage, lambda t, s, _: (policy(t, s), None), budget)
    return _leaves_to_dist(leaves)


def ncvar_reference(mdp: FiniteHorizonMDP, alpha: float, from_state: int, from_stage: int = 0,
                    max_depth: int = 4) -> float:
    """Nested CVaR straight from its recursive definition, optimising every subtree afresh."""
    alpha = check_alpha(alpha)
    if mdp.horizon - from_stage > max_depth:
        raise BudgetExceeded(f"depth {mdp.horizon - from_stage} exceeds {max_depth}")

    def nested(t: int, s: int) -> float:
        if t >= mdp.horizon or mdp.terminal[s]:
            return 0.0
        best = None
        for a in range(mdp.n_actions):
            inner = DiscreteDistribution([(o.reward + mdp.gamma * nested(t + 1, o.next_state), o.prob)
                                          for o in mdp.transitions[s][a]])
            q = cvar_tail(inner, alpha)
            best = q if best is None else max(best, q)
        return best

    return nested(from_stage, from_state)


def policy_return_distribution(mdp: FiniteHorizonMDP, solution: PCvarSolution, alpha0: float,
                               budget: EnumerationBudget = EnumerationBudget(),
                               from_state: int | None = None, from_stage: int = 0
                               ) -> DiscreteDistribution:
    """Return law of the augmented precommitted policy, tracking alpha along every branch."""
    alpha0 = check_alpha(alpha0)
    if solution.grid_index(alpha0) is None:
        raise GridError(f"alpha0={alpha0} is not a grid level; add it to the grid")
    _check_depth(mdp, from_stage, budget)
    start = mdp.x0 if from_state is None else from_state
    leaves = _walk(mdp, start, from_stage, solution.decide, budget, info=alpha0)
    return _leaves_to_dist(leaves)


def pcvar_policy_check(mdp: FiniteHorizonMDP, solution: PCvarSolution, alpha0: float,
                       budget: EnumerationBudget = EnumerationBudget()) -> float:
    """CVaR at ``alpha0`` of the enumerated return of the extracted augmented policy."""
    return cvar_tail(policy_return_distribution(mdp, solution, alpha0, budget), alpha0)
