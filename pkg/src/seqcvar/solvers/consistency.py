"""Plan/replan probes for time consistency.

Rollouts follow the plan made at the initial state. At every visited
``(t, x_t)`` the problem is solved again with ``x_t`` as a fresh initial state
and ``T - t`` stages to go, and the first action of that fresh solve is
compared with the action the original plan takes there.

* nested: the fresh solve uses the original alpha.
* precommitted: the fresh solve uses the tracked level ``alpha_t``.
* fixed: the plan is the whole-return CVaR_alpha optimum from ``x0`` (the
  distribution a fixed-alpha evaluator scores at the start); every visited
  state re-optimises the whole future return at the unchanged alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..mdp import FiniteHorizonMDP, simulate
from .nested import solve_ncvar
from .precommitted import default_alpha_grid, normalize_grid, pcvar_rollout, solve_pcvar

METHODS = ("nested", "fixed", "precommitted")


@dataclass(frozen=True)
class Divergence:
    seed: int
    stage: int
    state: int
    planned: int
    replanned: int
    alpha_t: float | None = None


@dataclass
class ProbeReport:
    method: str
    alpha: float
    n_checked: int = 0
    divergences: list = field(default_factory=list)

    @property
    def n_divergences(self) -> int:
        return len(self.divergences)


class _FreshSolves:
    """Fresh solves keyed by remaining horizon; tables do not depend on ``x0``."""

    def __init__(self, mdp, solve):
        self.mdp = mdp
        self.solve = solve
        self.cache = {}

    def __call__(self, stage: int, state: int):
        h = self.mdp.horizon - stage
        if h not in self.cache:
            self.cache[h] = self.solve(self.mdp.replace(horizon=h, x0=state))
        return self.cache[h]


def consistency_probe(mdp: FiniteHorizonMDP, method: str, alpha: float, seeds, grid=None) -> ProbeReport:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    report = ProbeReport(method, float(alpha))
    if method == "nested":
        plan = solve_ncvar(mdp, alpha)
        fresh = _FreshSolves(mdp, lambda m: solve_ncvar(m, alpha))
        for seed in seeds:
            for st in simulate(mdp, plan.policy, seed).steps:
                replanned = fresh(st.stage, st.state).policy(0, st.state)
                report.n_checked += 1
                if replanned != st.action:
                    report.divergences.append(Divergence(seed, st.stage, st.state, st.action, replanned))
        return report

    grid = default_alpha_grid([alpha]) if grid is None else normalize_grid(list(grid) + [alpha])
    plan = solve_pcvar(mdp, grid)
    fresh = _FreshSolves(mdp, lambda m: solve_pcvar(m, grid))
    for seed in seeds:
        traj = pcvar_rollout(mdp, plan, alpha, seed)
        for st, alpha_t in zip(traj.steps, traj.alpha_trace):
            level = alpha_t if method == "precommitted" else alpha
            replanned, _ = fresh(st.stage, st.state).decide(0, st.state, level)
            report.n_checked += 1
            if replanned != st.action:
                report.divergences.append(
                    Divergence(seed, st.stage, st.state, st.action, replanned, alpha_t))
    return report
