"""Precommitted CVaR by risk-augmented backward induction.

The state is augmented with a risk level ``y`` on a fixed grid. With
``u(x') = y * xi(x')`` the one-step decomposition reads

    y * V_t(x, y) = max_a  min_{u in [0,1], sum p u = y}  sum_j p_j phi_j(u_j),
    phi_j(u) = r_j * u + gamma * w_{t+1}(x'_j, u),

where ``w(x', u)`` is the piecewise-linear interpolation of ``u * V(x', u)`` over
the nodes ``{0} u grid`` (``w(x', 0) = 0``). Every ``phi_j`` is convex and
piecewise linear on the same nodes, so the inner minimisation is a fractional
knapsack over segments: filling segments in increasing slope order is the
optimal vertex of the epigraph LP. ``inner_lp`` solves that LP with HiGHS and
is kept as the reference route.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mdp import FiniteHorizonMDP, argmax_lowest_nd, check_valid, rollout
from ..riskdist import check_alpha

DEFAULT_GRID_SIZE = 33
DEFAULT_GRID_MIN = 0.01
GRID_SNAP = 1e-10
ALPHA_FLOOR = 1e-12


class GridError(ValueError):
    pass


def default_alpha_grid(extra=(), n: int = DEFAULT_GRID_SIZE, lo: float = DEFAULT_GRID_MIN) -> np.ndarray:
    """Geometric grid from ``lo`` to 1 with the ``extra`` levels inserted exactly."""
    pts = list(np.geomspace(lo, 1.0, n))
    pts[-1] = 1.0
    for a in extra:
        pts.append(check_alpha(a))
    return normalize_grid(pts)


def normalize_grid(levels) -> np.ndarray:
    levels = sorted(float(a) for a in levels)
    out: list[float] = []
    for a in levels:
        check_alpha(a)
        if out and a - out[-1] <= GRID_SNAP:
            # Keep an exactly requested value over a generated neighbour.
            continue
        out.append(a)
    if out[-1] != 1.0:
        raise GridError("risk-level grid must contain 1.0")
    return np.array(out)


def lower_hull(nodes: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Lower convex envelope of ``(nodes, w)`` evaluated back at ``nodes``."""
    hull: list[int] = []
    for i in range(nodes.size):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = ((nodes[i1] - nodes[i0]) * (w[i] - w[i0])
                     - (w[i1] - w[i0]) * (nodes[i] - nodes[i0]))
            if cross > 0:
                break
            hull.pop()
        hull.append(i)
    if len(hull) == nodes.size:
        return w
    return np.interp(nodes, nodes[hull], w[hull])


def inner_greedy(probs: np.ndarray, slopes: np.ndarray, lengths: np.ndarray, ys: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Minimise ``sum_j p_j phi_j(u_j)`` s.t. ``sum_j p_j u_j = y`` for every ``y`` in ``ys``.

    Batched over a leading axis: ``probs`` is ``(P, J)``, ``slopes`` is
    ``(P, J, K)`` with ``slopes[., j, k]`` the slope of ``phi_j`` on segment
    ``k`` (non-decreasing in ``k``), ``lengths`` the ``K`` segment widths and
    ``phi_j(0) = 0``. Zero-probability outcomes are padding. Returns the minimal
    objective ``(P, M)`` and the minimising ``u`` ``(P, M, J)``. Equal slopes are
    filled lowest outcome index first.
    """
    P, J, K = slopes.shape
    M = ys.size
    flat = slopes.reshape(P, J * K)
    # Stable sort on the j-major flattening breaks slope ties by (outcome, segment).
    order = np.argsort(flat, axis=1, kind="stable")
    seg_len = np.tile(lengths, J)
    mass = (np.repeat(probs, K, axis=1) * seg_len[None, :])
    mass = np.take_along_axis(mass, order, axis=1)
    gain = mass * np.take_along_axis(flat, order, axis=1)
    cmass = np.cumsum(mass, axis=1)
    cgain = np.cumsum(gain, axis=1)
    pos = (cmass[:, None, :] < ys[None, :, None]).sum(axis=2)
    # y at the total mass can overshoot the float cumsum; land on the last real segment.
    last = J * K - 1 - np.argmax((mass > 0)[:, ::-1], axis=1)
    pos = np.minimum(pos, last[:, None])
    rows = np.arange(P)[:, None]
    m_at = mass[rows, pos]
    g_at = gain[rows, pos]
    prev_mass = cmass[rows, pos] - m_at
    frac = np.clip((ys[None, :] - prev_mass) / m_at, 0.0, 1.0)
    obj = cgain[rows, pos] - g_at + frac * g_at
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(J * K)[None, :].repeat(P, axis=0), axis=1)
    filled = (rank[:, None, :] < pos[:, :, None]) * seg_len[None, None, :]
    u = filled.reshape(P, M, J, K).sum(axis=3)
    flat_at = order[rows, pos]
    np.add.at(u, (rows.repeat(M, axis=1), np.arange(M)[None, :].repeat(P, axis=0), flat_at // K),
              frac * lengths[flat_at % K])
    return obj, np.clip(u, 0.0, 1.0)


def inner_lp(probs: np.ndarray, slopes: np.ndarray, nodes: np.ndarray, y: float
             ) -> tuple[float, np.ndarray]:
    """Epigraph LP for the same inner problem (reference route).

    Variables ``(u_1..u_J, z_1..z_J)``; ``z_j >= phi_j(g_k) + s_jk (u_j - g_k)``
    for every segment ``k``; ``sum p_j u_j = y``; ``0 <= u <= 1``.
    """
    from scipy.optimize import linprog

    J, K = slopes.shape
    phi = np.concatenate([np.zeros((J, 1)), np.cumsum(slopes * np.diff(nodes)[None, :], axis=1)], axis=1)
    rows, rhs = [], []
    for j in range(J):
        for k in range(K):
            row = np.zeros(2 * J)
            row[j] = slopes[j, k]
            row[J + j] = -1.0
            rows.append(row)
            rhs.append(slopes[j, k] * nodes[k] - phi[j, k])
    c = np.concatenate([np.zeros(J), probs])
    a_eq = np.concatenate([probs, np.zeros(J)])[None, :]
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=a_eq, b_eq=[y],
                  bounds=[(0.0, 1.0)] * J + [(None, None)] * J, method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"inner LP failed: {res.message}")
    u = np.clip(res.x[:J], 0.0, 1.0)
    # Re-evaluate the objective on the piecewise-linear functions at the LP vertex.
    obj = float(sum(probs[j] * np.interp(u[j], nodes, phi[j]) for j in range(J)))
    return obj, u


@dataclass(frozen=True)
class PCvarSolution:
    alpha_grid: np.ndarray  # (M,)
    gamma: float
    values: np.ndarray  # (T+1, S, M)
    q_values: np.ndarray  # (T, S, M, A)
    policy: np.ndarray  # (T, S, M)
    xi: np.ndarray  # (T, S, M, A, Jmax), NaN-padded
    n_outcomes: np.ndarray  # (S, A)
    hull_gap: float = 0.0
    x0: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.policy.shape[0]

    def grid_index(self, alpha: float) -> int | None:
        i = int(np.argmin(np.abs(self.alpha_grid - alpha)))
        return i if abs(self.alpha_grid[i] - alpha) <= GRID_SNAP else None

    def value(self, t: int, s: int, alpha: float) -> float:
        """``V_t(s, alpha)``; off-grid levels use the interpolation the solver uses."""
        alpha = check_alpha(alpha)
        i = self.grid_index(alpha)
        if i is not None:
            return float(self.values[t, s, i])
        if alpha < self.alpha_grid[0]:
            raise GridError(f"alpha={alpha} below the smallest grid level {self.alpha_grid[0]}; "
                            "extend the grid")
        nodes = self.alpha_grid
        return float(np.interp(alpha, nodes, nodes * self.values[t, s]) / alpha)

    def start_value(self, alpha0: float) -> float:
        return self.value(0, self.x0, alpha0)

    def decide(self, t: int, s: int, alpha: float) -> tuple[int, np.ndarray]:
        """Action and next-stage risk level per outcome of ``(s, action)``.

        On-grid levels read the stored argmin weights. Between two grid levels
        the action is shared if both agree and the next levels ``u = y * xi``
        are interpolated linearly; otherwise the lower (more averse) level is
        used as is. Below the grid, the lowest level's action and weights apply.
        """
        grid = self.alpha_grid
        i = self.grid_index(alpha)
        if i is not None:
            a = int(self.policy[t, s, i])
            u = self._u(t, s, i, a)
        elif alpha < grid[0]:
            a = int(self.policy[t, s, 0])
            u = self.xi[t, s, 0, a, :self.n_outcomes[s, a]] * alpha
        else:
            hi = int(np.searchsorted(grid, alpha))
            lo = hi - 1
            a_lo, a_hi = int(self.policy[t, s, lo]), int(self.policy[t, s, hi])
            a = a_lo
            if a_lo == a_hi:
                w = (alpha - grid[lo]) / (grid[hi] - grid[lo])
                u = (1.0 - w) * self._u(t, s, lo, a) + w * self._u(t, s, hi, a)
            else:
                u = self._u(t, s, lo, a)
        return a, np.clip(u, ALPHA_FLOOR, 1.0)

    def _u(self, t, s, i, a) -> np.ndarray:
        return self.xi[t, s, i, a, :self.n_outcomes[s, a]] * self.alpha_grid[i]

    def to_dict(self) -> dict:
        xi = np.where(np.isnan(self.xi), None, self.xi).tolist()
        return {"method": "precommitted", "alpha_grid": self.alpha_grid.tolist(),
                "values": self.values.tolist(), "policy": self.policy.tolist(),
                "xi_weights": xi, "hull_gap": self.hull_gap}


def solve_pcvar(mdp: FiniteHorizonMDP, alpha_grid=None, inner: str = "greedy") -> PCvarSolution:
    """Risk-augmented backward induction over ``alpha_grid`` (default 33-point geometric)."""
    check_valid(mdp)
    grid = default_alpha_grid() if alpha_grid is None else normalize_grid(alpha_grid)
    if inner not in ("greedy", "lp"):
        raise ValueError(f"unknown inner solver {inner!r}")
    T, S, A, M = mdp.horizon, mdp.n_states, mdp.n_actions, grid.size
    nodes = np.concatenate([[0.0], grid])
    lengths = np.diff(nodes)
    n_out = np.array([[len(mdp.transitions[s][a]) for a in range(A)] for s in range(S)], dtype=int)
    jmax = int(n_out.max())
    V = np.zeros((T + 1, S, M))
    Q = np.zeros((T, S, M, A))
    pol = np.zeros((T, S, M), dtype=int)
    xi = np.full((T, S, M, A, jmax), np.nan)
    hull_gap = 0.0
    for t in range(T - 1, -1, -1):
        w = np.concatenate([np.zeros((S, 1)), grid[None, :] * V[t + 1]], axis=1)
        seg = np.diff(w, axis=1) / lengths[None, :]
        for s2 in np.flatnonzero(np.any(np.diff(seg, axis=1) < 0, axis=1)):
            hull = lower_hull(nodes, w[s2])
            hull_gap = max(hull_gap, float(np.max(w[s2] - hull)))
            seg[s2] = np.diff(hull) / lengths
        for s in range(S):
            if mdp.terminal[s]:
                xi[t, s, :, :, 0] = 1.0
        pairs = [(s, a) for s in range(S) if not mdp.terminal[s] for a in range(A)]
        if not pairs:
            continue
        probs = np.zeros((len(pairs), jmax))
        slopes = np.zeros((len(pairs), jmax, M))
        for i, (s, a) in enumerate(pairs):
            for j, o in enumerate(mdp.transitions[s][a]):
                probs[i, j] = o.prob
                slopes[i, j] = o.reward + mdp.gamma * seg[o.next_state]
        if inner == "greedy":
            obj, u = inner_greedy(probs, slopes, lengths, grid)
        else:
            obj = np.empty((len(pairs), M))
            u = np.zeros((len(pairs), M, jmax))
            for i, (s, a) in enumerate(pairs):
                J = n_out[s, a]
                for m in range(M):
                    obj[i, m], u[i, m, :J] = inner_lp(probs[i, :J], slopes[i, :J], nodes, grid[m])
        for i, (s, a) in enumerate(pairs):
            J = n_out[s, a]
            Q[t, s, :, a] = obj[i] / grid
            xi[t, s, :, a, :J] = u[i, :, :J] / grid[:, None]
        live = np.array([not mdp.terminal[s] for s in range(S)])
        pol[t, live] = argmax_lowest_nd(Q[t, live])
        V[t, live] = np.take_along_axis(Q[t, live], pol[t, live][..., None], axis=-1)[..., 0]
    return PCvarSolution(grid, mdp.gamma, V, Q, pol, xi, n_out, hull_gap, mdp.x0)


def pcvar_rollout(mdp: FiniteHorizonMDP, solution: PCvarSolution, alpha0: float, seed: int,
                  start: int | None = None, start_stage: int = 0):
    """Sample a trajectory of the augmented policy; ``alpha_trace`` holds the tracked levels."""
    alpha0 = check_alpha(alpha0)
    if alpha0 < solution.alpha_grid[0]:
        raise GridError(f"alpha0={alpha0} below the grid (min {solution.alpha_grid[0]}); extend the grid")

    def decide(t, s, alpha):
        a, nxt = solution.decide(t, s, alpha)
        return a, lambda k: float(nxt[k])

    return rollout(mdp, decide, seed, start=start, start_stage=start_stage, state_info=alpha0)
