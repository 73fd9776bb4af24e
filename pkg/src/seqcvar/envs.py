"""The three stylised environments and their closed-form references.

Chain environments put the chain state ``i`` at distance ``n - i`` from the
end; :func:`chain_start` maps a distance back to the state index so that
``V_0(chain_start(n, d))`` is the value ``d`` steps from the end.
The gridworld geometry is a reconstruction: only its qualitative layout
(start bottom-left, goal on the right, lava along the bottom row) is known.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .mdp import FiniteHorizonMDP
from .riskdist import DiscreteDistribution, DomainError, check_alpha

UP, DOWN, LEFT, RIGHT = range(4)
ACTION_NAMES = ("up", "down", "left", "right")
_MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}
_PERPENDICULAR = {UP: (LEFT, RIGHT), DOWN: (LEFT, RIGHT), LEFT: (UP, DOWN), RIGHT: (UP, DOWN)}


@dataclass(frozen=True)
class GridworldConfig:
    width: int = 10
    height: int = 7
    start: tuple = (0, 0)
    goal: tuple = (9, 0)
    lava: tuple = tuple((x, 0) for x in range(1, 9))
    slip: float = 0.05
    gamma: float = 0.95
    horizon: int = 40
    slip_model: str = "perpendicular"

    @classmethod
    def from_dict(cls, d: dict) -> "GridworldConfig":
        d = dict(d)
        for key in ("start", "goal"):
            if key in d:
                d[key] = tuple(d[key])
        if "lava" in d:
            d["lava"] = tuple(tuple(c) for c in d["lava"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"], d["goal"] = list(self.start), list(self.goal)
        d["lava"] = [list(c) for c in self.lava]
        return d


@dataclass(frozen=True)
class Gridworld:
    config: GridworldConfig
    mdp: FiniteHorizonMDP
    cells: tuple  # state index -> (x, y); terminal sinks map to None

    def state(self, cell) -> int:
        return self.cells.index(tuple(cell))

    @property
    def goal_state(self) -> int:
        return self.state(self.config.goal)


SLIP_MODELS = ("perpendicular", "uniform")

# Layout used by the navigation experiment. Slips may point back towards the
# lava, so the danger of a row decays geometrically with its height; with
# perpendicular slips any cell two rows up is already safe and no risk level
# has a reason to climb further.
NAVIGATION_CONFIG = GridworldConfig(
    height=4, lava=tuple((x, 0) for x in range(2, 8)), slip=0.01, slip_model="uniform")


def _slip_branches(action: int, slip: float, model: str):
    if model == "perpendicular":
        return [(action, 1.0 - 2.0 * slip)] + [(b, slip) for b in _PERPENDICULAR[action]]
    return [(action, 1.0 - 3.0 * slip)] + [(b, slip) for b in range(4) if b != action]


def make_gridworld(config: GridworldConfig = GridworldConfig()) -> Gridworld:
    """Four-action slippery gridworld.

    With ``slip_model="perpendicular"`` the intended move happens with
    probability ``1 - 2 slip`` and each perpendicular move with probability
    ``slip``. With ``"uniform"`` each of the three unintended moves has
    probability ``slip``. Moves off the grid stay put. Entering the goal pays +1
    and entering lava pays -1, both followed by absorption. Goal and lava cells
    are terminal states in their own right.
    """
    c = config
    if c.width < 1 or c.height < 1:
        raise DomainError("gridworld needs positive width and height")
    if c.slip_model not in SLIP_MODELS:
        raise DomainError(f"slip_model must be one of {SLIP_MODELS}, got {c.slip_model!r}")
    n_slips = 2 if c.slip_model == "perpendicular" else 3
    if not (0.0 <= c.slip and n_slips * c.slip < 1.0):
        raise DomainError(f"slip must lie in [0, {1 / n_slips:.4g}), got {c.slip}")
    cells_in = lambda p: 0 <= p[0] < c.width and 0 <= p[1] < c.height
    lava = set(map(tuple, c.lava))
    for name, cell in (("start", c.start), ("goal", c.goal)):
        if not cells_in(cell):
            raise DomainError(f"{name} cell {cell} outside the grid")
    if not all(cells_in(p) for p in lava):
        raise DomainError("lava cell outside the grid")
    if tuple(c.start) == tuple(c.goal) or tuple(c.start) in lava or tuple(c.goal) in lava:
        raise DomainError("start, goal and lava cells must be disjoint")

    cells = tuple((x, y) for y in range(c.height) for x in range(c.width))
    index = {cell: i for i, cell in enumerate(cells)}
    goal = tuple(c.goal)
    terminal = [index[goal]] + sorted(index[p] for p in lava)
    triples = []
    for cell in cells:
        s = index[cell]
        if cell == goal or cell in lava:
            continue
        for a in range(4):
            for move, p in _slip_branches(a, c.slip, c.slip_model):
                if p == 0.0:
                    continue
                dx, dy = _MOVES[move]
                nxt = (cell[0] + dx, cell[1] + dy)
                if not cells_in(nxt):
                    nxt = cell
                r = 1.0 if nxt == goal else (-1.0 if nxt in lava else 0.0)
                triples.append((s, a, index[nxt], p, r))
    mdp = FiniteHorizonMDP.from_triples(len(cells), 4, c.horizon, c.gamma, triples, terminal,
                                        x0=index[tuple(c.start)], labels=cells)
    return Gridworld(c, mdp, cells)


@dataclass(frozen=True)
class HazardChainConfig:
    n_states: int = 3
    hazard: float = 0.05
    reward: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.hazard < 1.0):
            raise DomainError(f"hazard must lie in (0, 1), got {self.hazard}")
        if self.n_states < 0:
            raise DomainError("n_states must be non-negative")


def make_hazard_chain(config: HazardChainConfig = HazardChainConfig()) -> FiniteHorizonMDP:
    """Chain ``0 .. n-1``, goal ``n``, death ``n+1``; survive w.p. ``1 - hazard`` each step.

    The last advance pays ``reward``; the solver discount is 1.
    """
    n, lam = config.n_states, config.hazard
    goal, death = n, n + 1
    triples = []
    for i in range(n):
        nxt = i + 1
        r = config.reward if nxt == goal else 0.0
        triples.append((i, 0, nxt, 1.0 - lam, r))
        triples.append((i, 0, death, lam, 0.0))
    return FiniteHorizonMDP.from_triples(n + 2, 1, n, 1.0, triples, terminal=(goal, death), x0=0)


@dataclass(frozen=True)
class RewardChainConfig:
    n_states: int = 4
    loss: float = -1.0
    gain: float = 1.0
    loss_prob: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.loss_prob < 1.0):
            raise DomainError(f"loss probability must lie in (0, 1), got {self.loss_prob}")
        if self.n_states < 0:
            raise DomainError("n_states must be non-negative")

    def stage_distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution([(self.loss, self.loss_prob), (self.gain, 1.0 - self.loss_prob)])


def make_reward_chain(config: RewardChainConfig = RewardChainConfig()) -> FiniteHorizonMDP:
    """Evaluation-only chain: each step pays ``gain`` or ``loss`` independently."""
    n = config.n_states
    triples = []
    for i in range(n):
        triples.append((i, 0, i + 1, 1.0 - config.loss_prob, config.gain))
        triples.append((i, 0, i + 1, config.loss_prob, config.loss))
    return FiniteHorizonMDP.from_triples(n + 1, 1, n, 1.0, triples, terminal=(n,), x0=0)


def chain_start(n_states: int, distance: int) -> int:
    if not (0 <= distance <= n_states):
        raise DomainError(f"distance {distance} outside 0..{n_states}")
    return n_states - distance


def implied_gamma(alpha: float, hazard: float) -> float:
    """Per-step discount equivalent to nested CVaR on a constant-hazard chain."""
    alpha = check_alpha(alpha)
    return max(0.0, 1.0 - hazard / alpha)


def pcvar_alpha_sequence(alpha0: float, hazard: float, n_steps: int) -> list[float]:
    """Risk levels along the surviving branch of the precommitted hazard-chain policy.

    All of the mass the death outcome can absorb (``hazard``) goes to it, the
    remainder to survival: ``alpha' = (alpha - hazard) / (1 - hazard)``. Stops
    early once ``alpha <= hazard`` (the tail then holds only death).
    """
    alpha = check_alpha(alpha0)
    seq = []
    for _ in range(n_steps):
        seq.append(alpha)
        if alpha <= hazard:
            break
        xi_survive = (1.0 - hazard / alpha) / (1.0 - hazard)
        alpha = alpha * xi_survive
    return seq
