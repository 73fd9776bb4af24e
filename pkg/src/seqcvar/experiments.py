"""Experiment runners writing CSV/JSON data files, and the verification suite.

Every runner takes a resolved :class:`ExperimentConfig`, writes its files
atomically into ``config.out`` and finishes with ``manifest.json``. Identical
configs and seeds give byte-identical files: floats are written with ``repr``,
JSON keys are sorted and nothing time-dependent is recorded.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, solvers
from .envs import (ACTION_NAMES, NAVIGATION_CONFIG, GridworldConfig, HazardChainConfig,
                   RewardChainConfig, chain_start, implied_gamma, make_gridworld, make_hazard_chain,
                   make_reward_chain, pcvar_alpha_sequence)
from .mdp import (expected_value_dp, first_visit_frequencies, random_mdp, return_distribution_exact,
                  rollout)
from .oracle import enumerate_returns, ncvar_reference, pcvar_policy_check
from .riskdist import DiscreteDistribution, DomainError, convolve_iid, cvar_sup, cvar_tail

EXPERIMENTS = ("navigation", "chain-stages", "risk-discounting", "verify")
METHODS = ("fixed", "precommitted", "nested")
MAX_SEED = 2**64 - 1


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` holds one message per field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_DEFAULTS = {
    "navigation": dict(env=NAVIGATION_CONFIG.to_dict(), alphas=[0.02, 0.11, 0.5],
                       methods=list(METHODS), n_rollouts=500, seed=None),
    "chain-stages": dict(env=asdict(RewardChainConfig()), alphas=[0.05, 0.11, 0.15, 0.2, 0.3, 1.0],
                         methods=["fixed", "nested"], n_rollouts=0, seed=0),
    "risk-discounting": dict(env=asdict(HazardChainConfig()), alphas=[0.06, 0.1, 0.2, 0.3, 0.5, 1.0],
                             methods=list(METHODS), n_rollouts=0, seed=0,
                             gammas=[0.5, 0.8, 0.9, 0.95]),
    "verify": dict(env={"n_cvar": 1000, "n_nested": 200, "n_precommitted": 100, "n_fixed": 100},
                   alphas=[0.11, 0.3], methods=list(METHODS), n_rollouts=0, seed=0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    env: dict
    alphas: tuple
    methods: tuple
    n_rollouts: int
    seed: int | None
    out: str
    grid_size: int = solvers.precommitted.DEFAULT_GRID_SIZE
    gammas: tuple = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"], d["methods"], d["gammas"] = list(self.alphas), list(self.methods), list(self.gammas)
        return d


def resolve_config(experiment: str, file_config: dict | None = None, overrides: dict | None = None
                   ) -> ExperimentConfig:
    """Defaults, then the config file, then CLI overrides (``None`` values are ignored)."""
    if experiment not in EXPERIMENTS:
        raise ConfigError([f"experiment: unknown id {experiment!r}; expected one of {EXPERIMENTS}"])
    merged = dict(_DEFAULTS[experiment], out=f"results/{experiment}", experiment=experiment)
    errors = []
    known = {f.name for f in fields(ExperimentConfig)}
    for layer in (file_config or {}, overrides or {}):
        for key, value in layer.items():
            if value is None:
                continue
            if key not in known:
                errors.append(f"{key}: unknown field")
            elif key == "env":
                merged["env"] = dict(merged["env"], **value) if isinstance(value, dict) else value
            else:
                merged[key] = value
    if merged["experiment"] != experiment:
        errors.append(f"experiment: config is for {merged['experiment']!r}, not {experiment!r}")
    errors += _field_errors(merged)
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(
        experiment=experiment, env=merged["env"],
        alphas=tuple(float(a) for a in merged["alphas"]), methods=tuple(merged["methods"]),
        n_rollouts=int(merged["n_rollouts"]),
        seed=None if merged["seed"] is None else int(merged["seed"]), out=str(merged["out"]),
        grid_size=int(merged.get("grid_size", solvers.precommitted.DEFAULT_GRID_SIZE)),
        gammas=tuple(float(g) for g in merged.get("gammas", ())))
    build_environment(cfg)
    return cfg


def _field_errors(d: dict) -> list[str]:
    errors = []
    alphas = d.get("alphas")
    if not isinstance(alphas, (list, tuple)) or not alphas:
        errors.append("alphas: must be a non-empty list")
    else:
        for a in alphas:
            if isinstance(a, bool) or not isinstance(a, (int, float)) or not (0.0 < a <= 1.0):
                errors.append(f"alphas: {a!r} is not in (0, 1]")
    methods = d.get("methods")
    if not isinstance(methods, (list, tuple)) or not methods:
        errors.append("methods: must be a non-empty list")
    else:
        for m in methods:
            if m not in METHODS:
                errors.append(f"methods: unknown method {m!r}; expected a subset of {METHODS}")
    n = d.get("n_rollouts")
    if isinstance(n, bool) or not isinstance(n, int) or n < 0:
        errors.append(f"n_rollouts: {n!r} is not a non-negative integer")
    elif d["experiment"] == "navigation" and n < 1:
        errors.append("n_rollouts: navigation needs at least one rollout")
    seed = d.get("seed")
    if seed is None:
        if d["experiment"] == "navigation":
            errors.append("seed: required for navigation (pass --seed)")
    elif isinstance(seed, bool) or not isinstance(seed, int) or not (0 <= seed <= MAX_SEED):
        errors.append(f"seed: {seed!r} is not an unsigned 64-bit integer")
    g = d.get("grid_size", 2)
    if isinstance(g, bool) or not isinstance(g, int) or g < 2:
        errors.append(f"grid_size: {g!r} must be an integer >= 2")
    for gamma in d.get("gammas", ()):
        if not isinstance(gamma, (int, float)) or not (0.0 < gamma <= 1.0):
            errors.append(f"gammas: {gamma!r} is not in (0, 1]")
    if not isinstance(d.get("env"), dict):
        errors.append("env: must be an object")
    if not isinstance(d.get("out"), str) or not d.get("out"):
        errors.append("out: must be a non-empty path")
    return errors


def build_environment(cfg: ExperimentConfig):
    """Environment object for the config: a Gridworld or an MDP (``None`` for verify)."""
    try:
        if cfg.experiment == "navigation":
            return make_gridworld(GridworldConfig.from_dict(cfg.env))
        if cfg.experiment == "chain-stages":
            return make_reward_chain(RewardChainConfig(**cfg.env))
        if cfg.experiment == "risk-discounting":
            return make_hazard_chain(HazardChainConfig(**cfg.env))
    except TypeError as exc:
        raise ConfigError([f"env: {exc}"]) from exc
    except DomainError as exc:
        raise ConfigError([f"env: {exc}"]) from exc
    unknown = set(cfg.env) - set(_DEFAULTS["verify"]["env"])
    if unknown:
        raise ConfigError([f"env: unknown verify parameter {k!r}" for k in sorted(unknown)])
    return None


# --- output plumbing -------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


class _Writer:
    def __init__(self, out: str):
        self.root = Path(out)
        self.files = []

    def csv(self, name, header, rows):
        self._write(name, csv_text(header, rows))

    def json(self, name, obj):
        self._write(name, json_text(obj))

    def _write(self, name, text):
        atomic_write(self.root / name, text)
        self.files.append(name)

    def manifest(self, cfg: ExperimentConfig, extra: dict | None = None):
        body = {"engine": "seqcvar", "version": __version__, "config": cfg.to_dict(),
                "files": sorted(self.files)}
        body.update(extra or {})
        atomic_write(self.root / "manifest.json", json_text(body))


def alpha_tag(alpha: float) -> str:
    return f"a{alpha:g}"


# --- solving ---------------------------------------------------------------

def pcvar_grid(alphas, grid_size: int = solvers.precommitted.DEFAULT_GRID_SIZE) -> np.ndarray:
    return solvers.default_alpha_grid(alphas, n=grid_size)


def solve(mdp, method: str, alpha: float, grid=None):
    if method == "nested":
        return solvers.solve_ncvar(mdp, alpha)
    if method == "fixed":
        return solvers.solve_fcvar(mdp, alpha)
    if method == "precommitted":
        return solvers.solve_pcvar(mdp, pcvar_grid([alpha]) if grid is None else grid)
    raise ValueError(f"unknown method {method!r}")


def stage_values(solution, method: str, alpha: float, t: int = 0) -> np.ndarray:
    """Values of every state at stage ``t`` (risk level ``alpha`` for precommitted)."""
    if method == "nested":
        return np.asarray(solution.values[t])
    if method == "fixed":
        return np.asarray(solution.cvar_values[t])
    n_states = solution.values.shape[1]
    return np.array([solution.value(t, s, alpha) for s in range(n_states)])


def decide_fn(solution, method: str):
    """``decide(t, s, info)`` in the form :func:`seqcvar.mdp.rollout` expects."""
    if method == "precommitted":
        def decide(t, s, alpha):
            a, nxt = solution.decide(t, s, alpha)
            return a, lambda k: float(nxt[k])
        return decide
    return lambda t, s, _: (solution.policy(t, s), None)


def modal_path(mdp, decide, info=None) -> list[int]:
    """States visited when every transition takes its most probable outcome."""
    s, path = mdp.x0, [mdp.x0]
    for t in range(mdp.horizon):
        if mdp.terminal[s]:
            break
        a, update = decide(t, s, info)
        row = mdp.transitions[s][a]
        k = max(range(len(row)), key=lambda i: (row[i].prob, -i))
        info = update(k) if update is not None else None
        s = row[k].next_state
        path.append(s)
    return path


def path_stats(world, path) -> dict:
    """Minimum Manhattan distance to lava over the non-terminal cells of ``path``,
    the maximum height reached, and whether the path ends in the goal."""
    lava = world.config.lava
    cells = [world.cells[s] for s in path]
    open_cells = [c for s, c in zip(path, cells) if not world.mdp.terminal[s]]
    dist = None
    if lava and open_cells:
        dist = min(abs(x - lx) + abs(y - ly) for x, y in open_cells for lx, ly in lava)
    return {"min_lava_distance": dist, "max_height": max(y for _, y in cells),
            "reached_goal": path[-1] == world.goal_state}


# --- navigation --------------------------------------------------------------

def run_navigation(cfg: ExperimentConfig, dump_dir: str | None = None) -> dict:
    world = build_environment(cfg)
    mdp = world.mdp
    out = _Writer(cfg.out)
    grid = pcvar_grid(cfg.alphas, cfg.grid_size)
    pc = solvers.solve_pcvar(mdp, grid) if "precommitted" in cfg.methods else None
    kinds = {tuple(world.config.start): "start", tuple(world.config.goal): "goal"}
    kinds.update({tuple(c): "lava" for c in world.config.lava})
    summary = {}
    for method in cfg.methods:
        summary[method] = {}
        for alpha in cfg.alphas:
            sol = pc if method == "precommitted" else solve(mdp, method, alpha)
            tag = f"{method}_{alpha_tag(alpha)}"
            values = stage_values(sol, method, alpha)
            out.csv(f"values_{tag}.csv", ["x", "y", "kind", "value"],
                    [(x, y, kinds.get((x, y), "floor"), float(values[s]))
                     for s, (x, y) in enumerate(world.cells)])
            decide = decide_fn(sol, method)
            info = alpha if method == "precommitted" else None
            trajs = [rollout(mdp, decide, cfg.seed + i, state_info=info) for i in range(cfg.n_rollouts)]
            out.csv(f"frequencies_{tag}.csv", ["x", "y", "action", "frequency"],
                    _frequency_rows(world, trajs))
            success = [tr for tr in trajs if tr.steps and tr.steps[-1].next_state == world.goal_state]
            entry = {"start_value": float(values[mdp.x0]),
                     "success_rate": len(success) / len(trajs),
                     **path_stats(world, modal_path(mdp, decide, info))}
            if method == "precommitted":
                out.csv(f"median_alpha_{alpha_tag(alpha)}.csv", ["x", "y", "median_alpha_t", "visits"],
                        _median_alpha_rows(world, success))
                entry["median_alpha_last_quarter"] = last_quarter_median(success)
            summary[method][f"{alpha:g}"] = entry
            if dump_dir is not None:
                atomic_write(Path(dump_dir) / f"solution_{tag}.json", json_text(sol.to_dict()))
    out.json("summary.json", summary)
    out.manifest(cfg)
    return summary


def _frequency_rows(world, trajs):
    freqs = first_visit_frequencies(trajs)
    rows = []
    for s, acts in freqs.items():
        x, y = world.cells[s]
        rows += [(x, y, ACTION_NAMES[a], f) for a, f in acts.items()]
    return rows


def _median_alpha_rows(world, trajs):
    by_state = {}
    for tr in trajs:
        for st, a in zip(tr.steps, tr.alpha_trace):
            by_state.setdefault(st.state, []).append(a)
    rows = []
    for s in sorted(by_state):
        x, y = world.cells[s]
        rows.append((x, y, float(np.median(by_state[s])), len(by_state[s])))
    return rows


def last_quarter_median(trajs) -> float | None:
    """Median tracked level over the final quarter of each trajectory, pooled."""
    pooled = []
    for tr in trajs:
        n = len(tr.alpha_trace)
        pooled += tr.alpha_trace[(3 * n) // 4:]
    return float(np.median(pooled)) if pooled else None


# --- chain stages ------------------------------------------------------------

def chain_stage_rows(cfg: ExperimentConfig) -> list[tuple]:
    chain = RewardChainConfig(**cfg.env)
    mdp = make_reward_chain(chain)
    stage = chain.stage_distribution()
    n = chain.n_states
    rows = []
    grid = pcvar_grid(cfg.alphas, cfg.grid_size)
    pc = solvers.solve_pcvar(mdp, grid) if "precommitted" in cfg.methods else None
    for method in cfg.methods:
        for alpha in cfg.alphas:
            sol = pc if method == "precommitted" else solve(mdp, method, alpha)
            values = stage_values(sol, method, alpha)
            for d in range(1, n + 1):
                v = float(values[chain_start(n, d)])
                if method == "nested":
                    ref = d * cvar_tail(stage, alpha)
                else:
                    ref = cvar_tail(convolve_iid(stage, d), alpha)
                rows.append((method, alpha, d, v, float(ref), int(v > 0.0)))
    return rows


def run_chain_stages(cfg: ExperimentConfig, dump_dir: str | None = None) -> list[tuple]:
    rows = chain_stage_rows(cfg)
    out = _Writer(cfg.out)
    out.csv("chain_stages.csv", ["method", "alpha", "distance", "value", "reference", "enter"], rows)
    if dump_dir is not None:
        _dump_all(cfg, make_reward_chain(RewardChainConfig(**cfg.env)), dump_dir)
    out.manifest(cfg)
    return rows


# --- risk as discounting -----------------------------------------------------

def hazard_reference(method: str, alpha: float, hazard: float, distance: int) -> float:
    if method == "nested":
        return implied_gamma(alpha, hazard) ** distance
    if method == "fixed":
        return max(0.0, 1.0 - (1.0 - (1.0 - hazard) ** distance) / alpha)
    seq = pcvar_alpha_sequence(alpha, hazard, distance)
    if len(seq) < distance or seq[-1] <= hazard:
        return 0.0
    return float(np.prod([1.0 - hazard / a for a in seq]))


def tracked_alpha_sequence(mdp, solution, alpha0: float) -> list[float]:
    """Risk levels along the surviving branch of the precommitted policy from ``x0``."""
    s, alpha, seq = mdp.x0, alpha0, []
    for t in range(mdp.horizon):
        if mdp.terminal[s]:
            break
        seq.append(alpha)
        a, nxt = solution.decide(t, s, alpha)
        row = mdp.transitions[s][a]
        k = next(i for i, o in enumerate(row) if o.next_state == s + 1)
        s, alpha = row[k].next_state, float(nxt[k])
    return seq


def run_risk_discounting(cfg: ExperimentConfig, dump_dir: str | None = None) -> dict:
    chain = HazardChainConfig(**cfg.env)
    mdp = make_hazard_chain(chain)
    n, lam = chain.n_states, chain.hazard
    grid = pcvar_grid(cfg.alphas, cfg.grid_size)
    pc = solvers.solve_pcvar(mdp, grid) if "precommitted" in cfg.methods else None
    rows = []
    for method in cfg.methods:
        for alpha in cfg.alphas:
            sol = pc if method == "precommitted" else solve(mdp, method, alpha)
            values = stage_values(sol, method, alpha)
            for d in range(1, n + 1):
                rows.append((method, alpha, d, float(values[chain_start(n, d)]),
                             hazard_reference(method, alpha, lam, d)))
    out = _Writer(cfg.out)
    out.csv("risk_discounting.csv", ["method", "alpha", "distance", "value", "reference"], rows)
    out.csv("reference_curves.csv", ["gamma", "distance", "value"],
            [(g, d, g ** d) for g in cfg.gammas for d in range(0, n + 1)])
    out.csv("implied_gamma.csv", ["alpha", "hazard", "implied_gamma"],
            [(a, lam, implied_gamma(a, lam)) for a in cfg.alphas])
    seq_rows = []
    if pc is not None:
        for alpha in cfg.alphas:
            tracked = tracked_alpha_sequence(mdp, pc, alpha)
            closed = pcvar_alpha_sequence(alpha, lam, n)
            for i, a in enumerate(tracked):
                c = closed[i] if i < len(closed) else ""
                seq_rows.append((alpha, i, a, c, max(0.0, 1.0 - lam / a)))
        out.csv("pcvar_sequence.csv", ["alpha0", "step", "alpha_t", "alpha_t_closed_form", "gamma_prime"],
                seq_rows)
    if dump_dir is not None:
        _dump_all(cfg, mdp, dump_dir)
    out.manifest(cfg)
    return {"values": rows, "sequences": seq_rows}


def _dump_all(cfg, mdp, dump_dir):
    for method in cfg.methods:
        for alpha in cfg.alphas:
            sol = solve(mdp, method, alpha, pcvar_grid([alpha], cfg.grid_size))
            atomic_write(Path(dump_dir) / f"solution_{method}_{alpha_tag(alpha)}.json",
                         json_text(sol.to_dict()))


def dump_solution(cfg: ExperimentConfig, method: str, alpha: float, path: str) -> None:
    env = build_environment(cfg)
    if env is None:
        raise ConfigError(["experiment: verify has no environment to solve"])
    mdp = getattr(env, "mdp", env)
    sol = solve(mdp, method, alpha, pcvar_grid([alpha], cfg.grid_size))
    atomic_write(Path(path), json_text(sol.to_dict()))


# --- verification suite --------------------------------------------------------

@dataclass
class Check:
    name: str
    tolerance: float
    error: float
    passed: bool
    gating: bool = True
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["error"] = None if not math.isfinite(self.error) else self.error
        return d


def _close(name, measured, tol, gating=True, **detail) -> Check:
    err = float(np.max(np.abs(measured))) if np.size(measured) else 0.0
    return Check(name, tol, err, bool(err <= tol), gating, detail)


def _random_distribution(rng) -> DiscreteDistribution:
    k = int(rng.integers(1, 9))
    values = np.round(rng.normal(size=k) * 3.0, int(rng.integers(0, 4)))
    probs = rng.dirichlet(np.ones(k))
    probs[-1] = 1.0 - probs[:-1].sum()
    return DiscreteDistribution(values=values, probs=probs)


def verify_checks(params: dict, seed: int = 0) -> list[Check]:
    checks = []
    rng = np.random.default_rng(seed)

    # CVaR primitive
    alphas = np.linspace(0.05, 1.0, 20)
    gaps, mean_gaps, mono = [], [], []
    for _ in range(params["n_cvar"]):
        d = _random_distribution(rng)
        tails = [cvar_tail(d, a) for a in alphas]
        gaps += [t - cvar_sup(d, a) for t, a in zip(tails, alphas)]
        mean_gaps.append(cvar_tail(d, 1.0) - d.mean())
        mono.append(max(0.0, float(np.max(-np.diff(tails)))))
    checks.append(_close("cvar_tail_vs_sup", gaps, 1e-12))
    checks.append(_close("cvar_alpha_one_is_mean", mean_gaps, 1e-12))
    checks.append(_close("cvar_monotone_in_alpha", mono, 1e-12))

    # hazard chain closed forms
    lam = 0.05
    hazard = make_hazard_chain(HazardChainConfig(3, lam))
    errs_n, errs_f = [], []
    for alpha in (0.06, 0.1, 0.2, 0.5, 1.0):
        vn = solvers.solve_ncvar(hazard, alpha).values[0]
        vf = solvers.solve_fcvar(hazard, alpha).cvar_values[0]
        for d in (1, 2, 3):
            s = chain_start(3, d)
            errs_n.append(vn[s] - hazard_reference("nested", alpha, lam, d))
            errs_f.append(vf[s] - hazard_reference("fixed", alpha, lam, d))
    checks.append(_close("hazard_nested_geometric", errs_n, 1e-9))
    checks.append(_close("hazard_fixed_closed_form", errs_f, 1e-9))
    pc = solvers.solve_pcvar(hazard, pcvar_grid([0.3]))
    tracked = tracked_alpha_sequence(hazard, pc, 0.3)
    checks.append(_close("hazard_precommitted_alpha_sequence",
                         np.subtract(tracked, pcvar_alpha_sequence(0.3, lam, 3)), 1e-6,
                         tracked=tracked))
    checks.append(_close("hazard_precommitted_value",
                         [pc.start_value(0.3) - hazard_reference("precommitted", 0.3, lam, 3),
                          pcvar_policy_check(hazard, pc, 0.3) - pc.start_value(0.3)], 1e-9))

    # reward chain
    errs_n, errs_f = [], []
    for alpha in (0.05, 0.11, 0.15, 0.3, 1.0):
        for n in (1, 2, 3, 4):
            m = make_reward_chain(RewardChainConfig(n_states=n))
            errs_n.append(solvers.solve_ncvar(m, alpha).values[0, 0] - n * max(-1.0, 1.0 - 0.2 / alpha))
            oracle = cvar_tail(enumerate_returns(m, lambda t, s: 0, 0), alpha)
            errs_f.append(solvers.solve_fcvar(m, alpha).cvar_values[0, 0] - oracle)
    checks.append(_close("reward_chain_nested_closed_form", errs_n, 1e-9))
    checks.append(_close("reward_chain_fixed_enumeration", errs_f, 1e-10))

    # solvers against brute force
    errs, agree = [], []
    for i in range(params["n_nested"]):
        m = random_mdp(seed + i, horizon=1 + i % 3)
        alpha = float(rng.choice([0.05, 0.11, 0.3, 0.6, 1.0]))
        sol = solvers.solve_ncvar(m, alpha)
        errs.append(sol.values[0, m.x0] - ncvar_reference(m, alpha, m.x0))
    checks.append(_close("nested_vs_tree_recursion", errs, 1e-10))

    for i in range(min(params["n_nested"], 50)):
        m = random_mdp(seed + i, horizon=3)
        v_ev = expected_value_dp(m)[0]
        agree.append(solvers.solve_ncvar(m, 1.0).values - v_ev)
        agree.append(solvers.solve_fcvar(m, 1.0).cvar_values - v_ev)
        agree.append(solvers.solve_pcvar(m).values[:, :, -1] - v_ev)
    checks.append(_close("solvers_agree_at_alpha_one", np.concatenate([a.ravel() for a in agree]), 1e-9))

    errs = []
    for i in range(min(params["n_fixed"], 50)):
        m = random_mdp(seed + i, horizon=3)
        sol = solvers.solve_fcvar(m, 0.3)
        errs.append(sol.cvar_values[0, m.x0]
                    - cvar_tail(return_distribution_exact(m, sol.policy, m.x0), 0.3))
    checks.append(_close("fixed_value_is_policy_cvar", errs, 1e-10))

    gaps = []
    for i in range(params["n_precommitted"]):
        m = random_mdp(seed + i, horizon=2)
        for alpha in (0.11, 0.3):
            sol = solvers.solve_pcvar(m, pcvar_grid([alpha]))
            gaps.append(sol.start_value(alpha) - pcvar_policy_check(m, sol, alpha))
    gaps = np.array(gaps)
    checks.append(_close("precommitted_vs_enumeration", gaps, 1e-3, gating=False,
                         exceed_fraction=float(np.mean(np.abs(gaps) > 1e-3))))
    checks.append(Check("precommitted_upper_bounds_policy", 1e-9, float(max(0.0, -gaps.min())),
                        bool(gaps.min() >= -1e-9)))

    # time consistency
    envs = {"hazard-chain": hazard, "reward-chain": make_reward_chain(RewardChainConfig())}
    for name, m in envs.items():
        for method in ("nested", "precommitted"):
            rep = solvers.consistency_probe(m, method, 0.3, range(seed, seed + 100))
            checks.append(Check(f"consistency_{method}_{name}", 0.0, float(rep.n_divergences),
                                rep.n_divergences == 0, detail={"checked": rep.n_checked}))
    found = 0
    for i in range(params["n_fixed"]):
        m = random_mdp(seed + i, horizon=3)
        found += solvers.consistency_probe(m, "fixed", 0.3, range(seed, seed + 5)).n_divergences
    checks.append(Check("consistency_fixed_diverges", 0.0, 0.0 if found else 1.0, found > 0,
                        detail={"divergences": found}))
    return checks


def run_verify(cfg: ExperimentConfig) -> dict:
    checks = verify_checks(cfg.env, seed=cfg.seed or 0)
    passed = all(c.passed for c in checks if c.gating)
    report = {"passed": passed, "checks": [c.to_dict() for c in checks]}
    out = _Writer(cfg.out)
    out.json("verify_report.json", report)
    out.manifest(cfg, {"passed": passed})
    return report
