import numpy as np
import pytest

from seqcvar.envs import (HazardChainConfig, RewardChainConfig, make_hazard_chain, make_reward_chain,
                          pcvar_alpha_sequence)
from seqcvar.mdp import argmax_set, expected_value_dp, random_mdp, return_distribution_exact
from seqcvar.riskdist import cvar_tail
from seqcvar.solvers import (GridError, consistency_probe, default_alpha_grid, inner_greedy,
                             inner_lp, pcvar_rollout, solve_fcvar, solve_ncvar, solve_pcvar)
from seqcvar.solvers.precommitted import lower_hull, normalize_grid

HAZARD = make_hazard_chain(HazardChainConfig(3, 0.05))


def random_instances(n, **kw):
    return [random_mdp(seed, **kw) for seed in range(n)]


def assert_same_argmax_sets(q1, q2, tol=1e-9):
    for a, b in zip(q1.reshape(-1, q1.shape[-1]), q2.reshape(-1, q2.shape[-1])):
        assert argmax_set(a, tol) == argmax_set(b, tol)


class TestAlphaOne:
    @pytest.mark.parametrize("m", random_instances(15, horizon=3, gamma=0.9), ids=lambda m: "")
    def test_all_solvers_equal_expected_value(self, m):
        V, _, Q = expected_value_dp(m)
        n = solve_ncvar(m, 1.0)
        f = solve_fcvar(m, 1.0)
        p = solve_pcvar(m)
        assert np.max(np.abs(n.values - V)) < 1e-9
        assert np.max(np.abs(f.cvar_values - V)) < 1e-9
        assert np.max(np.abs(p.values[:, :, -1] - V)) < 1e-9
        live = ~np.array(m.terminal)
        assert_same_argmax_sets(n.q_values[:, live], Q[:, live])
        assert_same_argmax_sets(f.q_values[:, live], Q[:, live])
        assert_same_argmax_sets(p.q_values[:, live, -1], Q[:, live])


class TestNested:
    def test_hazard_one_step(self):
        m = make_hazard_chain(HazardChainConfig(1, 0.05))
        assert abs(solve_ncvar(m, 0.1).values[0, 0] - 0.5) < 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_monotone_in_alpha(self, seed):
        m = random_mdp(seed, horizon=3)
        levels = [0.05, 0.1, 0.2, 0.4, 0.7, 1.0]
        vals = np.stack([solve_ncvar(m, a).values for a in levels])
        assert np.all(np.diff(vals, axis=0) >= -1e-12)

    def test_terminal_values_zero(self):
        sol = solve_ncvar(HAZARD, 0.3)
        assert np.all(sol.values[:, [3, 4]] == 0.0)
        assert np.all(sol.values[-1] == 0.0)


class TestFixed:
    @pytest.mark.parametrize("seed", range(10))
    def test_value_is_cvar_of_policy_return(self, seed):
        m = random_mdp(seed, horizon=3)
        sol = solve_fcvar(m, 0.25)
        for t in range(m.horizon):
            for s in range(m.n_states):
                d = sol.return_dists[t][s]
                assert sol.cvar_values[t, s] == cvar_tail(d, 0.25)
                exact = return_distribution_exact(m, sol.policy, s, from_stage=t)
                assert abs(cvar_tail(exact, 0.25) - sol.cvar_values[t, s]) < 1e-10
                assert d.allclose(exact, atol=1e-10)

    def test_reward_chain_increasing(self):
        m = make_reward_chain(RewardChainConfig(n_states=4))
        sol = solve_fcvar(m, 0.11)
        starts = [sol.cvar_values[0, 4 - d] for d in range(1, 5)]
        assert all(b > a for a, b in zip(starts, starts[1:]))


class TestPrecommittedGrid:
    def test_default_grid(self):
        g = default_alpha_grid()
        assert g.size == 33 and g[0] == pytest.approx(0.01) and g[-1] == 1.0
        assert np.allclose(np.diff(np.log(g)), np.log(100) / 32)

    def test_requested_levels_inserted_exactly(self):
        g = default_alpha_grid([0.3, 0.11])
        assert 0.3 in g and 0.11 in g and np.all(np.diff(g) > 0)

    def test_grid_must_contain_one(self):
        with pytest.raises(GridError):
            normalize_grid([0.1, 0.5])

    def test_alpha_below_grid(self):
        sol = solve_pcvar(HAZARD, [0.1, 1.0])
        with pytest.raises(GridError, match="extend the grid"):
            sol.start_value(0.05)
        with pytest.raises(GridError):
            pcvar_rollout(HAZARD, sol, 0.05, seed=0)

    def test_lower_hull_is_convex_minorant(self):
        x = np.array([0.0, 0.25, 0.5, 1.0])
        w = np.array([0.0, 0.5, -0.1, 0.2])
        h = lower_hull(x, w)
        assert np.all(h <= w + 1e-15)
        slopes = np.diff(h) / np.diff(x)
        assert np.all(np.diff(slopes) >= -1e-12)


class TestPrecommittedSolution:
    @pytest.mark.parametrize("seed", range(8))
    def test_xi_feasible(self, seed):
        m = random_mdp(seed, horizon=3)
        sol = solve_pcvar(m)
        g = sol.alpha_grid
        for t in range(m.horizon):
            for s in range(m.n_states):
                if m.terminal[s]:
                    continue
                for a in range(m.n_actions):
                    p = np.array([o.prob for o in m.transitions[s][a]])
                    xi = sol.xi[t, s, :, a, :p.size]
                    assert np.all(xi >= -1e-12)
                    assert np.all(xi <= 1.0 / g[:, None] + 1e-9)
                    assert np.max(np.abs(xi @ p - 1.0)) < 1e-9

    @pytest.mark.parametrize("seed", range(8))
    def test_shape_in_alpha(self, seed):
        m = random_mdp(seed, horizon=3)
        sol = solve_pcvar(m)
        g = np.concatenate([[0.0], sol.alpha_grid])
        for t in range(m.horizon + 1):
            for s in range(m.n_states):
                v = sol.values[t, s]
                assert np.all(np.diff(v) >= -1e-9)
                w = np.concatenate([[0.0], sol.alpha_grid * v])
                slopes = np.diff(w) / np.diff(g)
                assert np.all(np.diff(slopes) >= -1e-9), (t, s)

    def test_scaled_value_monotone_for_nonnegative_rewards(self):
        sol = solve_pcvar(HAZARD)
        yv = sol.alpha_grid * sol.values
        assert np.all(np.diff(yv, axis=-1) >= -1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_at_least_nested(self, seed):
        m = random_mdp(seed, horizon=3)
        sol = solve_pcvar(m, default_alpha_grid([0.11, 0.3]))
        for a in (0.11, 0.3):
            nested = solve_ncvar(m, a).values[0]
            pre = np.array([sol.value(0, s, a) for s in range(m.n_states)])
            assert np.all(pre >= nested - 1e-9), (pre, nested)

    @pytest.mark.parametrize("seed", range(6))
    def test_greedy_matches_lp(self, seed):
        m = random_mdp(seed, horizon=2)
        grid = default_alpha_grid(n=9)
        greedy = solve_pcvar(m, grid, inner="greedy")
        lp = solve_pcvar(m, grid, inner="lp")
        assert np.max(np.abs(greedy.values - lp.values)) < 1e-12

    def test_inner_greedy_two_outcomes_closed_form(self):
        # death pays 0 everywhere, survival pays 1: mass lam goes to death first
        lam, y = 0.05, 0.3
        nodes = np.array([0.0, 0.5, 1.0])
        probs = np.array([[lam, 1 - lam]])
        slopes = np.array([[[0.0, 0.0], [1.0, 1.0]]])
        obj, u = inner_greedy(probs, slopes, np.diff(nodes), np.array([y]))
        assert abs(obj[0, 0] / y - (1 - lam / y)) < 1e-12
        assert abs(u[0, 0, 0] - 1.0) < 1e-12
        assert abs(u[0, 0, 1] - (y - lam) / (1 - lam)) < 1e-12
        lp_obj, lp_u = inner_lp(probs[0], slopes[0], nodes, y)
        assert abs(lp_obj - obj[0, 0]) < 1e-12

    def test_hazard_start_value(self):
        sol = solve_pcvar(HAZARD, default_alpha_grid([0.3]))
        seq = pcvar_alpha_sequence(0.3, 0.05, 3)
        assert abs(sol.start_value(0.3) - np.prod([1 - 0.05 / a for a in seq])) < 1e-9


class TestPrecommittedRollout:
    def surviving(self, sol):
        for seed in range(200):
            tr = pcvar_rollout(HAZARD, sol, 0.3, seed)
            if tr.states[-1] == 3:
                return tr
        raise AssertionError("no surviving rollout")

    def test_hazard_trace(self):
        sol = solve_pcvar(HAZARD, default_alpha_grid([0.3]))
        tr = self.surviving(sol)
        assert np.allclose(tr.alpha_trace, pcvar_alpha_sequence(0.3, 0.05, 3), atol=1e-6)
        assert np.allclose(tr.alpha_trace, [0.3, 0.2632, 0.2244], atol=5e-5)

    def test_risk_neutral_trace_constant(self):
        sol = solve_pcvar(HAZARD)
        for seed in range(20):
            assert all(a == 1.0 for a in pcvar_rollout(HAZARD, sol, 1.0, seed).alpha_trace)

    @pytest.mark.parametrize("seed", range(5))
    def test_alpha_stays_in_unit_interval(self, seed):
        m = random_mdp(seed, horizon=5, n_states=6)
        sol = solve_pcvar(m, default_alpha_grid([0.2]))
        for r in range(50):
            tr = pcvar_rollout(m, sol, 0.2, r)
            assert all(0.0 < a <= 1.0 for a in tr.alpha_trace)


class TestConsistency:
    @pytest.mark.parametrize("seed", range(5))
    def test_nested_never_diverges(self, seed):
        m = random_mdp(seed, horizon=3)
        assert consistency_probe(m, "nested", 0.2, range(30)).n_divergences == 0

    @pytest.mark.parametrize("mdp", [HAZARD, make_reward_chain(RewardChainConfig())], ids=["hazard", "reward"])
    def test_precommitted_never_diverges(self, mdp):
        rep = consistency_probe(mdp, "precommitted", 0.3, range(50))
        assert rep.n_checked > 0 and rep.n_divergences == 0

    def test_fixed_diverges_somewhere(self):
        total = sum(consistency_probe(random_mdp(seed, horizon=3), "fixed", 0.3, range(5)).n_divergences
                    for seed in range(100))
        assert total >= 1

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            consistency_probe(HAZARD, "median", 0.3, [0])
