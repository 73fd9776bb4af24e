import numpy as np
import pytest

from seqcvar.envs import HazardChainConfig, RewardChainConfig, make_hazard_chain, make_reward_chain
from seqcvar.mdp import FiniteHorizonMDP, expected_value_dp, random_mdp
from seqcvar.oracle import (BudgetExceeded, EnumerationBudget, enumerate_returns, ncvar_reference,
                            pcvar_policy_check, policy_return_distribution)
from seqcvar.riskdist import DiscreteDistribution, convolve_iid, cvar_tail
from seqcvar.solvers import GridError, default_alpha_grid, solve_ncvar, solve_pcvar

first_action = lambda t, s: 0


def reversed_outcomes(mdp: FiniteHorizonMDP) -> FiniteHorizonMDP:
    rows = tuple(tuple(tuple(reversed(row)) for row in acts) for acts in mdp.transitions)
    return mdp.replace(transitions=rows)


class TestEnumerateReturns:
    def test_reward_chain_matches_convolution(self):
        m = make_reward_chain(RewardChainConfig(n_states=3))
        d = enumerate_returns(m, first_action, 0)
        assert d.allclose(convolve_iid(RewardChainConfig().stage_distribution(), 3))

    def test_hazard_two(self):
        m = make_hazard_chain(HazardChainConfig(2, 0.05))
        d = enumerate_returns(m, first_action, 0)
        assert d.allclose(DiscreteDistribution([(0, 0.0975), (1, 0.9025)]))

    def test_deterministic_single_atom(self):
        m = FiniteHorizonMDP.from_triples(3, 1, 2, 1.0, [(0, 0, 1, 1.0, 0.5), (1, 0, 2, 1.0, 0.25)],
                                          terminal=(2,))
        assert enumerate_returns(m, first_action, 0).atoms == [(0.75, 1.0)]

    def test_budget(self):
        m = make_reward_chain(RewardChainConfig(n_states=4))
        with pytest.raises(BudgetExceeded):
            enumerate_returns(m, first_action, 0, EnumerationBudget(max_trajectories=10))
        with pytest.raises(BudgetExceeded):
            enumerate_returns(m, first_action, 0, EnumerationBudget(max_depth=2))
        with pytest.raises(ValueError):
            EnumerationBudget(max_trajectories=0)

    @pytest.mark.parametrize("seed", range(10))
    def test_alpha_one_is_expected_value(self, seed):
        m = random_mdp(seed, horizon=3, gamma=0.9)
        V, pol, _ = expected_value_dp(m)
        assert abs(cvar_tail(enumerate_returns(m, pol, m.x0), 1.0) - V[0, m.x0]) < 1e-10


class TestNcvarReference:
    def test_hazard_two(self):
        m = make_hazard_chain(HazardChainConfig(2, 0.05))
        assert abs(ncvar_reference(m, 0.1, 0) - 0.25) < 1e-12

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_solver(self, seed):
        m = random_mdp(seed, horizon=1 + seed % 3, n_states=2 + seed % 3, max_branching=2 + seed % 4)
        alpha = [0.03, 0.1, 0.25, 0.5, 0.8][seed % 5]
        assert abs(solve_ncvar(m, alpha).values[0, m.x0] - ncvar_reference(m, alpha, m.x0)) < 1e-10

    def test_alpha_one(self):
        m = random_mdp(3, horizon=3)
        assert abs(ncvar_reference(m, 1.0, m.x0) - expected_value_dp(m)[0][0, m.x0]) < 1e-12

    def test_depth_bound(self):
        with pytest.raises(BudgetExceeded):
            ncvar_reference(random_mdp(0, horizon=5), 0.5, 0)


class TestPcvarPolicyCheck:
    def test_hazard_chain(self):
        m = make_hazard_chain(HazardChainConfig(3, 0.05))
        sol = solve_pcvar(m, default_alpha_grid([0.3]))
        expected = np.prod([1 - 0.05 / a for a in (0.3, 0.25 / 0.95, (0.25 / 0.95 - 0.05) / 0.95)])
        assert abs(pcvar_policy_check(m, sol, 0.3) - expected) < 1e-9
        assert abs(sol.start_value(0.3) - expected) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_alpha_one(self, seed):
        m = random_mdp(seed, horizon=3)
        sol = solve_pcvar(m)
        assert abs(pcvar_policy_check(m, sol, 1.0) - expected_value_dp(m)[0][0, m.x0]) < 1e-10

    @pytest.mark.parametrize("seed", range(30))
    def test_solver_value_bounds_policy(self, seed):
        m = random_mdp(seed, horizon=2)
        sol = solve_pcvar(m, default_alpha_grid([0.11]))
        assert pcvar_policy_check(m, sol, 0.11) <= sol.start_value(0.11) + 1e-9

    def test_off_grid_rejected(self):
        m = make_hazard_chain()
        sol = solve_pcvar(m)
        with pytest.raises(GridError):
            policy_return_distribution(m, sol, 0.123)


class TestOrderInvariance:
    @pytest.mark.parametrize("seed", range(10))
    def test_permuted_successors(self, seed):
        m = random_mdp(seed, horizon=3, max_branching=4)
        r = reversed_outcomes(m)
        assert abs(ncvar_reference(m, 0.2, 0) - ncvar_reference(r, 0.2, 0)) < 1e-12
        pol = expected_value_dp(m)[1]
        assert enumerate_returns(m, pol, 0).allclose(enumerate_returns(r, pol, 0), atol=1e-12)
