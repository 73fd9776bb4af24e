import numpy as np
import pytest

from seqcvar.envs import (DOWN, LEFT, NAVIGATION_CONFIG, RIGHT, UP, GridworldConfig, HazardChainConfig,
                          RewardChainConfig, chain_start, implied_gamma, make_gridworld,
                          make_hazard_chain, make_reward_chain, pcvar_alpha_sequence)
from seqcvar.experiments import modal_path
from seqcvar.mdp import expected_value_dp, return_distribution_exact, validate, PolicyTable
from seqcvar.riskdist import DiscreteDistribution, DomainError, convolve_iid, cvar_tail
from seqcvar.solvers import solve_fcvar, solve_ncvar, solve_pcvar


def single_action(mdp):
    return PolicyTable(np.zeros((mdp.horizon, mdp.n_states), dtype=int))


class TestGridworld:
    def test_default_validates(self):
        world = make_gridworld()
        assert validate(world.mdp) == []
        assert world.mdp.n_states == 70 and world.mdp.horizon == 40

    @pytest.mark.xfail(strict=True, reason="with slip 0.05 the expected-value route keeps one row "
                                           "of clearance; see the decisions ledger")
    def test_default_risk_neutral_route_runs_above_lava(self):
        world = make_gridworld()
        v, pol, _ = expected_value_dp(world.mdp)
        path = modal_path(world.mdp, lambda t, s, _: (pol(t, s), None))
        above = {(x, y + 1) for x, y in world.config.lava}
        assert any(world.cells[s] in above for s in path)

    def test_navigation_config_validates(self):
        assert validate(make_gridworld(NAVIGATION_CONFIG).mdp) == []

    def test_transition_model(self):
        world = make_gridworld(GridworldConfig(slip=0.1))
        s = world.state((3, 3))
        row = {(world.cells[o.next_state], round(o.prob, 12)) for o in world.mdp.transitions[s][RIGHT]}
        assert row == {((4, 3), 0.8), ((3, 4), 0.1), ((3, 2), 0.1)}

    def test_uniform_slip_model(self):
        world = make_gridworld(GridworldConfig(slip=0.1, slip_model="uniform"))
        s = world.state((3, 3))
        row = {(world.cells[o.next_state], round(o.prob, 12)) for o in world.mdp.transitions[s][UP]}
        assert row == {((3, 4), 0.7), ((2, 3), 0.1), ((4, 3), 0.1), ((3, 2), 0.1)}

    def test_walls_stay_and_terminal_rewards(self):
        world = make_gridworld(GridworldConfig(slip=0.0))
        m = world.mdp
        corner = world.state((0, 6))
        assert [o.next_state for o in m.transitions[corner][UP]] == [corner]
        above_goal = world.state((9, 1))
        (o,) = m.transitions[above_goal][DOWN]
        assert o.next_state == world.goal_state and o.reward == 1.0
        above_lava = world.state((4, 1))
        (o,) = m.transitions[above_lava][DOWN]
        assert o.reward == -1.0 and m.terminal[o.next_state]
        assert m.transitions[world.state((1, 1))][LEFT][0].reward == 0.0

    def test_slip_zero_alpha_irrelevant(self):
        world = make_gridworld(GridworldConfig(slip=0.0, horizon=20))
        m = world.mdp
        ev = expected_value_dp(m)[0]
        for a in (0.05, 0.5):
            assert np.allclose(solve_ncvar(m, a).values, ev, atol=1e-12)
            assert np.allclose(solve_fcvar(m, a).cvar_values, ev, atol=1e-12)
        pc = solve_pcvar(m)
        assert np.allclose(pc.values, ev[..., None], atol=1e-12)

    def test_goal_unreachable(self):
        world = make_gridworld(GridworldConfig(horizon=3))
        assert expected_value_dp(world.mdp)[0][0, world.mdp.x0] == 0.0

    @pytest.mark.parametrize("bad", [dict(slip=0.5), dict(start=(9, 0)), dict(goal=(20, 0)),
                                     dict(slip_model="diagonal"), dict(slip=0.34, slip_model="uniform")])
    def test_invalid_configs(self, bad):
        with pytest.raises(DomainError):
            make_gridworld(GridworldConfig(**bad))

    def test_config_round_trip(self):
        assert GridworldConfig.from_dict(NAVIGATION_CONFIG.to_dict()) == NAVIGATION_CONFIG


class TestHazardChain:
    def test_expected_value(self):
        m = make_hazard_chain(HazardChainConfig(3, 0.05))
        assert abs(expected_value_dp(m)[0][0, 0] - 0.857375) < 1e-12

    @pytest.mark.parametrize("lam", [0.01, 0.05, 0.3])
    def test_survival_values(self, lam):
        m = make_hazard_chain(HazardChainConfig(4, lam))
        v = expected_value_dp(m)[0][0]
        for t in range(1, 5):
            assert abs(v[chain_start(4, t)] - (1 - lam) ** t) < 1e-12

    def test_one_step_nested(self):
        m = make_hazard_chain(HazardChainConfig(1, 0.05))
        assert abs(solve_ncvar(m, 0.1).values[0, 0] - 0.5) < 1e-12

    @pytest.mark.parametrize("alpha", [0.01, 0.04, 0.06, 0.1, 0.2, 0.5, 1.0])
    def test_nested_geometric(self, alpha):
        m = make_hazard_chain(HazardChainConfig(3, 0.05))
        v = solve_ncvar(m, alpha).values[0]
        for t in (1, 2, 3):
            assert abs(v[chain_start(3, t)] - implied_gamma(alpha, 0.05) ** t) < 1e-9

    @pytest.mark.parametrize("alpha", [0.06, 0.1, 0.2, 0.5, 1.0])
    def test_fixed_closed_form(self, alpha):
        m = make_hazard_chain(HazardChainConfig(3, 0.05))
        v = solve_fcvar(m, alpha).cvar_values[0]
        for t in (1, 2, 3):
            assert abs(v[chain_start(3, t)] - max(0.0, 1 - (1 - 0.95 ** t) / alpha)) < 1e-9

    def test_validates(self):
        assert validate(make_hazard_chain()) == []


class TestRewardChain:
    def test_expected_value(self):
        m = make_reward_chain(RewardChainConfig(n_states=4))
        assert abs(expected_value_dp(m)[0][0, 0] - 3.2) < 1e-12

    def test_one_stage_distribution(self):
        m = make_reward_chain(RewardChainConfig(n_states=1))
        d = return_distribution_exact(m, single_action(m), 0)
        assert d.allclose(DiscreteDistribution([(-1, 0.1), (1, 0.9)]))

    def test_zero_stages(self):
        m = make_reward_chain(RewardChainConfig(n_states=0))
        assert expected_value_dp(m)[0][0, 0] == 0.0

    @pytest.mark.parametrize("alpha", [0.05, 0.11, 0.15, 0.25, 0.3, 1.0])
    def test_nested_linear_in_distance(self, alpha):
        stage = RewardChainConfig().stage_distribution()
        m = make_reward_chain(RewardChainConfig(n_states=4))
        v = solve_ncvar(m, alpha).values[0]
        c = cvar_tail(stage, alpha)
        starts = [v[chain_start(4, n)] for n in range(1, 5)]
        assert np.allclose(starts, [n * c for n in range(1, 5)], atol=1e-9)
        diffs = np.diff(starts)
        assert np.all(diffs < 0) if alpha < 0.2 else np.all(diffs > 0)

    @pytest.mark.parametrize("alpha", [0.05, 0.11, 0.15, 0.3, 1.0])
    def test_fixed_is_convolution(self, alpha):
        stage = RewardChainConfig().stage_distribution()
        m = make_reward_chain(RewardChainConfig(n_states=4))
        v = solve_fcvar(m, alpha).cvar_values[0]
        starts = [v[chain_start(4, n)] for n in range(1, 5)]
        for n, s in enumerate(starts, 1):
            assert abs(s - cvar_tail(convolve_iid(stage, n), alpha)) < 1e-10
        assert np.all(np.diff(starts) > 0)


class TestClosedForms:
    def test_implied_gamma(self):
        assert implied_gamma(0.1, 0.05) == pytest.approx(0.5, abs=1e-15)
        assert implied_gamma(1.0, 0.05) == pytest.approx(0.95, abs=1e-15)
        assert implied_gamma(0.04, 0.05) == 0.0

    def test_alpha_sequence(self):
        seq = pcvar_alpha_sequence(0.3, 0.05, 3)
        assert np.allclose(seq, [0.3, 0.25 / 0.95, (0.25 / 0.95 - 0.05) / 0.95], atol=1e-15)
        assert np.allclose(seq, [0.3, 0.2632, 0.2244], atol=5e-5)
        gammas = [1 - 0.05 / a for a in seq]
        assert np.allclose(gammas, [0.8333, 0.8100, 0.7772], atol=5e-5)

    def test_alpha_sequence_risk_neutral(self):
        assert pcvar_alpha_sequence(1.0, 0.05, 5) == [1.0] * 5

    def test_alpha_sequence_stops_at_worst_case(self):
        assert pcvar_alpha_sequence(0.04, 0.05, 3) == [0.04]

    def test_chain_start_range(self):
        with pytest.raises(DomainError):
            chain_start(3, 4)
