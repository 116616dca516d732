import numpy as np
import pytest

from fastgates.cost import LinearCostModel
from fastgates.global_opt import (
    GateSolution,
    GlobalSearchConfig,
    extrapolate_gate_time,
    optimize_global,
    round_to_integers,
)
from fastgates.trap import TrapConfiguration, modes_from_chi, normal_modes

OMEGA_T = 2 * np.pi * 1.2e6
PERIOD = 2 * np.pi / OMEGA_T


@pytest.fixture(scope="module")
def trap():
    return TrapConfiguration(ion_count=2)


@pytest.fixture(scope="module")
def paul_modes(trap):
    return normal_modes(trap)


class TestRounding:
    def test_examples(self):
        assert round_to_integers([1.4, -2.6]).tolist() == [1, -3]
        assert round_to_integers([0.4]).tolist() == [0]
        assert round_to_integers([2.5]).tolist() == [3]
        assert round_to_integers([-2.5]).tolist() == [-3]


class TestExtrapolation:
    def test_identity(self):
        assert extrapolate_gate_time(1.0, 1e9, 1e9) == pytest.approx(1.0)

    def test_factor_32(self):
        assert extrapolate_gate_time(1.0, 1e9, 32e9) == pytest.approx(0.25)

    def test_factor_2(self):
        assert extrapolate_gate_time(1.0, 1e9, 2e9) == pytest.approx(2 ** (-2 / 5), rel=1e-12)
        assert extrapolate_gate_time(1.0, 1e9, 2e9) == pytest.approx(0.7579, abs=1e-4)


class TestOptimizeGlobal:
    def test_zero_bounds_gives_empty_gate(self, trap, paul_modes):
        cfg = GlobalSearchConfig(
            scheme="gpg", n_groups=6, gate_time=PERIOD, z_bound=0.4,
            expansion_factor=1.01, stages=1, restarts=4, seed=0,
            lattice_refine=False, hop_iters=0,
        )
        sol = optimize_global(cfg, trap, paul_modes)
        assert sol.sequence.group_count == 0
        assert sol.cost == pytest.approx((2 / 3) * (np.pi / 4) ** 2, rel=1e-9)
        assert sol.metadata["degenerate_zero"]

    def test_frag_exact_solution(self, trap, paul_modes):
        cfg = GlobalSearchConfig(
            scheme="frag", gate_time=1.75 * PERIOD, restarts=12, stages=3, seed=0
        )
        sol = optimize_global(cfg, trap, paul_modes)
        assert abs(sol.breakdown.delta_phi) < 1e-10
        assert np.all(sol.breakdown.mode_displacements < 1e-10)

    def test_deterministic_given_seed(self, trap, paul_modes):
        cfg = GlobalSearchConfig(
            scheme="gpg", n_groups=6, gate_time=0.5 * PERIOD,
            stages=2, restarts=6, seed=42, refine_top=3, hop_iters=5,
        )
        a = optimize_global(cfg, trap, paul_modes)
        b = optimize_global(cfg, trap, paul_modes)
        assert a.sequence.z.tolist() == b.sequence.z.tolist()
        assert a.cost == b.cost

    def test_integer_z_and_recomputed_breakdown(self, trap, paul_modes):
        cfg = GlobalSearchConfig(
            scheme="gpg", n_groups=6, gate_time=0.5 * PERIOD,
            stages=2, restarts=6, seed=3, refine_top=3, hop_iters=0,
        )
        sol = optimize_global(cfg, trap, paul_modes)
        assert sol.sequence.z.dtype.kind == "i"
        model = LinearCostModel(paul_modes, 0, 1, trap.lamb_dicke, nbar=trap.nbar)
        assert sol.cost == pytest.approx(
            model.total(sol.sequence.z, sol.sequence.times), rel=1e-12
        )

    def test_monotone_best_over_stages(self, trap, paul_modes):
        cfg = GlobalSearchConfig(
            scheme="gpg", n_groups=6, gate_time=0.5 * PERIOD,
            stages=3, restarts=6, seed=5, refine_top=3, hop_iters=0,
        )
        sol = optimize_global(cfg, trap, paul_modes)
        log = sol.metadata["stage_log"]
        best_by_stage = {}
        for rec in log:
            if rec["feasible"]:
                s = rec["stage"]
                best_by_stage[s] = min(best_by_stage.get(s, np.inf), rec["cost_rounded"])
        seq = [best_by_stage[s] for s in sorted(best_by_stage)]
        running = np.minimum.accumulate(seq)
        assert np.all(np.diff(running) <= 0)

    def test_fmin_cap_respected(self, trap):
        micro = modes_from_chi(1.8e-4, OMEGA_T)
        cap = 1100 / PERIOD
        cfg = GlobalSearchConfig(
            scheme="apg", n_groups=16, gate_time=1.0 * PERIOD,
            stages=3, restarts=10, seed=0, refine_top=4, hop_iters=10,
            max_f_min=cap,
        )
        sol = optimize_global(cfg, trap, micro)
        assert sol.f_min <= cap

    def test_eval_budget_limits_work(self, trap, paul_modes):
        cfg = GlobalSearchConfig(
            scheme="gpg", n_groups=6, gate_time=0.5 * PERIOD,
            stages=4, restarts=16, seed=1, eval_budget=2000,
        )
        sol = optimize_global(cfg, trap, paul_modes)
        assert isinstance(sol, GateSolution)
        assert sol.metadata["evaluations_used"] <= 2200

    def test_apg_solution_antisymmetric(self, trap):
        micro = modes_from_chi(1.8e-4, OMEGA_T)
        cfg = GlobalSearchConfig(
            scheme="apg", n_groups=8, gate_time=PERIOD,
            stages=2, restarts=6, seed=2, refine_top=3, hop_iters=0,
        )
        sol = optimize_global(cfg, trap, micro)
        assert sol.sequence.is_antisymmetric()
