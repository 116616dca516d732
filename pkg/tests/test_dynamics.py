import numpy as np
import pytest

from fastgates.cost import LinearCostModel, truncated_infidelity
from fastgates.dynamics import (
    BASIS_LABELS,
    FULL_COULOMB,
    LINEARIZED_COULOMB,
    TrajectoryState,
    _SIGNS,
    apply_kick,
    ode_infidelity,
    ode_motional_displacement,
    ode_phase_mismatch,
    simulate_gate,
)
from fastgates.exceptions import FastGateError
from fastgates.schemes import KickTrain
from fastgates.trap import (
    MICROTRAP,
    TrapConfiguration,
    microtrap_distance_for_chi,
    normal_modes,
)

OMEGA_T = 2 * np.pi * 1.2e6
PERIOD = 2 * np.pi / OMEGA_T


@pytest.fixture(scope="module")
def micro_trap():
    d = microtrap_distance_for_chi(1.8e-4, TrapConfiguration(ion_count=2))
    return TrapConfiguration(architecture=MICROTRAP, ion_count=2, inter_trap_distance=d)


@pytest.fixture(scope="module")
def paul_trap():
    return TrapConfiguration(ion_count=2)


def random_train(rng, n_kicks=24, f_rep=1e9, span_slots=800):
    slots = np.sort(rng.choice(np.arange(span_slots), size=n_kicks, replace=False))
    signs = rng.choice([-1, 1], n_kicks)
    return KickTrain(slots=slots, signs=signs, f_rep=f_rep)


def linearized_final_states(train, trap, t_final):
    """Analytic normal-mode bookkeeping for every basis state."""
    modes = normal_modes(trap)
    wt = modes.frequencies / trap.omega_t
    b = modes.couplings
    kick_dv = trap.pair_momentum * np.sqrt(2) * trap.lamb_dicke
    T = t_final * trap.omega_t
    tk = train.times * trap.omega_t
    out = {}
    for k, label in enumerate(BASIS_LABELS):
        if label == "ref":
            continue
        s_ions = _SIGNS[k]
        dx = np.zeros(2)
        dv = np.zeros(2)
        for p in range(2):
            jumps = train.signs * kick_dv * float(b[p] @ s_ions)
            dx += b[p] * np.sum(jumps / wt[p] * np.sin(wt[p] * (T - tk)))
            dv += b[p] * np.sum(jumps * np.cos(wt[p] * (T - tk)))
        out[label] = (dx, dv)
    return out


class TestApplyKick:
    def test_00_both_forward(self, paul_trap):
        state = TrajectoryState(np.zeros(2), np.zeros(2), 0.0, 0.0)
        new = apply_kick(state, 2, "00", paul_trap)
        assert new.velocities[0] == pytest.approx(new.velocities[1])
        assert new.velocities[0] > 0
        # 2 pairs, each 2*hbar*k/M
        expected = 2 * paul_trap.pair_momentum * paul_trap.lamb_dicke * np.sqrt(
            2 * 1.054571817e-34 * paul_trap.omega_t / paul_trap.mass
        )
        assert new.velocities[0] == pytest.approx(expected, rel=1e-9)

    def test_01_opposite(self, paul_trap):
        state = TrajectoryState(np.zeros(2), np.zeros(2), 0.0, 0.0)
        new = apply_kick(state, 1, "01", paul_trap)
        assert new.velocities[0] == pytest.approx(-new.velocities[1])
        assert new.velocities[0] > 0

    def test_negative_z_flips(self, paul_trap):
        state = TrajectoryState(np.zeros(2), np.zeros(2), 0.0, 0.0)
        plus = apply_kick(state, 1, "00", paul_trap)
        minus = apply_kick(state, -1, "00", paul_trap)
        assert minus.velocities == pytest.approx(-plus.velocities)

    def test_positions_unchanged(self, paul_trap):
        state = TrajectoryState(np.array([1e-9, 2e-9]), np.zeros(2), 0.5, 0.0)
        new = apply_kick(state, 3, "11", paul_trap)
        assert new.positions == pytest.approx(state.positions)
        assert new.phase == state.phase


class TestSimulateGate:
    def test_empty_train(self, micro_trap):
        train = KickTrain(slots=np.array([], dtype=int), signs=np.array([], dtype=int), f_rep=1e9)
        tset = simulate_gate(train, micro_trap, t_final=PERIOD)
        phases = [tset.phases[label] for label in BASIS_LABELS]
        assert np.allclose(phases, phases[0], atol=1e-9)
        assert ode_phase_mismatch(tset) == pytest.approx(np.pi / 4, abs=1e-9)
        for i in (0, 1):
            assert ode_motional_displacement(tset, i) < 1e-9

    def test_trajectories_match_harmonic_oracle(self, micro_trap):
        rng = np.random.default_rng(1)
        train = random_train(rng)
        tset = simulate_gate(train, micro_trap, t_final=PERIOD, coulomb=LINEARIZED_COULOMB)
        oracle = linearized_final_states(train, micro_trap, tset.t_final)
        x0 = micro_trap.ground_state_length
        ref = tset.final_states["ref"]
        for label, (dx_o, dv_o) in oracle.items():
            fs = tset.final_states[label]
            dx = (fs.positions - ref.positions) / x0
            dv = (fs.velocities - ref.velocities) / (x0 * micro_trap.omega_t)
            assert dx == pytest.approx(dx_o, abs=5e-10)
            assert dv == pytest.approx(dv_o, abs=5e-10)

    def test_single_kick_mode_period_return(self, micro_trap):
        # after one breathing period the kicked mode loops back to its
        # post-kick phase-space point
        modes = normal_modes(micro_trap)
        w_b = modes.frequencies[1]
        f_rep = 1e9
        train = KickTrain(slots=np.array([0]), signs=np.array([1]), f_rep=f_rep)
        t_final = 2 * np.pi / w_b
        tset = simulate_gate(train, micro_trap, t_final=t_final, coulomb=LINEARIZED_COULOMB)
        fs = tset.final_states["01"]
        ref = tset.final_states["ref"]
        x0 = micro_trap.ground_state_length
        dx = (fs.positions - ref.positions) / x0
        dv = (fs.velocities - ref.velocities) / (x0 * micro_trap.omega_t)
        b_breath = modes.couplings[1]
        q = b_breath @ dx
        qdot = b_breath @ dv
        jump = float(b_breath @ np.array([1.0, -1.0])) * (
            micro_trap.pair_momentum * np.sqrt(2) * micro_trap.lamb_dicke
        )
        assert abs(q) < 1e-6
        assert qdot == pytest.approx(jump, abs=1e-6)

    def test_kick_antikick_one_period_restores(self):
        # far-separated wells make the two modes commensurate, so one period
        # realigns both and an opposite kick cancels exactly; f_rep chosen so
        # the period is a whole number of grid slots
        trap = TrapConfiguration(
            architecture=MICROTRAP, ion_count=2, inter_trap_distance=5e-3
        )
        f_rep = 1000 * trap.omega_t / (2 * np.pi)
        train = KickTrain(
            slots=np.array([0, 1000]), signs=np.array([1, -1]), f_rep=f_rep
        )
        tset = simulate_gate(train, trap, coulomb=LINEARIZED_COULOMB)
        for i in (0, 1):
            assert ode_motional_displacement(tset, i) < 1e-6

    def test_energy_drift_below_tolerance(self, micro_trap):
        rng = np.random.default_rng(2)
        train = random_train(rng)
        tset = simulate_gate(train, micro_trap, t_final=PERIOD, drift_tolerance=np.inf)
        assert tset.energy_drift_per_period < 1e-9

    def test_fourth_order_convergence(self, paul_trap):
        rng = np.random.default_rng(3)
        train = random_train(rng, n_kicks=6, f_rep=2e8, span_slots=80)
        h = 2.0**-8
        coarse = simulate_gate(train, paul_trap, t_final=PERIOD, step_fraction=h,
                               drift_tolerance=np.inf)
        fine = simulate_gate(train, paul_trap, t_final=PERIOD, step_fraction=h / 2,
                             drift_tolerance=np.inf)
        exact = simulate_gate(train, paul_trap, t_final=PERIOD, step_fraction=h / 32,
                              drift_tolerance=np.inf)

        def err(tset):
            out = 0.0
            for label in BASIS_LABELS:
                a = tset.final_states[label]
                b = exact.final_states[label]
                out = max(out, np.max(np.abs(a.positions - b.positions)))
            return out

        ratio = err(coarse) / err(fine)
        assert 10 < ratio < 22

    def test_phase_invariant_under_potential_offset(self, micro_trap):
        rng = np.random.default_rng(4)
        train = random_train(rng, n_kicks=10)
        a = simulate_gate(train, micro_trap, t_final=PERIOD)
        b = simulate_gate(train, micro_trap, t_final=PERIOD, potential_offset=7.5)
        assert ode_phase_mismatch(a) == pytest.approx(ode_phase_mismatch(b), abs=1e-7)

    def test_symmetry_breaking_under_full_coulomb(self, paul_trap):
        # |01> and |10> are mirror trajectories for linearised coupling;
        # the full Coulomb force treats compression and stretch differently
        rng = np.random.default_rng(5)
        train = random_train(rng, n_kicks=16, f_rep=1e9, span_slots=120)
        lin = simulate_gate(train, paul_trap, t_final=0.3 * PERIOD, coulomb=LINEARIZED_COULOMB)
        full = simulate_gate(train, paul_trap, t_final=0.3 * PERIOD, coulomb=FULL_COULOMB)

        def asym(tset):
            ref = tset.final_states["ref"]
            a = tset.final_states["01"]
            b = tset.final_states["10"]
            da = a.positions - ref.positions
            db = b.positions - ref.positions
            return np.max(np.abs(da + db)) / max(np.max(np.abs(da)), 1e-300)

        assert asym(lin) < 1e-9
        assert asym(full) > 1e-6

    def test_rejects_multi_ion(self):
        trap = TrapConfiguration(ion_count=3)
        train = KickTrain(slots=np.array([0]), signs=np.array([1]), f_rep=1e9)
        with pytest.raises(FastGateError):
            simulate_gate(train, trap)


class TestOdeCost:
    def test_phase_matches_linear_model(self, micro_trap):
        modes = normal_modes(micro_trap)
        model = LinearCostModel(modes, 0, 1, micro_trap.lamb_dicke, nbar=micro_trap.nbar)
        rng = np.random.default_rng(6)
        for _ in range(3):
            train = random_train(rng, n_kicks=20)
            tset = simulate_gate(train, micro_trap, t_final=PERIOD, coulomb=LINEARIZED_COULOMB)
            seq = train.as_sequence(PERIOD)
            theta = model.phase_sum(seq.z, seq.times)
            want = abs(abs(theta) - np.pi / 4)
            assert ode_phase_mismatch(tset) == pytest.approx(want, rel=1e-6, abs=1e-9)

    def test_infidelity_matches_truncated_linearized(self, micro_trap):
        modes = normal_modes(micro_trap)
        rng = np.random.default_rng(7)
        train = random_train(rng, n_kicks=24, span_slots=400)
        tset = simulate_gate(train, micro_trap, t_final=0.5 * PERIOD, coulomb=LINEARIZED_COULOMB)
        seq = train.as_sequence(0.5 * PERIOD)
        bd = truncated_infidelity(seq, modes, 0, 1, micro_trap.lamb_dicke, nbar=micro_trap.nbar)
        got = ode_infidelity(tset).total
        assert got == pytest.approx(bd.total, rel=1e-3)

    def test_perfect_gate_zero(self, micro_trap):
        train = KickTrain(slots=np.array([], dtype=int), signs=np.array([], dtype=int), f_rep=1e9)
        tset = simulate_gate(train, micro_trap, t_final=PERIOD)
        # hand-build a perfect phase pattern to exercise the formula
        object.__setattr__(tset, "phases", {"ref": 0.0, "00": np.pi / 4, "01": -np.pi / 4,
                                            "10": -np.pi / 4, "11": np.pi / 4})
        result = ode_infidelity(tset)
        assert result.delta_phi == pytest.approx(0.0, abs=1e-12)
        assert result.total == pytest.approx(0.0, abs=1e-12)

    def test_negated_ideals_accepted(self, micro_trap):
        train = KickTrain(slots=np.array([], dtype=int), signs=np.array([], dtype=int), f_rep=1e9)
        tset = simulate_gate(train, micro_trap, t_final=PERIOD)
        object.__setattr__(tset, "phases", {"ref": 0.0, "00": -np.pi / 4, "01": np.pi / 4,
                                            "10": np.pi / 4, "11": -np.pi / 4})
        assert ode_phase_mismatch(tset) == pytest.approx(0.0, abs=1e-12)
