import numpy as np
import pytest

from fastgates.exceptions import FastGateError
from fastgates.trap import (
    MICROTRAP,
    PAUL,
    TrapConfiguration,
    chi_from_modes,
    equilibrium_positions,
    microtrap_distance_for_chi,
    modes_from_chi,
    normal_modes,
)


def paul_config(n=2, **kw):
    return TrapConfiguration(architecture=PAUL, ion_count=n, **kw)


def microtrap_config(n=2, d=90e-6, **kw):
    return TrapConfiguration(architecture=MICROTRAP, ion_count=n, inter_trap_distance=d, **kw)


class TestEquilibrium:
    def test_single_ion_at_centre(self):
        assert equilibrium_positions(paul_config(1)) == pytest.approx(0.0)

    def test_two_ion_positions(self):
        cfg = paul_config(2)
        u = equilibrium_positions(cfg) / cfg.coulomb_length
        expected = (0.5) ** (2 / 3)
        assert u == pytest.approx([-expected, expected], rel=1e-12)

    def test_three_ion_positions(self):
        cfg = paul_config(3)
        u = equilibrium_positions(cfg) / cfg.coulomb_length
        expected = (5 / 4) ** (1 / 3)
        assert u == pytest.approx([-expected, 0.0, expected], abs=1e-12)

    @pytest.mark.parametrize("n", [4, 5, 7, 10, 15])
    def test_force_balance_residual(self, n):
        cfg = paul_config(n)
        u = equilibrium_positions(cfg) / cfg.coulomb_length
        res = u.copy()
        for i in range(n):
            for j in range(n):
                if i != j:
                    res[i] -= np.sign(u[i] - u[j]) / (u[i] - u[j]) ** 2
        assert np.max(np.abs(res)) < 1e-12
        assert np.all(np.diff(u) > 0)

    def test_scale_invariance(self):
        a = paul_config(4)
        b = paul_config(4, omega_t=2 * np.pi * 0.7e6, mass=2.1e-25, eta=0.1)
        ua = equilibrium_positions(a) / a.coulomb_length
        ub = equilibrium_positions(b) / b.coulomb_length
        assert ua == pytest.approx(ub, rel=1e-10)

    def test_microtrap_two_ion_displacements(self):
        cfg = microtrap_config()
        u = equilibrium_positions(cfg)
        # ions pushed apart, symmetric about well centres
        assert u[0] < 0 < u[1]
        assert u[0] == pytest.approx(-u[1], rel=1e-10)
        delta = cfg.coulomb_length**3 / (cfg.inter_trap_distance + 2 * u[1]) ** 2
        assert u[1] == pytest.approx(delta, rel=1e-9)


class TestNormalModes:
    def test_two_ion_paul_longitudinal(self):
        modes = normal_modes(paul_config(2))
        ratios = modes.frequencies / modes.omega_t
        assert ratios == pytest.approx([1.0, np.sqrt(3)], rel=1e-12)
        assert modes.couplings[0] == pytest.approx([1, 1] / np.sqrt(2), rel=1e-12)
        assert modes.couplings[1] == pytest.approx([1, -1] / np.sqrt(2), rel=1e-12)

    def test_three_ion_paul(self):
        modes = normal_modes(paul_config(3))
        ratios = modes.frequencies / modes.omega_t
        assert ratios == pytest.approx([1.0, np.sqrt(3), np.sqrt(29 / 5)], rel=1e-10)

    def test_rows_orthonormal(self):
        modes = normal_modes(paul_config(5))
        gram = modes.couplings @ modes.couplings.T
        assert np.max(np.abs(gram - np.eye(5))) < 1e-10

    def test_hessian_reconstruction(self):
        cfg = paul_config(4)
        modes = normal_modes(cfg)
        lam = (modes.frequencies / cfg.omega_t) ** 2
        rebuilt = modes.couplings.T @ np.diag(lam) @ modes.couplings
        from fastgates.trap import _hessian_scaled

        hess = _hessian_scaled(cfg, modes.equilibrium_positions)
        assert np.max(np.abs(rebuilt - hess)) / np.max(np.abs(hess)) < 1e-10

    def test_far_microtraps_degenerate(self):
        modes = normal_modes(microtrap_config(d=5e-3))
        chi = chi_from_modes(modes).chi
        assert abs(chi) < 1e-7

    def test_common_mode_at_trap_frequency(self):
        modes = normal_modes(microtrap_config())
        c = modes.common_mode_index()
        assert modes.frequencies[c] == pytest.approx(modes.omega_t, rel=1e-12)


class TestChi:
    def test_paul_longitudinal_value(self):
        chi = chi_from_modes(normal_modes(paul_config(2))).chi
        assert chi == pytest.approx(np.sqrt(3) - 1, abs=1e-12)

    def test_microtrap_90um_value(self):
        chi = chi_from_modes(normal_modes(microtrap_config(d=90e-6))).chi
        assert chi == pytest.approx(1.8e-4, rel=0.10)

    def test_degenerate_modes(self):
        modes = modes_from_chi(0.0, omega_t=2 * np.pi * 1.2e6)
        assert chi_from_modes(modes).chi == 0.0

    def test_monotone_decreasing_with_distance(self):
        distances = np.linspace(60e-6, 200e-6, 8)
        chis = [
            chi_from_modes(normal_modes(microtrap_config(d=d))).chi for d in distances
        ]
        assert np.all(np.diff(chis) < 0)
        assert chis[-1] > 0

    def test_rejects_multimode(self):
        with pytest.raises(FastGateError):
            chi_from_modes(normal_modes(paul_config(3)))


class TestModesFromChi:
    def test_paul_value(self):
        modes = modes_from_chi(np.sqrt(3) - 1, omega_t=1.0)
        assert modes.frequencies[1] == pytest.approx(np.sqrt(3), rel=1e-12)

    def test_radial_value(self):
        modes = modes_from_chi(-1.4e-2, omega_t=1.0)
        # ascending order puts the softened mode first
        assert modes.frequencies[0] == pytest.approx(0.986, rel=1e-12)
        assert chi_from_modes(modes).chi == pytest.approx(-1.4e-2, rel=1e-12)

    def test_invalid_chi(self):
        with pytest.raises(FastGateError):
            modes_from_chi(-1.0, omega_t=1.0)

    def test_roundtrip_through_distance(self):
        cfg = microtrap_config()
        target = 1.8e-4
        d = microtrap_distance_for_chi(target, cfg)
        chi = chi_from_modes(
            normal_modes(microtrap_config(d=d))
        ).chi
        assert chi == pytest.approx(target, rel=1e-6)


class TestConfiguration:
    def test_eta_wavenumber_consistency_enforced(self):
        import scipy.constants as const

        cfg = paul_config(2)
        k = cfg.eta / np.sqrt(const.hbar / (2 * cfg.mass * cfg.omega_t))
        TrapConfiguration(architecture=PAUL, ion_count=2, eta=cfg.eta, wavenumber=k)
        with pytest.raises(FastGateError):
            TrapConfiguration(architecture=PAUL, ion_count=2, eta=cfg.eta, wavenumber=1.01 * k)

    def test_eta_derived_from_wavenumber(self):
        cfg = TrapConfiguration(architecture=PAUL, ion_count=2, eta=None, wavenumber=2 * np.pi / 393e-9)
        assert cfg.lamb_dicke == pytest.approx(0.164, rel=5e-3)

    def test_microtrap_requires_distance(self):
        with pytest.raises(FastGateError):
            TrapConfiguration(architecture=MICROTRAP, ion_count=2)
