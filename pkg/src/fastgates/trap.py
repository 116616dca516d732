"""Trap geometry and motional-mode structure for ion chains.

Supports two architectures: a chain of ions sharing one harmonic (Paul) well,
and a linear array of microtraps holding one ion each at spacing ``d``.
Everything downstream consumes the mode frequencies and the coupling matrix
computed here; positions and frequencies are kept in SI units at this
boundary and nondimensionalised internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.constants as const

from .exceptions import ConvergenceError, FastGateError, UnstableConfigurationError

PAUL = "paul"
MICROTRAP = "microtrap"

#: Atomic mass of 40Ca+ in kg.
CA40_MASS = 39.9625909 * const.atomic_mass

#: Momentum transferred per counter-propagating pulse pair, in units of hbar*k.
DEFAULT_PAIR_MOMENTUM = 2.0


@dataclass(frozen=True)
class TrapConfiguration:
    """Physical description of the trapped-ion system.

    ``eta`` may be given directly (the usual path; Lamb-Dicke parameter for
    the gate axis) or derived from ``wavenumber``. When both are supplied
    they must agree to relative 1e-12.
    """

    architecture: str = PAUL
    ion_count: int = 2
    omega_t: float = 2 * np.pi * 1.2e6       # rad/s
    mass: float = CA40_MASS                  # kg
    eta: float | None = 0.16
    wavenumber: float | None = None          # rad/m
    inter_trap_distance: float | None = None  # m, microtrap only
    nbar: float = 0.1                        # mean motional occupation
    charge: float = const.elementary_charge
    epsilon0: float = const.epsilon_0
    pair_momentum: float = DEFAULT_PAIR_MOMENTUM  # units of hbar*k per pulse pair

    def __post_init__(self):
        if self.architecture not in (PAUL, MICROTRAP):
            raise FastGateError(f"unknown architecture {self.architecture!r}")
        if self.ion_count < 1:
            raise FastGateError("ion_count must be >= 1")
        if self.omega_t <= 0:
            raise FastGateError("trap frequency must be positive")
        if self.architecture == MICROTRAP:
            if self.inter_trap_distance is None or self.inter_trap_distance <= 0:
                raise FastGateError("microtrap array requires inter_trap_distance > 0")
        if self.eta is None and self.wavenumber is None:
            raise FastGateError("either eta or wavenumber must be given")
        if self.eta is not None and self.wavenumber is not None:
            derived = np.sqrt(const.hbar / (2 * self.mass * self.omega_t)) * self.wavenumber
            if abs(derived - self.eta) > 1e-12 * abs(self.eta):
                raise FastGateError(
                    f"eta={self.eta} inconsistent with wavenumber-derived value {derived:.12g}"
                )
        if self.nbar < 0:
            raise FastGateError("nbar must be >= 0")

    @property
    def lamb_dicke(self) -> float:
        """Lamb-Dicke parameter, defined against omega_t for every mode."""
        if self.eta is not None:
            return self.eta
        return np.sqrt(const.hbar / (2 * self.mass * self.omega_t)) * self.wavenumber

    @property
    def coulomb_length(self) -> float:
        """Length scale l = (e^2 / (4 pi eps0 M omega_t^2))^(1/3) in metres."""
        return (self.charge**2 / (4 * np.pi * self.epsilon0 * self.mass * self.omega_t**2)) ** (1 / 3)

    @property
    def ground_state_length(self) -> float:
        """Harmonic-oscillator length sqrt(hbar / (M omega_t)) in metres."""
        return np.sqrt(const.hbar / (self.mass * self.omega_t))

    @property
    def trap_period(self) -> float:
        return 2 * np.pi / self.omega_t


@dataclass(frozen=True)
class ModeStructure:
    """Normal-mode frequencies and ion couplings.

    ``frequencies`` is ascending, in rad/s. ``couplings`` has one orthonormal
    row per mode; row signs are fixed so the first non-negligible entry is
    positive. ``equilibrium_positions`` are absolute ion positions for a Paul
    chain and per-well displacements for a microtrap array (None on the
    direct-chi path, which carries no geometry).
    """

    frequencies: np.ndarray
    couplings: np.ndarray
    equilibrium_positions: np.ndarray | None
    omega_t: float

    def __post_init__(self):
        object.__setattr__(self, "frequencies", np.asarray(self.frequencies, dtype=float))
        object.__setattr__(self, "couplings", np.asarray(self.couplings, dtype=float))
        if self.equilibrium_positions is not None:
            object.__setattr__(
                self, "equilibrium_positions", np.asarray(self.equilibrium_positions, dtype=float)
            )
        if np.any(np.diff(self.frequencies) < -1e-9 * self.omega_t):
            raise FastGateError("mode frequencies must be ascending")

    @property
    def mode_count(self) -> int:
        return len(self.frequencies)

    @property
    def ion_count(self) -> int:
        return self.couplings.shape[1]

    def common_mode_index(self) -> int:
        """Index of the centre-of-mass mode (uniform-sign coupling row)."""
        for p in range(self.mode_count):
            row = self.couplings[p]
            if np.all(row > 0) or np.all(row < 0):
                return p
        raise FastGateError("no uniform-sign coupling row; cannot identify common mode")


@dataclass(frozen=True)
class ModeDifference:
    """Normalised splitting of a two-mode system, chi = (omega_b - omega_c) / omega_t."""

    chi: float


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for p in range(out.shape[0]):
        row = out[p]
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            out[p] = -row
    return out


def _paul_force(u: np.ndarray) -> np.ndarray:
    # dimensionless force balance: trap pull plus Coulomb repulsion, lengths in l
    n = len(u)
    f = u.copy()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            diff = u[i] - u[j]
            f[i] -= np.sign(diff) / diff**2
    return f


def _paul_jacobian(u: np.ndarray) -> np.ndarray:
    n = len(u)
    jac = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = 2.0 / abs(u[i] - u[j]) ** 3
            jac[i, i] += w
            jac[i, j] -= w
    return jac


def _microtrap_force(u: np.ndarray, d_scaled: float) -> np.ndarray:
    n = len(u)
    pos = np.arange(n) * d_scaled + u
    f = u.copy()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            diff = pos[i] - pos[j]
            f[i] -= np.sign(diff) / diff**2
    return f


def _microtrap_jacobian(u: np.ndarray, d_scaled: float) -> np.ndarray:
    n = len(u)
    pos = np.arange(n) * d_scaled + u
    jac = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = 2.0 / abs(pos[i] - pos[j]) ** 3
            jac[i, i] += w
            jac[i, j] -= w
    return jac


def _damped_newton(force, jacobian, ordered, u0, tol=1e-13, max_iter=200):
    u = u0.copy()
    res = np.linalg.norm(force(u), ord=np.inf)
    for _ in range(max_iter):
        if res < tol:
            return u, res
        step = np.linalg.solve(jacobian(u), force(u))
        lam = 1.0
        while lam > 1e-6:
            trial = u - lam * step
            if ordered(trial):
                trial_res = np.linalg.norm(force(trial), ord=np.inf)
                if trial_res < res:
                    u, res = trial, trial_res
                    break
            lam *= 0.5
        else:
            break
    if res < tol:
        return u, res
    raise ConvergenceError(
        f"equilibrium solve stalled at residual {res:.3e} (tolerance {tol:.1e})", residual=res
    )


def equilibrium_positions(config: TrapConfiguration) -> np.ndarray:
    """Equilibrium ion positions in metres (Paul: absolute; microtrap: per-well offsets).

    Solves the static force balance by damped Newton iteration from a
    uniformly spaced chain, to residual < 1e-12 in units of the Coulomb
    length scale.
    """
    n = config.ion_count
    scale = config.coulomb_length
    if n == 1:
        return np.zeros(1)
    if config.architecture == PAUL:
        # uniform spacing matching the known chain-extent scaling
        half = 0.63 * n**0.56
        u0 = np.linspace(-half, half, n)
        u, _ = _damped_newton(
            _paul_force, _paul_jacobian, lambda u: bool(np.all(np.diff(u) > 0)), u0
        )
        return u * scale
    d_scaled = config.inter_trap_distance / scale
    wells = np.arange(n) * d_scaled
    u, _ = _damped_newton(
        lambda u: _microtrap_force(u, d_scaled),
        lambda u: _microtrap_jacobian(u, d_scaled),
        lambda u: bool(np.all(np.diff(wells + u) > 0)),
        np.zeros(n),
    )
    return u * scale


def _hessian_scaled(config: TrapConfiguration, positions_m: np.ndarray) -> np.ndarray:
    """Mass-normalised Hessian at equilibrium in units of M omega_t^2."""
    n = config.ion_count
    scale = config.coulomb_length
    if config.architecture == PAUL:
        pos = positions_m / scale
    else:
        pos = np.arange(n) * (config.inter_trap_distance / scale) + positions_m / scale
    hess = np.eye(n)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            w = 2.0 / abs(pos[i] - pos[j]) ** 3
            hess[i, i] += w
            hess[i, j] -= w
    return hess


def normal_modes(config: TrapConfiguration) -> ModeStructure:
    """Normal-mode frequencies and couplings from the Hessian at equilibrium."""
    positions = equilibrium_positions(config)
    if config.ion_count == 1:
        return ModeStructure(
            frequencies=np.array([config.omega_t]),
            couplings=np.array([[1.0]]),
            equilibrium_positions=positions,
            omega_t=config.omega_t,
        )
    hess = _hessian_scaled(config, positions)
    eigvals, eigvecs = np.linalg.eigh(hess)
    if np.any(eigvals <= 0):
        raise UnstableConfigurationError(
            f"non-positive mode eigenvalue encountered: {eigvals.min():.3e}"
        )
    freqs = config.omega_t * np.sqrt(eigvals)
    couplings = _fix_signs(eigvecs.T)
    return ModeStructure(
        frequencies=freqs,
        couplings=couplings,
        equilibrium_positions=positions,
        omega_t=config.omega_t,
    )


def chi_from_modes(modes: ModeStructure) -> ModeDifference:
    """Normalised mode splitting chi = (omega_b - omega_c) / omega_t for two-mode systems."""
    if modes.mode_count != 2:
        raise FastGateError(
            f"chi is defined for exactly two modes, got {modes.mode_count}; use the full ModeStructure"
        )
    c = modes.common_mode_index()
    b = 1 - c
    omega_c = modes.frequencies[c]
    return ModeDifference(chi=(modes.frequencies[b] - omega_c) / omega_c)


def modes_from_chi(chi: float, omega_t: float) -> ModeStructure:
    """Two-ion mode structure specified directly by chi, bypassing geometry.

    Covers radial-mode gates (chi < 0) that the longitudinal geometry model
    cannot produce. Frequencies are sorted ascending with their coupling rows.
    """
    if 1 + chi <= 0:
        raise FastGateError(f"invalid chi={chi}: requires 1 + chi > 0")
    freqs = np.array([omega_t, omega_t * (1 + chi)])
    coups = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    order = np.argsort(freqs, kind="stable")
    return ModeStructure(
        frequencies=freqs[order],
        couplings=coups[order],
        equilibrium_positions=None,
        omega_t=omega_t,
    )


def microtrap_distance_for_chi(chi: float, config: TrapConfiguration) -> float:
    """Inter-trap distance (m) whose two-ion linearised modes give the requested chi.

    Only positive chi corresponds to a longitudinal microtrap geometry.
    """
    if chi <= 0:
        raise FastGateError("only chi > 0 maps onto a longitudinal microtrap geometry")
    alpha = ((1 + chi) ** 2 - 1) / 4.0
    scale = config.coulomb_length
    s = alpha ** (-1 / 3)          # equilibrium separation, units of l
    delta = 1.0 / s**2             # outward displacement per ion, units of l
    return (s - 2 * delta) * scale
