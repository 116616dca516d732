"""Classical two-ion dynamics under state-dependent kicks.

Integrates the coupled equations of motion (harmonic wells plus the full
Coulomb interaction) for every two-qubit basis state and a kick-free
reference, with explicit fourth-order Runge-Kutta steps that never straddle
a kick. Each counter-propagating pulse pair changes ion velocities
instantaneously by +-(2 hbar k / M), the sign set by that ion's qubit value.

Everything internal is dimensionless (hbar = M = omega_t = 1; lengths in
sqrt(hbar / M omega_t)); the public surface speaks SI.

The accumulated phase per basis state is

    Phi = (M / 2 hbar) sum_i dx_i(T) dv_i(T) - (1/hbar) int (T - V) dt ,

the action integral along the trajectory plus a final-state boundary term.
For a motionally restored gate the boundary term vanishes and Phi is the
plain action; for arbitrary sequences this combination equals the
displacement-operator phase of the linearised dynamics, which keeps the ODE
cost consistent with the truncated cost on any input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.constants as const
from numba import njit

from .exceptions import ConvergenceError, FastGateError
from .schemes import KickTrain
from .trap import (
    MICROTRAP,
    PAUL,
    ModeStructure,
    TrapConfiguration,
    equilibrium_positions,
    normal_modes,
)

BASIS_LABELS = ("ref", "00", "01", "10", "11")

#: qubit sign s_i per basis state and ion; |0> kicks forward, |1> backward
_SIGNS = np.array([
    [0.0, 0.0],    # reference, no kicks
    [1.0, 1.0],    # |00>
    [1.0, -1.0],   # |01>
    [-1.0, 1.0],   # |10>
    [-1.0, -1.0],  # |11>
])

DEFAULT_STEP_FRACTION = 2.0**-12     # trap periods per RK4 step
ENERGY_DRIFT_TOL = 1e-9              # relative, per trap period
_MAX_REFINES = 5

FULL_COULOMB = "full"
LINEARIZED_COULOMB = "linearized"


@dataclass(frozen=True)
class TrajectoryState:
    """Instantaneous SI state of the two ions plus the accumulated phase."""

    positions: np.ndarray   # (2,) metres
    velocities: np.ndarray  # (2,) m/s
    phase: float            # radians
    time: float             # seconds


@dataclass(frozen=True)
class OdeInfidelity:
    """Position-basis infidelity components from the ODE model."""

    delta_phi: float
    ion_displacements: np.ndarray  # worst case per ion over basis states
    total: float

    def as_dict(self) -> dict:
        return {
            "delta_phi": float(self.delta_phi),
            "ion_displacements": [float(x) for x in self.ion_displacements],
            "total": float(self.total),
        }


@dataclass(frozen=True)
class TrajectorySet:
    """Five simulated trajectories sharing one time grid and kick train."""

    trap: TrapConfiguration
    train: KickTrain
    t_final: float                     # seconds
    final_states: dict                 # label -> TrajectoryState
    phases: dict                       # label -> convention-complete Phi (rad)
    displacements: np.ndarray          # (4, 2) dP_i per kicked basis state/ion
    energy_drift_per_period: float
    coulomb: str
    histories: dict | None = None      # label -> (n, 6) [t, x1, x2, v1, v2, phi]
    modes: ModeStructure | None = None

    @property
    def basis_labels(self):
        return BASIS_LABELS


@njit(cache=True)
def _rk4_free(y, v, phi, n_steps, h, gamma, s0, linearized, v_off):
    """Advance all trajectories through free evolution; returns min separation.

    Works in displacement coordinates y = x - x_eq, where the equilibrium
    identity |x_eq,i| = gamma/s0^2 collapses trap + Coulomb into exactly
    cancellation-free forms:

        V - V_eq = (y1^2 + y2^2)/2 + gamma (y2 - y1)^2 / (s s0^2)
        a_1 = -y1 + gamma (y2 - y1)(s + s0) / (s^2 s0^2),  a_2 mirrored

    with s = s0 + y2 - y1 the instantaneous separation.
    """
    n_traj = y.shape[0]
    min_sep = 1e300
    for _ in range(n_steps):
        for k in range(n_traj):
            y1 = y[k, 0]
            y2 = y[k, 1]
            v1 = v[k, 0]
            v2 = v[k, 1]

            ky1 = np.empty(4)
            ky2 = np.empty(4)
            kv1 = np.empty(4)
            kv2 = np.empty(4)
            kph = np.empty(4)
            for stage in range(4):
                if stage == 0:
                    sy1, sy2, sv1, sv2 = y1, y2, v1, v2
                elif stage == 1:
                    sy1 = y1 + 0.5 * h * ky1[0]
                    sy2 = y2 + 0.5 * h * ky2[0]
                    sv1 = v1 + 0.5 * h * kv1[0]
                    sv2 = v2 + 0.5 * h * kv2[0]
                elif stage == 2:
                    sy1 = y1 + 0.5 * h * ky1[1]
                    sy2 = y2 + 0.5 * h * ky2[1]
                    sv1 = v1 + 0.5 * h * kv1[1]
                    sv2 = v2 + 0.5 * h * kv2[1]
                else:
                    sy1 = y1 + h * ky1[2]
                    sy2 = y2 + h * ky2[2]
                    sv1 = v1 + h * kv1[2]
                    sv2 = v2 + h * kv2[2]
                rel = sy2 - sy1
                s = s0 + rel
                if s < min_sep:
                    min_sep = s
                if s <= 0.0:
                    return -1.0
                if linearized:
                    coul = 2.0 * gamma * rel / (s0 * s0 * s0)
                    vc = gamma * rel * rel / (s0 * s0 * s0)
                else:
                    coul = gamma * rel * (s + s0) / (s * s * s0 * s0)
                    vc = gamma * rel * rel / (s * s0 * s0)
                pot = 0.5 * (sy1 * sy1 + sy2 * sy2) + vc + v_off
                ky1[stage] = sv1
                ky2[stage] = sv2
                kv1[stage] = -sy1 + coul
                kv2[stage] = -sy2 - coul
                kph[stage] = 0.5 * (sv1 * sv1 + sv2 * sv2) - pot

            y[k, 0] = y1 + (h / 6.0) * (ky1[0] + 2 * ky1[1] + 2 * ky1[2] + ky1[3])
            y[k, 1] = y2 + (h / 6.0) * (ky2[0] + 2 * ky2[1] + 2 * ky2[2] + ky2[3])
            v[k, 0] = v1 + (h / 6.0) * (kv1[0] + 2 * kv1[1] + 2 * kv1[2] + kv1[3])
            v[k, 1] = v2 + (h / 6.0) * (kv2[0] + 2 * kv2[1] + 2 * kv2[2] + kv2[3])
            phi[k] = phi[k] + (h / 6.0) * (kph[0] + 2 * kph[1] + 2 * kph[2] + kph[3])
    return min_sep


@njit(cache=True)
def _energies(y, v, gamma, s0, linearized, v_off, out):
    for k in range(y.shape[0]):
        rel = y[k, 1] - y[k, 0]
        s = s0 + rel
        if linearized:
            vc = gamma * rel * rel / (s0 * s0 * s0)
        else:
            vc = gamma * rel * rel / (s * s0 * s0)
        pot = 0.5 * (y[k, 0] ** 2 + y[k, 1] ** 2) + vc + v_off
        out[k] = 0.5 * (v[k, 0] ** 2 + v[k, 1] ** 2) + pot


class _TwoIonSystem:
    """Dimensionless system constants derived from a trap configuration."""

    def __init__(self, trap: TrapConfiguration, coulomb: str):
        if trap.ion_count != 2:
            raise FastGateError("the ODE model covers exactly two ions")
        if coulomb not in (FULL_COULOMB, LINEARIZED_COULOMB):
            raise FastGateError(f"unknown coulomb mode {coulomb!r}")
        self.trap = trap
        self.coulomb = coulomb
        x0 = trap.ground_state_length
        self.x0 = x0
        self.omega_t = trap.omega_t
        self.gamma = (trap.coulomb_length / x0) ** 3
        eq_m = equilibrium_positions(trap)
        self.eq = eq_m / x0
        d = 0.0 if trap.architecture == PAUL else trap.inter_trap_distance / x0
        self.s0 = d + self.eq[1] - self.eq[0]
        self.kick_dv = trap.pair_momentum * np.sqrt(2.0) * trap.lamb_dicke


def apply_kick(state: TrajectoryState, pairs: int, basis: str,
               trap: TrapConfiguration) -> TrajectoryState:
    """Instantaneous velocity change from ``pairs`` pulse pairs on both ions.

    Each pair imparts momentum (pair_momentum * hbar k), forward for a qubit
    in |0> and backward for |1>; positions are untouched.
    """
    if basis not in BASIS_LABELS:
        raise FastGateError(f"unknown basis state {basis!r}")
    signs = _SIGNS[BASIS_LABELS.index(basis)]
    dv = trap.pair_momentum * trap.lamb_dicke * np.sqrt(
        2 * const.hbar * trap.omega_t / trap.mass
    )
    return TrajectoryState(
        positions=state.positions.copy(),
        velocities=state.velocities + signs * pairs * dv,
        phase=state.phase,
        time=state.time,
    )


def _segment_steps(duration: float, h0: float):
    n = max(1, int(np.ceil(duration / h0)))
    return n, duration / n


def simulate_gate(train: KickTrain, trap: TrapConfiguration,
                  t_final: float | None = None, *,
                  coulomb: str = FULL_COULOMB,
                  step_fraction: float = DEFAULT_STEP_FRACTION,
                  record: bool = False,
                  potential_offset: float = 0.0,
                  drift_tolerance: float = ENERGY_DRIFT_TOL) -> TrajectorySet:
    """Integrate all basis-state trajectories through the kick train.

    ``t_final`` defaults to one repetition period past the last kick or the
    sequence gate time, whichever is later. Integration steps subdivide each
    inter-kick segment so kicks land exactly on step boundaries; segments
    whose relative energy drift exceeds the tolerance are re-integrated with
    a halved step.
    """
    sys = _TwoIonSystem(trap, coulomb)
    w = trap.omega_t
    kick_times = np.sort(train.times) * w          # dimensionless
    if train.kick_count and np.any(np.diff(kick_times) <= 0):
        raise FastGateError("kick times must be strictly increasing")
    t_start = min(0.0, kick_times[0] if len(kick_times) else 0.0)
    if t_final is None:
        if train.kick_count:
            t_end = max(kick_times[-1] + (1.0 / train.f_rep) * w, 0.0)
        else:
            t_end = 2 * np.pi
    else:
        t_end = t_final * w
        if train.kick_count and t_end < kick_times[-1]:
            raise FastGateError("t_final precedes the last kick")

    order = np.argsort(train.times)
    signs = train.signs[order].astype(float) if train.kick_count else np.zeros(0)

    y = np.zeros((5, 2))        # displacements from equilibrium
    v = np.zeros((5, 2))
    phi = np.zeros(5)
    linearized = coulomb == LINEARIZED_COULOMB

    h0 = 2 * np.pi * step_fraction
    events = list(kick_times) + [t_end]
    histories = {label: [] for label in BASIS_LABELS} if record else None
    drift_sum = 0.0
    free_time = 0.0
    e_buf = np.empty(5)
    eps_floor = 64 * np.finfo(float).eps

    def record_point(t_now):
        if not record:
            return
        for k, label in enumerate(BASIS_LABELS):
            histories[label].append(
                (t_now / w, y[k, 0], y[k, 1], v[k, 0], v[k, 1], phi[k])
            )

    t_now = t_start
    record_point(t_now)
    for j, t_event in enumerate(events):
        duration = t_event - t_now
        if duration < -1e-12:
            raise FastGateError("kick events are not time ordered")
        if duration > 1e-15:
            n, h = _segment_steps(duration, h0)
            _energies(y, v, sys.gamma, sys.s0, linearized, potential_offset, e_buf)
            e_before = e_buf.copy()
            ok = False
            for attempt in range(_MAX_REFINES + 1):
                y_try, v_try, phi_try = y.copy(), v.copy(), phi.copy()
                sep = _rk4_free(y_try, v_try, phi_try, n, h, sys.gamma,
                                sys.s0, linearized, potential_offset)
                if sep <= 0.0:
                    raise FastGateError(
                        "ions crossed during free evolution; kick amplitudes "
                        "are outside the model's validity"
                    )
                _energies(y_try, v_try, sys.gamma, sys.s0, linearized,
                          potential_offset, e_buf)
                scale = np.maximum(np.abs(e_before), 1.0)
                drift = float(np.max(np.abs(e_buf - e_before) / scale))
                budget = drift_tolerance * duration / (2 * np.pi) + eps_floor
                if drift <= budget or duration < h0:
                    ok = True
                    break
                n, h = 2 * n, h / 2
            if not ok:
                raise ConvergenceError(
                    f"energy drift {drift:.3e} over a {duration:.3e} rad segment "
                    f"exceeds tolerance after {_MAX_REFINES} refinements",
                    residual=drift,
                )
            drift_sum += drift
            free_time += duration
            y, v, phi = y_try, v_try, phi_try
        if j < len(kick_times):
            dv = signs[j] * sys.kick_dv
            v += _SIGNS * dv
        t_now = t_event
        record_point(t_now)

    per_period_drift = drift_sum / max(free_time / (2 * np.pi), 1e-300)

    # convention-complete phase: boundary term minus the action integral
    dx = y - y[0]
    dvel = v - v[0]
    phases = {}
    for k, label in enumerate(BASIS_LABELS):
        boundary = 0.5 * float(dx[k] @ dvel[k])
        phases[label] = boundary - (phi[k] - phi[0])

    disp_total = np.sqrt(0.5 * dx[1:] ** 2 + 0.5 * dvel[1:] ** 2)

    x0 = sys.x0
    finals = {}
    for k, label in enumerate(BASIS_LABELS):
        finals[label] = TrajectoryState(
            positions=(y[k] + sys.eq) * x0,
            velocities=v[k] * x0 * w,
            phase=phases[label],
            time=t_now / w,
        )

    hist_out = None
    if record:
        hist_out = {}
        for label in BASIS_LABELS:
            arr = np.asarray(histories[label])
            arr[:, 1:3] = (arr[:, 1:3] + sys.eq) * x0
            arr[:, 3:5] *= x0 * w
            hist_out[label] = arr

    try:
        modes = normal_modes(trap)
    except FastGateError:
        modes = None

    return TrajectorySet(
        trap=trap,
        train=train,
        t_final=t_now / w,
        final_states=finals,
        phases=phases,
        displacements=disp_total,
        energy_drift_per_period=per_period_drift,
        coulomb=coulomb,
        histories=hist_out,
        modes=modes,
    )


IDEAL_PHASES = {"00": np.pi / 4, "01": -np.pi / 4, "10": -np.pi / 4, "11": np.pi / 4}


def entangling_phase(tset: TrajectorySet) -> float:
    """The two-qubit (ZZ) component of the accumulated basis-state phases."""
    p = tset.phases
    return 0.25 * (p["00"] + p["11"] - p["01"] - p["10"])


def ode_phase_mismatch(tset: TrajectorySet) -> float:
    """Deviation of the acquired phase pattern from the controlled-phase ideal.

    The four basis-state phases decompose exactly over the Pauli basis
    {1, Z1, Z2, Z1 Z2}. The identity component is the global phase and the
    single-qubit components are deterministic local rotations, calibrated
    away in any implementation (the target gate is defined up to local
    rotations); removing all three leaves the entangling component, whose
    worst-case residual against +-pi/4 is returned. Either sign implements
    the gate, so the smaller mismatch wins. In the linearised limit the
    local components vanish identically and this reduces to the plain
    global-phase removal.
    """
    ent = entangling_phase(tset)
    return float(abs(abs(ent) - np.pi / 4))


def ode_motional_displacement(tset: TrajectorySet, ion: int) -> float:
    """Worst-case phase-space distance of one ion from the reference at T."""
    return float(np.max(tset.displacements[:, ion]))


def ode_infidelity(tset: TrajectorySet, nbar: float | None = None) -> OdeInfidelity:
    """Position-basis infidelity bound from the simulated trajectories."""
    nb = tset.trap.nbar if nbar is None else float(nbar)
    dphi = ode_phase_mismatch(tset)
    dp = np.array([ode_motional_displacement(tset, i) for i in (0, 1)])
    total = (2 / 3) * dphi**2 + (4 / 3) * (0.5 + nb) * float(dp @ dp)
    return OdeInfidelity(delta_phi=dphi, ion_displacements=dp, total=total)
