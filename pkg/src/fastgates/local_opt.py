"""Phase-two refinement of pulse-group timings against the ODE cost.

Group pair counts stay frozen at their phase-one integers; only the timings
move, inside a window that may extend the nominal gate time by a bounded
factor. Every candidate is snapped to the repetition-rate grid before
evaluation, so the refined solution is feasible at the requested rate by
construction.

The snapped cost is piecewise constant between grid slots, which makes the
search an integer problem over whole-slot shifts of each group's pulse
block. Walking it directly on the ODE would cost thousands of integrations,
so the search descends a corrected surrogate instead: the linearised
per-mode return amplitudes and entangling phase of the shifted train, plus a
frozen offset measured against the full ODE at the current anchor point.
The offset varies slowly with the timings (it is the Coulomb non-linearity's
contribution), so re-anchoring every few accepted moves keeps the surrogate
faithful while the full integrations stay countable. The incumbent is kept
throughout: the result never regresses below the grid-snapped input.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .cost import LinearCostModel, truncated_infidelity
from .dynamics import FULL_COULOMB, entangling_phase, ode_infidelity, simulate_gate
from .exceptions import BudgetExceededError, FastGateError, GridCollisionError
from .global_opt import GateSolution
from .schemes import KickTrain, PulseSequence, expand_to_kick_train, min_repetition_rate
from .trap import TrapConfiguration, normal_modes

_PENALTY = 1e6

#: per-basis qubit signs, order (00, 01, 10, 11)
_BASIS_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


@dataclass(frozen=True)
class LocalSearchConfig:
    """Settings of the timing refinement."""

    f_rep: float                     # Hz
    extension: float = 1.25          # allowed gate-time stretch factor
    max_evaluations: int = 400       # ODE evaluation budget
    shift_radius: int = 0            # grid-shift neighbourhood (enumeration op)
    coulomb: str = FULL_COULOMB
    anchor_interval: int = 3         # accepted surrogate moves per re-anchor
    descent_rounds: int = 400
    fatol: float = 1e-9

    def __post_init__(self):
        if self.f_rep <= 0:
            raise FastGateError("repetition rate must be positive")
        if self.extension < 1:
            raise FastGateError("gate-time extension factor must be >= 1")


class _OdeObjective:
    """Snapped ODE cost over group timings, with incumbent tracking."""

    def __init__(self, z, gate_time, trap, cfg: LocalSearchConfig, window):
        self.z = np.asarray(z)
        self.gate_time = gate_time
        self.trap = trap
        self.cfg = cfg
        self.window = window
        self.t_final = window[1] + 1.0 / cfg.f_rep
        self.evaluations = 0
        self.best = (np.inf, None, None)   # cost, times, ode result

    def feasible_sequence(self, times):
        cfg = self.cfg
        lo, hi = self.window
        if np.any(times < lo) or np.any(times > hi):
            return None
        order = np.argsort(times, kind="stable")
        t_sorted = times[order]
        if len(t_sorted) > 1 and np.any(np.diff(t_sorted) < 0.5 / cfg.f_rep):
            return None  # coincident groups would merge and change z
        seq = PulseSequence(z=self.z[order], times=t_sorted, gate_time=self.gate_time)
        if min_repetition_rate(seq) > cfg.f_rep:
            return None
        return seq

    def train_for(self, times):
        seq = self.feasible_sequence(times)
        if seq is None:
            return None
        try:
            return expand_to_kick_train(seq, self.cfg.f_rep)
        except GridCollisionError:
            return None

    def simulate(self, times):
        """Full ODE solution for feasible timings, or None."""
        train = self.train_for(times)
        if train is None:
            return None
        if self.evaluations >= self.cfg.max_evaluations:
            raise _BudgetReached
        self.evaluations += 1
        tset = simulate_gate(
            train, self.trap, t_final=self.t_final, coulomb=self.cfg.coulomb
        )
        result = ode_infidelity(tset)
        if result.total < self.best[0]:
            self.best = (result.total, times.copy(), result)
        return tset, result

    def __call__(self, times: np.ndarray) -> float:
        out = self.simulate(times)
        return _PENALTY if out is None else out[1].total


class _BudgetReached(Exception):
    pass


def _window(seq: PulseSequence, extension: float):
    lo = min(0.0, float(seq.times[0]))
    return lo, lo + extension * seq.gate_time


def evaluate_snapped(solution: GateSolution, trap: TrapConfiguration,
                     cfg: LocalSearchConfig):
    """ODE infidelity of the input solution snapped to the grid."""
    seq = solution.sequence
    f_min = min_repetition_rate(seq)
    if cfg.f_rep < f_min:
        raise GridCollisionError(
            f"f_rep = {cfg.f_rep:.6g} Hz cannot embed this sequence; "
            f"minimum resolving rate is {f_min:.6g} Hz"
        )
    window = _window(seq, cfg.extension)
    train = expand_to_kick_train(seq, cfg.f_rep)
    tset = simulate_gate(
        train, trap, t_final=window[1] + 1.0 / cfg.f_rep, coulomb=cfg.coulomb
    )
    return ode_infidelity(tset)


class _CorrectedSurrogate:
    """Group-phasor model of a rigidly shifted train plus a frozen ODE offset.

    Rigid whole-slot shifts of the pulse blocks leave every within-group
    structure constant, so the linearised entangling phase and per-mode
    return amplitudes of any shift assignment follow from per-group phasors
    in a few dozen flops. The anchor measurement supplies the slowly varying
    difference between the linear prediction and the full dynamics; candidate
    assignments are scored by reassembling the position-basis infidelity from
    prediction + offset.
    """

    def __init__(self, objective: _OdeObjective, trap: TrapConfiguration,
                 base_times: np.ndarray):
        modes = normal_modes(trap)
        self.model = LinearCostModel(
            modes, 0, 1, trap.lamb_dicke,
            nbar=trap.nbar, pair_momentum=trap.pair_momentum,
        )
        self.objective = objective
        self.trap = trap
        self.omega_t = trap.omega_t
        self.wt = modes.frequencies / trap.omega_t        # dimensionless
        self.b = modes.couplings                           # (P, 2)
        self.nbar = float(np.atleast_1d(trap.nbar)[0])
        self.kick = trap.pair_momentum * np.sqrt(2.0) * trap.lamb_dicke
        self.c_basis = self.b @ _BASIS_SIGNS.T             # (P, 4)
        self.t_final = objective.t_final
        self.slot = 1.0 / objective.cfg.f_rep
        self.phase_offset = 0.0
        self.amp_offset = np.zeros((len(self.wt), 4), dtype=complex)

        # per-group phasors of the baseline snapped train
        self.base_times = base_times.copy()
        train = objective.train_for(base_times)
        seq = objective.feasible_sequence(base_times)
        order = np.argsort(base_times, kind="stable")
        self.group_order = order
        starts, extents = [], []
        fwd = []
        within = np.zeros(len(self.wt))
        t_cursor = 0
        tt = self.omega_t * train.times
        signs = train.signs.astype(float)
        bounds_lo = []
        bounds_hi = []
        for zk in seq.z:
            m = int(abs(zk))
            sl = slice(t_cursor, t_cursor + m)
            t_cursor += m
            fwd.append([
                np.sum(signs[sl] * np.exp(1j * w * tt[sl])) for w in self.wt
            ])
            bounds_lo.append(train.slots[sl][0])
            bounds_hi.append(train.slots[sl][-1])
            for p, w in enumerate(self.wt):
                e = signs[sl] * np.exp(1j * w * tt[sl])
                pref = np.cumsum(e) - e
                within[p] += float(np.imag(np.sum(e * np.conj(pref))))
        self.fwd = np.array(fwd).T                          # (P, G) forward phasors
        self.within = within                                # per-mode within-group pair sums
        self.block_lo = np.asarray(bounds_lo, dtype=np.int64)
        self.block_hi = np.asarray(bounds_hi, dtype=np.int64)
        self.slot_angle = self.wt * self.omega_t * self.slot   # rad per slot per mode
        self.window_slots = (
            int(np.ceil(objective.window[0] / self.slot)),
            int(np.floor(objective.window[1] / self.slot)),
        )
        self.phase_w = self.model._phase_w
        self.n_groups = len(seq.z)

    # -- linear parts under rigid shifts -------------------------------

    def _phasors(self, m: np.ndarray):
        rot = np.exp(1j * np.outer(self.slot_angle, m))     # (P, G)
        return self.fwd * rot

    def feasible(self, m: np.ndarray) -> bool:
        lo = self.block_lo + m.astype(np.int64)
        hi = self.block_hi + m.astype(np.int64)
        if lo[0] < self.window_slots[0] or hi[-1] > self.window_slots[1]:
            return False
        return bool(np.all(lo[1:] - hi[:-1] >= 1))

    def linear_parts(self, m: np.ndarray):
        f = self._phasors(m)                                # (P, G)
        # between-group pair sums: groups keep their time order
        pref = np.cumsum(f.conj(), axis=1) - f.conj()
        pair = self.within + np.imag(np.sum(f * pref, axis=1))
        theta = float(self.phase_w @ pair)
        amps = 1j * self.kick / np.sqrt(2 * self.wt) * f.sum(axis=1)
        return theta, amps

    def cost_m(self, m: np.ndarray) -> float:
        if not self.feasible(m):
            return np.inf
        theta, amps = self.linear_parts(m)
        return self._assemble(theta, amps)

    def _assemble(self, theta_lin: float, amps: np.ndarray) -> float:
        ent = theta_lin + self.phase_offset
        dphi = abs(abs(ent) - np.pi / 4)
        u = amps[:, None] * self.c_basis + self.amp_offset  # (P, 4)
        wp = self.wt[:, None]
        tf = self.t_final * self.omega_t
        v = u * np.exp(-1j * wp * tf) / np.sqrt(wp / 2)
        dx = self.b.T @ v.real                               # (2, 4)
        dv = self.b.T @ (wp * v.imag)
        dp = np.sqrt(0.5 * dx**2 + 0.5 * dv**2)
        worst = dp.max(axis=1)
        return (2 / 3) * dphi**2 + (4 / 3) * (0.5 + self.nbar) * float(worst @ worst)

    def times_for(self, m: np.ndarray) -> np.ndarray:
        times = self.base_times.copy()
        times[self.group_order] = times[self.group_order] + m * self.slot
        return times

    def measure(self, m: np.ndarray) -> float | None:
        """Re-anchor the offsets with one full ODE solution; returns ODE cost."""
        times = self.times_for(m)
        out = self.objective.simulate(times)
        if out is None:
            return None
        tset, result = out
        theta_lin, amps = self.linear_parts(m)
        self.phase_offset = entangling_phase(tset) - theta_lin
        ref = tset.final_states["ref"]
        x0 = self.trap.ground_state_length
        w = self.omega_t
        tf = tset.t_final * w
        for j, label in enumerate(("00", "01", "10", "11")):
            fs = tset.final_states[label]
            dx = (fs.positions - ref.positions) / x0
            dv = (fs.velocities - ref.velocities) / (x0 * w)
            for p, wp in enumerate(self.wt):
                q = self.b[p] @ dx
                qd = self.b[p] @ dv
                u = np.sqrt(wp / 2) * (q + 1j * qd / wp) * np.exp(1j * wp * tf)
                self.amp_offset[p, j] = u - amps[p] * self.c_basis[p, j]
        return result.total


def _shift_move_pool(surrogate: _CorrectedSurrogate) -> np.ndarray:
    """Integer shift vectors ranked by how little they disturb restoration."""
    n = surrogate.n_groups
    jac = []
    for p, w in enumerate(surrogate.wt):
        row = -1j * surrogate.slot_angle[p] * surrogate.fwd[p]
        jac.append(row.real)
        jac.append(row.imag)
    jac = np.asarray(jac)                                   # (2P, G)
    singles = []
    for k in range(n):
        u = np.zeros(n)
        u[k] = 1.0
        singles.append(u)
    combos = [u for u in singles]
    for k in range(n):
        for j in range(k + 1, n):
            for sk, sj in ((1, -1), (1, 1)):
                u = np.zeros(n)
                u[k], u[j] = sk, sj
                combos.append(u)
    for k in range(n):
        for j in range(k + 1, n):
            for l in range(j + 1, n):
                for pat in ((1, -1, 1), (1, -2, 1), (1, 1, -2), (2, -1, -1)):
                    u = np.zeros(n)
                    u[k], u[j], u[l] = pat
                    combos.append(u)
    pool = np.array(combos)
    norms = np.linalg.norm(jac @ pool.T, axis=0)
    order = np.argsort(norms)
    pool = pool[order]
    scales = (1, 2, 3, 5, 8, 13, 21, 34, 55)
    stacked = []
    for s in scales:
        stacked.append(s * pool)
        stacked.append(-s * pool)
    return np.vstack(stacked).astype(int)


def _surrogate_minimize(surrogate: _CorrectedSurrogate, moves: np.ndarray,
                        m0: np.ndarray, max_rounds: int):
    m = m0.copy()
    current = surrogate.cost_m(m)
    if not np.isfinite(current):
        return m, current
    for _ in range(max_rounds):
        costs = np.array([surrogate.cost_m(m + u) for u in moves])
        k = int(np.argmin(costs))
        if not np.isfinite(costs[k]) or costs[k] >= current - 1e-300:
            break
        m = m + moves[k]
        current = costs[k]
    return m, current


def _anchored_descent(objective: _OdeObjective, surrogate: _CorrectedSurrogate,
                      cfg: LocalSearchConfig):
    """Surrogate lattice descent with periodic ODE re-anchoring.

    One descent runs from the unshifted train; further descents start from
    seeded random shift assignments, all scored on the corrected surrogate,
    and the most promising few are confirmed against the full ODE. Anchoring
    repeats at each new incumbent so the frozen Coulomb offsets stay local.
    """
    moves = _shift_move_pool(surrogate)
    rng = np.random.default_rng(0)
    m = np.zeros(surrogate.n_groups, dtype=int)
    if surrogate.measure(m) is None:
        return
    best_m = m.copy()

    for cycle in range(6):
        if objective.evaluations >= cfg.max_evaluations:
            return
        # multi-start surrogate descents around the incumbent
        seeds = [best_m.copy()]
        span = max(4, 30 // (1 + cycle))
        for _ in range(24):
            kick = rng.integers(-span, span + 1, surrogate.n_groups)
            cand = best_m + kick
            if surrogate.feasible(cand):
                seeds.append(cand)
        finals = []
        for seed in seeds:
            mm, cost = _surrogate_minimize(surrogate, moves, seed, cfg.descent_rounds)
            if np.isfinite(cost):
                finals.append((cost, mm))
        finals.sort(key=lambda t: t[0])
        # confirm the best few distinct candidates against the ODE
        seen = set()
        improved = False
        for cost, mm in finals[:6]:
            key = tuple(mm.tolist())
            if key in seen:
                continue
            seen.add(key)
            before = objective.best[0]
            ode_cost = surrogate.measure(mm)
            if ode_cost is None:
                continue
            if ode_cost < before - 1e-300:
                best_m = mm.copy()
                improved = True
                break
        if not improved:
            return


def optimize_local(solution: GateSolution, trap: TrapConfiguration,
                   cfg: LocalSearchConfig) -> GateSolution:
    """Refine group timings at fixed integer pair counts.

    Returns a solution whose grid-snapped ODE infidelity is no worse than the
    input's. Exhausting the evaluation budget mid-search is not an error; the
    best candidate found so far is returned and flagged.
    """
    seq = solution.sequence
    if seq.group_count == 0:
        raise FastGateError("cannot refine an empty sequence")
    window = _window(seq, cfg.extension)
    objective = _OdeObjective(seq.z, seq.gate_time, trap, cfg, window)

    x0 = seq.times.astype(float).copy()
    if objective.train_for(x0) is None:
        f_min = min_repetition_rate(seq)
        raise GridCollisionError(
            f"input sequence has no feasible grid embedding at "
            f"f_rep = {cfg.f_rep:.6g} Hz (f_min = {f_min:.6g} Hz)"
        )
    baseline = objective(x0)

    surrogate = _CorrectedSurrogate(objective, trap, x0)
    budget_hit = False
    try:
        _anchored_descent(objective, surrogate, cfg)
    except _BudgetReached:
        budget_hit = True

    best_cost, best_times, best_ode = objective.best
    order = np.argsort(best_times, kind="stable")
    refined = PulseSequence(
        z=seq.z[order], times=best_times[order], gate_time=seq.gate_time
    )
    ion_pair = solution.metadata.get("ion_pair", [0, 1])
    breakdown = truncated_infidelity(
        refined, normal_modes(trap), ion_pair[0], ion_pair[1], trap.lamb_dicke,
        nbar=trap.nbar, pair_momentum=trap.pair_momentum,
    )
    metadata = dict(solution.metadata)
    metadata.update({
        "provenance": "local",
        "f_rep": cfg.f_rep,
        "ode_infidelity": best_ode.as_dict(),
        "ode_infidelity_input": float(baseline),
        "ode_evaluations": int(objective.evaluations),
        "budget_exhausted": bool(budget_hit),
        "extension": cfg.extension,
        "coulomb": cfg.coulomb,
    })
    return GateSolution(
        sequence=refined,
        breakdown=breakdown,
        f_min=min_repetition_rate(refined),
        metadata=metadata,
    )


def enumerate_grid_shifts(solution: GateSolution, trap: TrapConfiguration,
                          cfg: LocalSearchConfig) -> GateSolution:
    """Exhaustive ODE search over whole-slot shifts of each group's block.

    Evaluates every combination of per-group shifts within +-shift_radius
    slots (skipping infeasible overlaps) and returns the minimum-cost
    assignment. The combination count must fit the evaluation budget.
    """
    seq = solution.sequence
    r = cfg.shift_radius
    if r < 0:
        raise FastGateError("shift radius must be >= 0")
    combos = (2 * r + 1) ** seq.group_count
    if combos > cfg.max_evaluations:
        raise BudgetExceededError(
            f"{combos} grid-shift combinations exceed the budget of "
            f"{cfg.max_evaluations}; reduce the radius (r = {r})"
        )
    window = _window(seq, cfg.extension)
    objective = _OdeObjective(seq.z, seq.gate_time, trap, cfg, window)
    slot = 1.0 / cfg.f_rep
    base = seq.times.astype(float)
    for shifts in product(range(-r, r + 1), repeat=seq.group_count):
        times = base + slot * np.asarray(shifts, dtype=float)
        objective(times)
    if objective.best[1] is None:
        raise GridCollisionError(
            "no feasible shift assignment in the requested neighbourhood"
        )
    best_cost, best_times, best_ode = objective.best
    order = np.argsort(best_times, kind="stable")
    refined = PulseSequence(
        z=seq.z[order], times=best_times[order], gate_time=seq.gate_time
    )
    metadata = dict(solution.metadata)
    metadata.update({
        "provenance": "grid-shift",
        "f_rep": cfg.f_rep,
        "shift_radius": r,
        "ode_infidelity": best_ode.as_dict(),
        "ode_evaluations": int(objective.evaluations),
    })
    return GateSolution(
        sequence=refined,
        breakdown=solution.breakdown,
        f_min=min_repetition_rate(refined),
        metadata=metadata,
    )
