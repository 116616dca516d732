"""Pulse-sequence construction, repetition-rate analysis and grid expansion.

A gate is a short train of pulse groups: group ``k`` delivers ``z_k``
counter-propagating pulse pairs around time ``t_k``, the sign of ``z_k``
setting the kick direction. Four parameterisations are supported:

* six-group fixed-ratio schemes with pair counts n*(-a,-b,-c,c,b,a) at
  symmetric times (-tau1,-tau2,-tau3,tau3,tau2,tau1), with
  (a,b,c) = (2,-3,2) ["gzc"] or (1,-2,2) ["frag"];
* "gpg": free integer pair counts at regular spacings (T_G/N)*(1..N);
* "apg": the antisymmetric restriction z(-t) = -z(t) on 2*(N/2) groups at
  (T_G/N)*(-N/2..-1, 1..N/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import FastGateError, GridCollisionError, SchemeError

GZC_RATIOS = (2, -3, 2)
FRAG_RATIOS = (1, -2, 2)

_RATIOS = {"gzc": GZC_RATIOS, "frag": FRAG_RATIOS}


@dataclass(frozen=True)
class PulseSequence:
    """Ordered pulse groups (z_k, t_k) with the nominal gate time."""

    z: np.ndarray          # signed integer pair counts, zeros dropped
    times: np.ndarray      # seconds, strictly increasing
    gate_time: float       # seconds

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z))
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if z.shape != t.shape:
            raise SchemeError("z and times must have equal length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise SchemeError("group times must be strictly increasing")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "times", t)

    @classmethod
    def from_groups(cls, z, times, gate_time) -> "PulseSequence":
        """Sort by time, merge coincident groups, drop empty ones."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        t = np.atleast_1d(np.asarray(times, dtype=float))
        order = np.argsort(t, kind="stable")
        z, t = z[order], t[order]
        merged_z, merged_t = [], []
        for zk, tk in zip(z, t):
            if merged_t and abs(tk - merged_t[-1]) <= 1e-15 * max(abs(tk), abs(merged_t[-1]), 1e-300):
                merged_z[-1] += zk
            else:
                merged_z.append(zk)
                merged_t.append(tk)
        z = np.asarray(merged_z)
        t = np.asarray(merged_t)
        keep = z != 0
        z, t = z[keep], t[keep]
        if np.allclose(z, np.round(z)):
            z = np.round(z).astype(int)
        return cls(z=z, times=t, gate_time=float(gate_time))

    @property
    def group_count(self) -> int:
        return len(self.z)

    @property
    def pulse_pair_count(self) -> int:
        """Total pulse pairs N_p = sum |z_k|."""
        return int(np.sum(np.abs(self.z)))

    def is_antisymmetric(self, rel_tol=1e-9) -> bool:
        """True when z(-t) = -z(t) for every group."""
        if self.group_count == 0:
            return True
        span = max(abs(self.times[0]), abs(self.times[-1]))
        zs = self.z[::-1]
        ts = -self.times[::-1]
        return bool(
            np.all(zs == -self.z) and np.allclose(ts, self.times, atol=rel_tol * max(span, 1e-300))
        )


@dataclass(frozen=True)
class SchemeParams:
    """Parameters selecting and filling one of the pulse-group schemes."""

    kind: str                      # "gzc" | "frag" | "gpg" | "apg"
    gate_time: float               # seconds
    z: np.ndarray | None = None    # gpg: full vector
    half_z: np.ndarray | None = None  # apg: positive-time half
    n: int | None = None           # gzc/frag: pair-count multiplier
    taus: tuple | None = None       # gzc/frag: (tau1, tau2, tau3), seconds

    def __post_init__(self):
        if self.kind not in ("gzc", "frag", "gpg", "apg"):
            raise SchemeError(f"unknown scheme kind {self.kind!r}")


@dataclass(frozen=True)
class KickTrain:
    """Individual pulse pairs on the repetition-rate grid.

    Slot indices are stored exactly; times are ``slots / f_rep`` so every
    kick is an integer multiple of the repetition period by construction.
    """

    slots: np.ndarray      # integer grid indices, strictly increasing
    signs: np.ndarray      # +-1 per kick
    f_rep: float           # Hz

    def __post_init__(self):
        slots = np.atleast_1d(np.asarray(self.slots, dtype=np.int64))
        signs = np.atleast_1d(np.asarray(self.signs, dtype=np.int64))
        if slots.shape != signs.shape:
            raise SchemeError("slots and signs must have equal length")
        if len(slots) > 1 and np.any(np.diff(slots) <= 0):
            raise SchemeError("kick slots must be strictly increasing (one kick per slot)")
        if len(signs) and not np.all(np.abs(signs) == 1):
            raise SchemeError("kick signs must be +-1")
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "signs", signs)

    @property
    def times(self) -> np.ndarray:
        return self.slots / self.f_rep

    @property
    def kick_count(self) -> int:
        return len(self.slots)

    def as_sequence(self, gate_time) -> PulseSequence:
        """View the train as a sequence of unit groups (for cost evaluation)."""
        return PulseSequence.from_groups(self.signs, self.times, gate_time)


def build_sequence(params: SchemeParams) -> PulseSequence:
    """Construct the pulse sequence described by ``params``."""
    kind = params.kind
    T = float(params.gate_time)
    if kind in ("gzc", "frag"):
        if params.n is None or params.taus is None:
            raise SchemeError(f"{kind} requires n and taus")
        taus = np.asarray(params.taus, dtype=float)
        if taus.shape != (3,) or np.any(taus <= 0):
            raise SchemeError(f"{kind} requires three positive timings")
        a, b, c = _RATIOS[kind]
        z = params.n * np.array([-a, -b, -c, c, b, a])
        t = np.array([-taus[0], -taus[1], -taus[2], taus[2], taus[1], taus[0]])
        return PulseSequence.from_groups(z, t, T)
    if kind == "gpg":
        if params.z is None:
            raise SchemeError("gpg requires a z vector")
        z = np.asarray(params.z)
        n = len(z)
        t = (T / n) * np.arange(1, n + 1)
        return PulseSequence.from_groups(z, t, T)
    # apg
    if params.half_z is None:
        raise SchemeError("apg requires the positive-time half of the z vector")
    half = np.asarray(params.half_z)
    n = 2 * len(half)
    if n == 0 or n % 2:
        raise SchemeError("apg requires an even, positive group count")
    z = np.concatenate([-half[::-1], half])
    k = np.concatenate([np.arange(-n // 2, 0), np.arange(1, n // 2 + 1)])
    t = (T / n) * k
    return PulseSequence.from_groups(z, t, T)


def scheme_times(kind: str, n_groups: int, gate_time: float) -> np.ndarray:
    """The fixed group times of the gpg/apg schemes (seconds)."""
    if kind == "gpg":
        return (gate_time / n_groups) * np.arange(1, n_groups + 1)
    if kind == "apg":
        if n_groups % 2:
            raise SchemeError("apg requires an even group count")
        k = np.concatenate([np.arange(-n_groups // 2, 0), np.arange(1, n_groups // 2 + 1)])
        return (gate_time / n_groups) * k
    raise SchemeError(f"scheme {kind!r} has no fixed time template")


def min_repetition_rate(seq: PulseSequence) -> float:
    """Smallest repetition rate resolving all pulse groups.

    Group k expanded at rate f occupies |z_k| consecutive slots centred on
    t_k; adjacent extents must stay at least one slot apart, giving
    f_min = max_k (|z_k| + |z_k+1|) / (2 (t_k+1 - t_k)).
    """
    if seq.group_count == 0:
        raise FastGateError("empty sequence has no repetition-rate requirement")
    if seq.group_count == 1:
        return 0.0
    gaps = np.diff(seq.times)
    if np.any(gaps <= 0):
        raise FastGateError("coincident group times imply an infinite repetition rate")
    sums = np.abs(seq.z[:-1]) + np.abs(seq.z[1:])
    return float(np.max(sums / (2 * gaps)))


def _nearest_slot(x: float) -> int:
    # ties between grid points round toward earlier times
    return int(math.ceil(x - 0.5))


def expand_to_kick_train(seq: PulseSequence, f_rep: float) -> KickTrain:
    """Break groups into unit kicks on consecutive grid slots.

    Each group becomes |z_k| kicks of sign(z_k) whose centroid sits on the
    grid point nearest t_k (half-slot offsets for even |z_k|).
    """
    if f_rep <= 0:
        raise FastGateError("repetition rate must be positive")
    fmin = min_repetition_rate(seq) if seq.group_count else 0.0
    if seq.group_count >= 2 and f_rep < fmin * (1 - 1e-12):
        raise GridCollisionError(
            f"f_rep = {f_rep:.6g} Hz below the resolving minimum {fmin:.6g} Hz"
        )
    slots, signs, owner = [], [], []
    for k, (zk, tk) in enumerate(zip(seq.z, seq.times)):
        m = int(abs(zk))
        s = 1 if zk > 0 else -1
        x = tk * f_rep
        if m % 2:
            centre = _nearest_slot(x)
            group = np.arange(centre - (m - 1) // 2, centre + (m - 1) // 2 + 1)
        else:
            left = _nearest_slot(x - 0.5)   # centroid at left + 1/2
            group = np.arange(left - m // 2 + 1, left + m // 2 + 1)
        slots.extend(group.tolist())
        signs.extend([s] * m)
        owner.extend([k] * m)
    slots = np.asarray(slots, dtype=np.int64)
    signs = np.asarray(signs, dtype=np.int64)
    owner = np.asarray(owner, dtype=np.int64)
    order = np.argsort(slots, kind="stable")
    slots, signs, owner = slots[order], signs[order], owner[order]
    dup = np.flatnonzero(np.diff(slots) == 0)
    if dup.size:
        g1, g2 = int(owner[dup[0]]), int(owner[dup[0] + 1])
        raise GridCollisionError(
            f"groups {g1} and {g2} collide on grid slot {int(slots[dup[0]])} at f_rep = {f_rep:.6g} Hz",
            groups=(g1, g2),
        )
    return KickTrain(slots=slots, signs=signs, f_rep=float(f_rep))
