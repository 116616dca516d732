"""Worst-case gate fidelity under imperfect pulse rotations.

Each pulse pair may perform a slightly errant Bloch-sphere rotation with
transition error probability ``epsilon``; across ``n_pairs`` pulse pairs the
realistic fidelity is bounded by

    F = |1 - 2 N eps + N^2 eps^2| * F0 .

The quadratic expansion only holds while N*eps stays small; rows beyond a
configurable cutoff are flagged and rendered empty in tables.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .exceptions import FastGateError

#: beyond this N*eps the quadratic error model is not trustworthy
DEFAULT_REGIME_CUTOFF = 0.5


@dataclass(frozen=True)
class PulseErrorSpec:
    """Inputs of the degraded-fidelity bound for one gate."""

    transition_error: float   # epsilon, probability in [0, 1)
    pulse_pair_count: int     # N_p
    ideal_fidelity: float     # F0 in [0, 1]
    regime_cutoff: float = DEFAULT_REGIME_CUTOFF

    def __post_init__(self):
        if not 0 <= self.transition_error < 1:
            raise FastGateError("transition error must lie in [0, 1)")
        if self.pulse_pair_count < 1:
            raise FastGateError("pulse pair count must be positive")
        if not 0 <= self.ideal_fidelity <= 1:
            raise FastGateError("ideal fidelity must lie in [0, 1]")

    @property
    def in_regime(self) -> bool:
        return self.pulse_pair_count * self.transition_error <= self.regime_cutoff


def degraded_fidelity(spec: PulseErrorSpec) -> float:
    """Lower bound on the realistic fidelity; check ``spec.in_regime`` first."""
    n_eps = spec.pulse_pair_count * spec.transition_error
    return abs(1 - 2 * n_eps + n_eps**2) * spec.ideal_fidelity


def epsilon_from_intensity_noise(relative_fluctuation: float) -> float:
    """Transition error of a square pulse with relative intensity noise dI/I."""
    if relative_fluctuation < 0:
        raise FastGateError("relative intensity fluctuation must be >= 0")
    return (np.pi**2 / 8) * relative_fluctuation


@dataclass(frozen=True)
class ErrorBudgetRow:
    gate_time: float            # trap periods (presentation value)
    ideal_infidelity: float     # 1 - F0
    pulse_pairs: int
    infidelities: list          # 1 - F per epsilon; None where out of regime


def error_budget_table(solutions, epsilons, *,
                       regime_cutoff: float = DEFAULT_REGIME_CUTOFF,
                       trap_period: float | None = None) -> list[ErrorBudgetRow]:
    """Realistic-infidelity grid for a list of gate solutions.

    ``solutions`` may be GateSolution objects or (gate_time, ideal_infidelity,
    pulse_pairs) triples; gate times are reported in trap periods when
    ``trap_period`` is given.
    """
    rows = []
    for sol in solutions:
        if hasattr(sol, "sequence"):
            gate_time = sol.sequence.gate_time
            ideal_inf = sol.breakdown.total
            n_pairs = sol.pulse_pair_count
        else:
            gate_time, ideal_inf, n_pairs = sol
        if trap_period:
            gate_time = gate_time / trap_period
        cells = []
        for eps in epsilons:
            spec = PulseErrorSpec(
                transition_error=eps,
                pulse_pair_count=int(n_pairs),
                ideal_fidelity=1 - ideal_inf,
                regime_cutoff=regime_cutoff,
            )
            cells.append(1 - degraded_fidelity(spec) if spec.in_regime else None)
        rows.append(ErrorBudgetRow(
            gate_time=float(gate_time),
            ideal_infidelity=float(ideal_inf),
            pulse_pairs=int(n_pairs),
            infidelities=cells,
        ))
    return rows


def budget_to_csv(rows, epsilons) -> str:
    out = io.StringIO()
    heads = ["gate_time", "ideal_infidelity", "pulse_pairs"]
    heads += [f"eps={eps:g}" for eps in epsilons]
    out.write(",".join(heads) + "\n")
    for row in rows:
        cells = [f"{row.gate_time:g}", f"{row.ideal_infidelity:.6g}", str(row.pulse_pairs)]
        cells += ["" if v is None else f"{v:.6g}" for v in row.infidelities]
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def budget_to_text(rows, epsilons) -> str:
    """Aligned table, one row per gate, empty cells outside the model regime."""
    heads = ["T_G", "1-F0", "N"] + [f"eps={eps:g}" for eps in epsilons]
    table = [heads]
    for row in rows:
        cells = [f"{row.gate_time:g}", f"{row.ideal_infidelity:.2g}", str(row.pulse_pairs)]
        cells += ["-" if v is None else f"{v:.2g}" for v in row.infidelities]
        table.append(cells)
    widths = [max(len(r[c]) for r in table) for c in range(len(heads))]
    lines = [
        "  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in table
    ]
    return "\n".join(lines) + "\n"
