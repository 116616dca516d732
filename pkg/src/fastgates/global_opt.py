"""Phase-one global search over pulse-scheme parameters.

Bound-constrained quasi-Newton (L-BFGS-B) restarts inside strict parameter
boundaries that widen geometrically over a fixed number of stages; the best
solution of each stage seeds the next. Pair counts are treated as continuous
during the search and rounded to integers when candidates are scored.

Because the continuous minima of the quartic cost form manifolds, a plain
nearest-integer rounding rarely lands on a deep lattice point. Rounded
candidates are therefore refined by an integer descent over compound moves
chosen to nearly null the (linear) motional-restoration map, interleaved
with continuous re-optimisation, and the final incumbent gets a seeded
perturb-and-descend polish. All of it stays inside the stage boundaries and
is deterministic for a fixed seed.

For the six-group fixed-ratio schemes the search runs over
(n, tau1, tau2, tau3) with finite-difference gradients, and the best
candidate's timings are polished by least squares on the condition residuals
at fixed integer n.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize

from .cost import LinearCostModel, PHASE_TARGET, InfidelityBreakdown
from .exceptions import FastGateError, NoSolutionError
from .schemes import PulseSequence, build_sequence, min_repetition_rate, scheme_times
from .trap import ModeStructure, TrapConfiguration

ROUNDING_DEGRADATION_FLAG = 10.0

_SIX_GROUP_RATIOS = {"gzc": (2, -3, 2), "frag": (1, -2, 2)}


@dataclass(frozen=True)
class GlobalSearchConfig:
    """Knobs of the expanding-boundary multi-start protocol."""

    scheme: str                      # "gzc" | "frag" | "gpg" | "apg"
    gate_time: float                 # seconds
    n_groups: int = 10               # gpg/apg group count
    ion_a: int = 0
    ion_b: int = 1
    z_bound: float = 20.0            # initial |z_k| bound (gpg/apg), n bound (gzc/frag)
    expansion_factor: float = 1.5
    stages: int = 6
    restarts: int = 48
    seed: int = 0
    gtol: float = 1e-12
    ftol: float = 1e-15
    max_f_min: float | None = None   # Hz; candidates above are infeasible
    eval_budget: int | None = None   # total cost evaluations (equal-compute mode)
    lattice_refine: bool = True      # integer refinement of rounded candidates
    refine_top: int = 12             # candidates refined per stage
    hop_iters: int = 40              # final perturb-and-descend iterations
    polish: bool = True              # gzc/frag: least-squares timing polish
    target_cost: float | None = None  # prefer fewest pulse pairs at/below this cost

    def __post_init__(self):
        if self.scheme not in ("gzc", "frag", "gpg", "apg"):
            raise FastGateError(f"unknown scheme {self.scheme!r}")
        if self.scheme in ("gpg", "apg") and self.n_groups < 2:
            raise FastGateError("need at least two pulse groups")
        if self.scheme == "apg" and self.n_groups % 2:
            raise FastGateError("apg requires an even group count")
        if self.expansion_factor <= 1:
            raise FastGateError("boundary expansion factor must exceed 1")
        if self.stages < 1 or self.restarts < 1:
            raise FastGateError("stages and restarts must be positive")

    @property
    def dimension(self) -> int:
        if self.scheme == "gpg":
            return self.n_groups
        if self.scheme == "apg":
            return self.n_groups // 2
        return 4


@dataclass(frozen=True)
class GateSolution:
    """Integer-rounded best candidate with its recomputed cost breakdown."""

    sequence: PulseSequence
    breakdown: InfidelityBreakdown
    f_min: float
    metadata: dict = field(default_factory=dict)

    @property
    def cost(self) -> float:
        return self.breakdown.total

    @property
    def pulse_pair_count(self) -> int:
        return self.sequence.pulse_pair_count


def round_to_integers(z) -> np.ndarray:
    """Nearest integer, ties away from zero."""
    z = np.asarray(z, dtype=float)
    return (np.sign(z) * np.floor(np.abs(z) + 0.5)).astype(int)


def extrapolate_gate_time(gate_time: float, f_old: float, f_new: float) -> float:
    """Rescale a gate time between repetition rates via T ~ f^(-2/5)."""
    if f_old <= 0 or f_new <= 0:
        raise FastGateError("repetition rates must be positive")
    return gate_time * (f_new / f_old) ** (-2 / 5)


class _FixedTimesCost:
    """Quartic cost over pair counts at fixed group times.

    total(x) = (2/3)(|x Q x / 2| - pi/4)^2 + wd . |E x|^2 where x is the
    search vector (full z for gpg, positive-time half for apg).
    """

    def __init__(self, model: LinearCostModel, times: np.ndarray, kind: str):
        E = np.exp(-1j * np.outer(model.omegas, times))
        n = len(times)
        dt = np.abs(times[:, None] - times[None, :])
        Q = np.zeros((n, n))
        for p in range(len(model.omegas)):
            Q += model._phase_w[p] * np.sin(model.omegas[p] * dt)
        np.fill_diagonal(Q, 0.0)
        if kind == "apg":
            h = n // 2
            emb = np.zeros((n, h))
            emb[:h, :] = -np.eye(h)[::-1]
            emb[h:, :] = np.eye(h)
            E = E @ emb
            Q = emb.T @ Q @ emb
        self.E = E
        self.Q = Q
        self.wd = (4 / 3) * (0.5 + model.nbar) * model._fid_w * model._disp_w**2
        self.dim = E.shape[1]

    def value(self, x) -> float:
        S = self.E @ x
        theta = 0.5 * x @ (self.Q @ x)
        return (2 / 3) * (abs(theta) - PHASE_TARGET) ** 2 + self.wd @ np.abs(S) ** 2

    def grad(self, x) -> np.ndarray:
        S = self.E @ x
        theta = 0.5 * x @ (self.Q @ x)
        dphi = abs(theta) - PHASE_TARGET
        return (4 / 3) * dphi * np.sign(theta) * (self.Q @ x) + 2 * np.real(
            (self.wd * np.conj(S)) @ self.E
        )


def _restoration_moves(cost: _FixedTimesCost, keep: int, max_entry: int = 3,
                       chunk: int = 250_000) -> np.ndarray:
    """Small integer vectors ranked by how little they disturb restoration.

    Enumerates sign-canonical vectors of bounded support and entry size and
    keeps those with the smallest weighted image under the linear map z -> S.
    """
    n = cost.dim
    max_support = 5 if n <= 12 else 4
    rows = np.vstack([
        np.real(cost.E) * np.sqrt(cost.wd)[:, None],
        np.imag(cost.E) * np.sqrt(cost.wd)[:, None],
    ])
    vals = [v for v in range(-max_entry, max_entry + 1) if v]
    best: list[tuple[float, np.ndarray]] = []
    buf: list[np.ndarray] = []

    def flush():
        nonlocal best, buf
        if not buf:
            return
        u_block = np.array(buf)
        buf = []
        norms = np.linalg.norm(rows @ u_block.T, axis=0)
        order = np.argsort(norms)[:keep]
        best = sorted(
            best + [(float(norms[i]), u_block[i]) for i in order], key=lambda t: t[0]
        )[:keep]

    for support in range(1, max_support + 1):
        for idx in itertools.combinations(range(n), support):
            for combo in itertools.product(vals, repeat=support):
                if combo[0] < 0:
                    continue
                u = np.zeros(n)
                u[list(idx)] = combo
                buf.append(u)
                if len(buf) >= chunk:
                    flush()
    flush()
    return np.array([u for _, u in best])


class _LatticeDescent:
    """Batched greedy integer descent over a fixed move pool."""

    SCALES = (1, 2, 3, 5, 8, 13, 21)

    def __init__(self, cost: _FixedTimesCost, moves: np.ndarray):
        self.cost = cost
        stacked = []
        for m in self.SCALES:
            stacked.append(m * moves)
            stacked.append(-m * moves)
        self.U = np.vstack(stacked)              # (M, dim)
        self.EU = cost.E @ self.U.T              # (P, M)
        self.QU = cost.Q @ self.U.T              # (dim, M)
        self.uQu = np.einsum("mn,nm->m", self.U, self.QU)

    def run(self, x0: np.ndarray, bound: float, max_rounds: int = 300):
        cost = self.cost
        x = x0.astype(float).copy()
        S = cost.E @ x
        theta = 0.5 * x @ (cost.Q @ x)
        best = (2 / 3) * (abs(theta) - PHASE_TARGET) ** 2 + cost.wd @ np.abs(S) ** 2
        rounds = 0
        for _ in range(max_rounds):
            rounds += 1
            thetas = theta + x @ self.QU + 0.5 * self.uQu
            s_new = S[:, None] + self.EU
            costs = (2 / 3) * (np.abs(thetas) - PHASE_TARGET) ** 2 + cost.wd @ np.abs(s_new) ** 2
            inside = np.max(np.abs(x[None, :] + self.U), axis=1) <= bound
            costs = np.where(inside, costs, np.inf)
            k = int(np.argmin(costs))
            if not np.isfinite(costs[k]) or costs[k] >= best - 1e-300:
                break
            x = x + self.U[k]
            best = float(costs[k])
            S = cost.E @ x
            theta = 0.5 * x @ (cost.Q @ x)
        return x, best, rounds * len(self.U)


class _SixGroupSpace:
    """(n, tau1..3) parameterisation of the fixed-ratio schemes."""

    def __init__(self, cfg: GlobalSearchConfig, model: LinearCostModel):
        self.cfg = cfg
        self.model = model
        self.ratios = _SIX_GROUP_RATIOS[cfg.scheme]
        self.t_lo = 1e-4 * cfg.gate_time
        self.t_hi = 0.5 * cfg.gate_time

    def groups(self, x):
        a, b, c = self.ratios
        z = x[0] * np.array([-a, -b, -c, c, b, a], dtype=float)
        taus = np.asarray(x[1:], dtype=float)
        t = np.array([-taus[0], -taus[1], -taus[2], taus[2], taus[1], taus[0]])
        order = np.argsort(t, kind="stable")
        return z[order], t[order]

    def value(self, x) -> float:
        return self.model.total(*self.groups(x))

    def bounds(self, stage: int):
        n_hi = max(1.0, self.cfg.z_bound * self.cfg.expansion_factor**stage)
        return [(1.0, n_hi)] + [(self.t_lo, self.t_hi)] * 3

    def round_params(self, x) -> np.ndarray:
        out = np.asarray(x, dtype=float).copy()
        out[0] = max(1.0, float(round_to_integers([x[0]])[0]))
        return out

    def polish(self, x) -> np.ndarray:
        """Least-squares root of (phase, per-mode restoration) over timings.

        Tries both phase-sign targets and keeps whichever lands lower; the
        antisymmetric construction leaves one sine residual per mode plus the
        phase condition, a square system in the three timings for two ions.
        """
        n = x[0]
        model = self.model
        x0 = np.clip(x[1:], self.t_lo * (1 + 1e-9), self.t_hi * (1 - 1e-9))
        best = x

        for target in (PHASE_TARGET, -PHASE_TARGET):

            def residuals(taus, target=target):
                z, t = self.groups(np.concatenate([[n], taus]))
                r = [model.phase_sum(z, t) - target]
                for p, w in enumerate(model.omegas):
                    r.append(model._disp_w[p] * float(np.dot(z, np.sin(w * t))))
                return np.asarray(r)

            try:
                res = least_squares(
                    residuals, x0, bounds=(self.t_lo, self.t_hi),
                    xtol=3e-16, ftol=3e-16, gtol=3e-16, max_nfev=600,
                )
            except ValueError:
                continue
            out = np.concatenate([[n], res.x])
            if self.value(out) < self.value(best):
                best = out
        return best


def _score(model, seq):
    if seq.group_count == 0:
        return model.breakdown(np.zeros(1), np.zeros(1)), 0.0
    breakdown = model.breakdown(seq.z, seq.times)
    f_min = min_repetition_rate(seq) if seq.group_count > 1 else 0.0
    return breakdown, f_min


def optimize_global(search: GlobalSearchConfig, trap: TrapConfiguration,
                    modes: ModeStructure) -> GateSolution:
    """Run the staged multi-start search and return the best rounded solution.

    Deterministic for a fixed seed. Raises NoSolutionError when every restart
    fails numerically. An all-zero rounding is returned as the (flagged)
    empty-gate limit.
    """
    model = LinearCostModel(
        modes, search.ion_a, search.ion_b, trap.lamb_dicke,
        nbar=trap.nbar, pair_momentum=trap.pair_momentum,
    )
    rng = np.random.default_rng(search.seed)
    t_start = time.perf_counter()
    budget = [search.eval_budget if search.eval_budget is not None else np.inf]
    used = [0]

    def spend(n):
        budget[0] -= n
        used[0] += n

    if search.scheme in ("gpg", "apg"):
        sol = _optimize_pulse_groups(search, model, rng, budget, spend)
    else:
        sol = _optimize_six_group(search, model, rng, budget, spend)
    if sol is None:
        raise NoSolutionError(
            "global search produced no usable candidate",
            diagnostics={"scheme": search.scheme, "budget_left": float(budget[0])},
        )
    x_best, log = sol

    if search.scheme in ("gpg", "apg"):
        times = scheme_times(search.scheme, search.n_groups, search.gate_time)
        if search.scheme == "apg":
            z = np.concatenate([-x_best[::-1], x_best])
        else:
            z = x_best
        seq = PulseSequence.from_groups(z, times, search.gate_time)
        cost_cont = None
    else:
        space = _SixGroupSpace(search, model)
        z, t = space.groups(x_best)
        seq = PulseSequence.from_groups(z, t, search.gate_time)
        cost_cont = None

    breakdown, f_min = _score(model, seq)
    best_rec = min(log, key=lambda r: r["cost_rounded"]) if log else {}
    metadata = {
        "scheme": search.scheme,
        "seed": search.seed,
        "gate_time": search.gate_time,
        "ion_pair": [search.ion_a, search.ion_b],
        "stage": best_rec.get("stage"),
        "restart": best_rec.get("restart"),
        "cost_continuous": best_rec.get("cost_continuous"),
        "rounding_degradation": None,
        "rounding_flagged": False,
        "degenerate_zero": bool(seq.group_count == 0),
        "evaluations_used": int(used[0]),
        "wall_time_s": time.perf_counter() - t_start,
        "stage_log": log,
        "provenance": "global",
    }
    if best_rec.get("cost_continuous"):
        degr = abs(breakdown.total - best_rec["cost_continuous"]) / max(
            best_rec["cost_continuous"], 1e-300
        )
        metadata["rounding_degradation"] = float(degr)
        metadata["rounding_flagged"] = bool(degr > ROUNDING_DEGRADATION_FLAG)
    return GateSolution(sequence=seq, breakdown=breakdown, f_min=f_min, metadata=metadata)


def _feasible(search, model, x, kind):
    """Rounded-candidate score and feasibility under the f_min cap."""
    if kind == "apg":
        z = np.concatenate([-x[::-1], x])
    else:
        z = x
    times = scheme_times(kind, search.n_groups, search.gate_time)
    seq = PulseSequence.from_groups(z, times, search.gate_time)
    breakdown, f_min = _score(model, seq)
    ok = search.max_f_min is None or f_min <= search.max_f_min
    return breakdown.total, f_min, ok


def _optimize_pulse_groups(search, model, rng, budget, spend):
    """gpg/apg staged search with lattice refinement of rounded candidates."""
    times = scheme_times(search.scheme, search.n_groups, search.gate_time)
    fast = _FixedTimesCost(model, times, search.scheme)
    dim = fast.dim
    descent = None
    if search.lattice_refine:
        pool = _restoration_moves(fast, keep=min(400, 40 * dim))
        descent = _LatticeDescent(fast, pool)

    def lbfgsb(x0, bound):
        cap = int(min(3000, budget[0]))
        if cap < 10:
            return None
        res = minimize(
            fast.value, x0, jac=fast.grad, method="L-BFGS-B",
            bounds=[(-bound, bound)] * dim,
            options={"maxfun": cap, "ftol": search.ftol, "gtol": search.gtol},
        )
        spend(res.nfev)
        return res

    log = []
    best = None          # (cost, x_int)
    best_compact = None  # (pulse_pairs, cost, x_int) subject to target_cost
    incumbent = None     # continuous seed

    def consider(x_int, stage, restart, cost_cont=None, nfev=0):
        nonlocal best, best_compact
        x_int = np.round(np.asarray(x_int, dtype=float))
        cost, f_min, ok = _feasible(search, model, x_int, search.scheme)
        pairs = int(np.sum(np.abs(x_int)))
        if search.scheme == "apg":
            pairs *= 2
        log.append({
            "stage": stage, "restart": restart,
            "cost_continuous": cost_cont, "cost_rounded": float(cost),
            "f_min": float(f_min), "feasible": bool(ok), "nfev": int(nfev),
            "pulse_pairs": pairs,
        })
        if not ok:
            return
        if best is None or cost < best[0]:
            best = (float(cost), x_int.copy())
        if search.target_cost is not None and cost <= search.target_cost:
            key = (pairs, float(cost))
            if best_compact is None or key < (best_compact[0], best_compact[1]):
                best_compact = (pairs, float(cost), x_int.copy())

    for stage in range(search.stages):
        bound = search.z_bound * search.expansion_factor**stage
        candidates = []
        for restart in range(search.restarts):
            if budget[0] < 10:
                break
            if restart == 0 and incumbent is not None:
                x0 = np.clip(incumbent, -bound, bound)
            elif restart == 1 and best is not None:
                x0 = np.clip(best[1].astype(float), -bound, bound)
            else:
                x0 = rng.uniform(-bound, bound, dim)
            res = lbfgsb(x0, bound)
            if res is None or not np.isfinite(res.fun):
                continue
            x_int = round_to_integers(res.x).astype(float)
            candidates.append((fast.value(x_int), x_int, res.x, float(res.fun), res.nfev, restart))
        candidates.sort(key=lambda t: t[0])
        for cost0, x_int, x_cont, f_cont, nfev, restart in candidates[: search.refine_top]:
            x = x_int
            if descent is not None and budget[0] > 0:
                for _ in range(3):
                    x, _, _ = descent.run(x, bound)
                    res = lbfgsb(x, bound)
                    if res is None:
                        break
                    x_new = round_to_integers(res.x).astype(float)
                    if np.array_equal(x_new, x):
                        break
                    x = x_new
                x, _, _ = descent.run(x, bound)
            consider(x, stage, restart, cost_cont=f_cont, nfev=nfev)
        for cost0, x_int, x_cont, f_cont, nfev, restart in candidates[search.refine_top:]:
            consider(x_int, stage, restart, cost_cont=f_cont, nfev=nfev)
        if candidates:
            incumbent = min(candidates, key=lambda t: t[0])[2]

    if best is None:
        return None

    # seeded perturb-and-descend polish around the incumbent lattice point
    if descent is not None and search.hop_iters > 0 and budget[0] > 0:
        bound = search.z_bound * search.expansion_factor ** (search.stages - 1)
        int_bound = np.floor(bound)
        x, cost = best[1].copy(), best[0]
        for _ in range(search.hop_iters):
            if budget[0] <= 0:
                break
            kicked = x.copy()
            for _ in range(int(rng.integers(1, 4))):
                kicked += descent.U[int(rng.integers(len(descent.U)))]
            kicked = np.clip(kicked, -int_bound, int_bound)
            x2, c2, _ = descent.run(kicked, bound)
            _, _, ok = _feasible(search, model, x2, search.scheme)
            if c2 < cost and ok:
                x, cost = x2, c2
        consider(x, search.stages - 1, -1)

    if best_compact is not None:
        return best_compact[2], log
    return best[1], log


def _optimize_six_group(search, model, rng, budget, spend):
    """gzc/frag staged search over (n, tau1..3) with per-candidate polish."""
    space = _SixGroupSpace(search, model)

    def lbfgsb(x0, bounds):
        cap = int(min(3000, budget[0]))
        if cap < 12:
            return None
        res = minimize(
            space.value, x0, jac="3-point", method="L-BFGS-B", bounds=bounds,
            options={"maxfun": cap, "ftol": search.ftol, "gtol": search.gtol},
        )
        spend(res.nfev)
        return res

    log = []
    best = None
    incumbent = None

    for stage in range(search.stages):
        bounds = space.bounds(stage)
        lo, hi = np.array(bounds).T
        candidates = []
        for restart in range(search.restarts):
            if budget[0] < 12:
                break
            if restart == 0 and incumbent is not None:
                x0 = np.clip(incumbent, lo, hi)
            else:
                x0 = rng.uniform(lo, hi)
            res = lbfgsb(x0, bounds)
            if res is None or not np.isfinite(res.fun):
                continue
            candidates.append((float(res.fun), res.x, res.nfev, restart))
        for f_cont, x_cont, nfev, restart in candidates:
            rounded = space.round_params(x_cont)
            trial_ns = {max(1.0, rounded[0] + d) for d in (-1.0, 0.0, 1.0)}
            for n_try in sorted(trial_ns):
                x = np.concatenate([[n_try], rounded[1:]])
                if search.polish:
                    x = space.polish(x)
                    spend(80)
                cost = space.value(x)
                z, t = space.groups(x)
                seq = PulseSequence.from_groups(z, t, search.gate_time)
                _, f_min = _score(model, seq)
                ok = search.max_f_min is None or f_min <= search.max_f_min
                log.append({
                    "stage": stage, "restart": restart, "cost_continuous": f_cont,
                    "cost_rounded": float(cost), "f_min": float(f_min),
                    "feasible": bool(ok), "nfev": int(nfev),
                })
                if ok and (best is None or cost < best[0]):
                    best = (float(cost), x.copy())
        if best is not None:
            incumbent = best[1]
        elif candidates:
            incumbent = min(candidates, key=lambda t: t[0])[1]

    if best is None:
        return None
    return best[1], log
