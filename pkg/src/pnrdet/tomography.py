"""Detector tomography: constrained least-squares fidelity matrix and its validation.

The fidelity matrix ``P[n, m]`` gives the probability of ``n`` clicks for ``m``
incident photons.  It is estimated from Poisson probes ``I`` and measured
click frequencies ``O`` by minimising ``||P I - O||_F`` over matrices whose
columns lie on the probability simplex restricted to ``n <= m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import DomainError
from .statistics import ClickDataset, PhotonDistribution, ProbabilityMatrix

__all__ = [
    "FidelityMatrix",
    "ClickCountMatrix",
    "CrosstalkStats",
    "SolverResult",
    "simplex_project",
    "reconstruct_povm",
    "reconstruct_input_state",
    "hellinger",
    "crosstalk_probability",
    "estimate_crosstalk_stats",
    "triangular_support",
]


@dataclass
class FidelityMatrix:
    """Fidelity matrix with rows = clicks 0..n_click_max and columns = photons 0..m_max.

    Solver diagnostics are attached when the matrix comes from
    :func:`reconstruct_povm`.
    """

    entries: np.ndarray
    converged: bool = True
    iterations: int = 0
    residual: float = float("nan")
    initial_residual: float = float("nan")
    objective_history: Optional[List[float]] = field(default=None, repr=False)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.ndim != 2:
            raise DomainError("fidelity matrix must be 2-D")

    @property
    def n_click_max(self) -> int:
        return self.entries.shape[0] - 1

    @property
    def m_max(self) -> int:
        return self.entries.shape[1] - 1

    def diagonal(self) -> np.ndarray:
        return np.diag(self.entries).copy()

    def constraint_violations(self, atol: float = 1e-6) -> List[str]:
        """Human-readable list of broken constraints; empty when the matrix is valid."""
        out = []
        P = self.entries
        if np.any(P < 0):
            out.append(f"negative entry {P.min():.3g}")
        off = P[~triangular_support(self.n_click_max, self.m_max)]
        if np.any(off != 0):
            out.append(f"non-zero entry above the photon number ({np.abs(off).max():.3g})")
        sums = P.sum(axis=0)
        if np.any(np.abs(sums - 1) > atol):
            out.append(f"column sums deviate from 1 by {np.abs(sums - 1).max():.3g}")
        return out

    def is_valid(self, atol: float = 1e-6) -> bool:
        return not self.constraint_violations(atol)


@dataclass
class ClickCountMatrix:
    """Click counts ``entries[n, k]`` for probe ``k`` and the number of pulses per probe."""

    entries: np.ndarray
    totals: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=float)
        self.totals = np.asarray(self.totals, dtype=float)
        if self.entries.ndim != 2 or self.totals.shape != (self.entries.shape[1],):
            raise DomainError("entries must be (clicks x probes) with one total per probe")
        if np.any(self.entries < 0):
            raise DomainError("click counts must be non-negative")
        if np.any(self.entries.sum(axis=0) > self.totals * (1 + 1e-12)):
            raise DomainError("click counts exceed the pulses per probe")

    @classmethod
    def from_datasets(cls, datasets: Sequence[ClickDataset], n_click_max: int) -> "ClickCountMatrix":
        # events above n_click_max are not counted
        cols = [np.bincount(np.minimum(d.clicked_pixels, n_click_max + 1), minlength=n_click_max + 2)[: n_click_max + 1] for d in datasets]
        return cls(np.stack(cols, axis=1), np.array([d.n_pulses for d in datasets]))

    @classmethod
    def from_assignments(cls, assigned: Sequence[np.ndarray], n_click_max: int) -> "ClickCountMatrix":
        """Build from per-probe photon-number assignments (one array per probe)."""
        cols = [np.bincount(np.minimum(a, n_click_max + 1), minlength=n_click_max + 2)[: n_click_max + 1] for a in assigned]
        return cls(np.stack(cols, axis=1), np.array([len(a) for a in assigned]))

    def frequencies(self) -> np.ndarray:
        return self.entries / self.totals[None, :]


@dataclass
class CrosstalkStats:
    p_2_given_1: float
    p_1_given_1: float
    p_1_given_0: float
    pulse_frequency: float = 100e3
    mu: float = 0.01

    def __post_init__(self):
        for name in ("p_2_given_1", "p_1_given_1", "p_1_given_0"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class SolverResult:
    x: np.ndarray
    converged: bool
    iterations: int
    objective: float
    history: List[float]


def triangular_support(n_click_max: int, m_max: int) -> np.ndarray:
    """Boolean mask of entries allowed to be non-zero: clicks never exceed photons."""
    n = np.arange(n_click_max + 1)[:, None]
    m = np.arange(m_max + 1)[None, :]
    return n <= m


def simplex_project(v, support=None, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto {x >= 0, sum x = radius, x = 0 off support}."""
    v = np.asarray(v, dtype=float)
    support = np.ones(v.shape, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    if support.shape != v.shape:
        raise DomainError("support mask must match the vector shape")
    if not support.any():
        raise DomainError("support must contain at least one entry")
    return _project_columns(v[:, None], support[:, None], radius)[:, 0]


def _project_columns(Y: np.ndarray, mask: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Project every column of ``Y`` onto its masked simplex (sorted-threshold rule)."""
    U = -np.sort(-np.where(mask, Y, -np.inf), axis=0)
    count = mask.sum(axis=0)
    finite = np.where(np.isfinite(U), U, 0.0)
    css = np.cumsum(finite, axis=0) - radius
    j = np.arange(1, Y.shape[0] + 1)[:, None]
    ok = (U - css / j > 0) & (j <= count[None, :])
    rho = Y.shape[0] - 1 - np.argmax(ok[::-1], axis=0)
    theta = css[rho, np.arange(Y.shape[1])] / (rho + 1)
    return np.where(mask, np.maximum(Y - theta[None, :], 0.0), 0.0)


class _Problem:
    """min 0.5 ||A x - y||^2 with x = X[mask] and every column of X on its simplex."""

    def __init__(self, A, y, mask, lipschitz):
        self.A = A
        self.y = y
        self.mask = mask
        self.rows, self.cols = np.nonzero(mask)
        self.step = 1.0 / lipschitz
        # rounding error of one residual entry, and the objective it alone can produce
        scale = float(np.abs(y).max(initial=0.0)) + float(np.abs(A).sum(axis=1).max(initial=0.0))
        self.round_unit = 8 * np.finfo(float).eps * scale * np.sqrt(y.size)
        self.noise_floor = self.round_unit**2

    def unpack(self, x):
        X = np.zeros(self.mask.shape)
        X[self.rows, self.cols] = x
        return X

    def objective(self, x):
        r = self.A @ x - self.y
        return 0.5 * float(r @ r)


def _slack(prob, f):
    # floating-point allowance for the monotone-descent assertion
    return 1e-12 * abs(f) + prob.round_unit * np.sqrt(2 * abs(f)) + prob.noise_floor


def _pgd(prob: _Problem, x, tol, max_iters, history):
    f = prob.objective(x)
    history.append(f)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        grad = prob.A.T @ (prob.A @ x - prob.y)
        X = prob.unpack(x - prob.step * grad)
        x_new = _project_columns(X, prob.mask)[prob.rows, prob.cols]
        f_new = prob.objective(x_new)
        assert f_new <= f + _slack(prob, f), "projected gradient step increased the objective"
        decrease = f - f_new
        x, f = x_new, f_new
        history.append(f)
        if decrease <= tol * f or f <= prob.noise_floor:
            converged = True
            break
    return x, converged, it


def _active_set(prob: _Problem, x, history, max_iters, kkt_tol):
    """Exact finish on the face identified by the gradient phase.

    Primal active-set method: solve the equality-constrained problem on the
    free entries, step back to feasibility when it leaves the orthant, and
    release a bound entry when that lowers the objective.  Bounds are first
    screened by their multipliers; because those drop below rounding level
    along weakly observed directions, each remaining bound is then tested by
    re-solving with it released.
    """
    ncol = prob.mask.shape[1]
    col_of = prob.cols

    def face_solve(free):
        pivots = np.full(ncol, -1)
        for c in range(ncol):
            idx = np.flatnonzero(free & (col_of == c))
            pivots[c] = idx[np.argmax(x[idx])]
        is_pivot = np.zeros(x.size, dtype=bool)
        is_pivot[pivots] = True
        z = np.flatnonzero(free & ~is_pivot)
        base = np.zeros(x.size)
        base[pivots] = 1.0
        D = prob.A[:, z] - prob.A[:, pivots[col_of[z]]]
        sol = np.linalg.lstsq(D, prob.y - prob.A @ base, rcond=None)[0]
        target = base
        target[z] = sol
        target[pivots] -= np.bincount(col_of[z], weights=sol, minlength=ncol)[col_of[pivots]]
        return target

    f = prob.objective(x)
    active = x <= 0.0
    for it in range(1, max_iters + 1):
        free = ~active
        target = face_solve(free)
        neg = free & (target < 0)
        if neg.any():
            ratio = np.where(neg, x / np.where(neg, x - target, 1.0), np.inf)
            alpha = ratio.min()
            cand = x + alpha * (target - x)
            blocked = neg & (ratio <= alpha * (1 + 1e-12))
            cand[blocked | active] = 0.0
            f_new = prob.objective(cand)
            if f_new > f + _slack(prob, f):
                return x, False, it
            x, f = cand, f_new
            active = active | blocked
            history.append(f)
            continue

        f_new = prob.objective(target)
        if f_new <= f + _slack(prob, f):
            x, f = target, f_new
            history.append(f)

        grad = prob.A.T @ (prob.A @ x - prob.y)
        lam = np.zeros(ncol)
        np.add.at(lam, col_of[free], grad[free])
        lam /= np.bincount(col_of[free], minlength=ncol)
        mult = np.where(active, grad - lam[col_of], np.inf)
        worst = int(np.argmin(mult))
        if mult[worst] < -kkt_tol:
            active[worst] = False
            continue

        best, best_gain = -1, 0.0
        for e in np.flatnonzero(active):
            trial_free = free.copy()
            trial_free[e] = True
            t = face_solve(trial_free)
            gain = f - prob.objective(t)
            if t[e] > 0 and gain > max(best_gain, 1e-9 * f, _slack(prob, f)):
                best, best_gain = e, gain
        if best < 0:
            return x, True, it
        active[best] = False
    return x, False, max_iters


# gradient iterations run before each active-set attempt
_PGD_ROUND = 2000


def _solve(prob: _Problem, x0, tol, max_iters, polish) -> SolverResult:
    """Projected gradient, interleaved with exact active-set finishes when ``polish`` is set.

    Gradient rounds stop early once an active-set finish certifies
    optimality; ``max_iters`` bounds the gradient iterations in total.
    """
    history: List[float] = []
    x, iters, converged = x0, 0, False
    while True:
        budget = min(_PGD_ROUND, max_iters - iters) if polish else max_iters
        x, converged, used = _pgd(prob, x, tol, budget, history)
        iters += used
        if polish:
            f = prob.objective(x)
            x_fin, kkt_ok, extra = _active_set(prob, x.copy(), history, max_iters=10 * x.size + 10, kkt_tol=1e-13 * _grad_scale(prob))
            iters += extra
            if prob.objective(x_fin) <= f + _slack(prob, f):
                x = x_fin
                if kkt_ok:
                    converged = True
                    break
        if converged or not polish or iters >= max_iters:
            break
    return SolverResult(x=x, converged=converged, iterations=iters, objective=prob.objective(x), history=history)


def _grad_scale(prob: _Problem) -> float:
    return float(np.abs(prob.A).max()) ** 2 * max(1.0, float(np.abs(prob.y).max()))


def _as_probe_matrix(I) -> np.ndarray:
    return np.asarray(I.entries if isinstance(I, ProbabilityMatrix) else I, dtype=float)


def reconstruct_povm(
    I: Union[ProbabilityMatrix, np.ndarray],
    O: Union[ClickCountMatrix, np.ndarray],
    n_click_max: Optional[int] = None,
    tol: float = 1e-10,
    max_iters: int = 50_000,
    polish: bool = True,
    keep_history: bool = False,
) -> FidelityMatrix:
    """Constrained least-squares fidelity matrix from probes ``I`` and clicks ``O``.

    ``O`` may be a :class:`ClickCountMatrix` (normalised per probe before
    solving) or an array of click frequencies.  Projected gradient descent
    with step ``1/||I||_2^2`` starts from the truncated identity and stops
    when the relative objective decrease drops below ``tol``.  With
    ``polish``, short gradient rounds alternate with an active-set phase that
    solves the problem exactly on the identified face, and the run ends as
    soon as that phase certifies optimality.  Non-convergence is reported
    through ``FidelityMatrix.converged``.
    """
    Imat = _as_probe_matrix(I)
    F = O.frequencies() if isinstance(O, ClickCountMatrix) else np.asarray(O, dtype=float)
    if Imat.ndim != 2 or F.ndim != 2:
        raise DomainError("I and O must be 2-D")
    if Imat.shape[1] != F.shape[1]:
        raise DomainError(f"probe count mismatch: I has {Imat.shape[1]} columns, O has {F.shape[1]}")
    m_max = Imat.shape[0] - 1
    if n_click_max is None:
        n_click_max = F.shape[0] - 1
    if F.shape[0] != n_click_max + 1:
        raise DomainError(f"O has {F.shape[0]} click rows, expected {n_click_max + 1}")
    if n_click_max > m_max:
        raise DomainError(f"n_click_max {n_click_max} exceeds m_max {m_max}")

    mask = triangular_support(n_click_max, m_max)
    rows, cols = np.nonzero(mask)
    K = Imat.shape[1]
    # residual index (n, k) flattened row-major; variable (n, m) contributes I[m, :] to row n
    A = np.zeros(((n_click_max + 1) * K, rows.size))
    for v, (n, m) in enumerate(zip(rows, cols)):
        A[n * K:(n + 1) * K, v] = Imat[m]
    y = F.reshape(-1)
    prob = _Problem(A, y, mask, lipschitz=np.linalg.norm(Imat, 2) ** 2)

    X0 = np.zeros(mask.shape)
    m = np.arange(m_max + 1)
    X0[np.minimum(m, n_click_max), m] = 1.0
    x0 = X0[rows, cols]
    res = _solve(prob, x0, tol, max_iters, polish)
    return FidelityMatrix(
        entries=prob.unpack(res.x),
        converged=res.converged,
        iterations=res.iterations,
        residual=float(np.sqrt(2 * res.objective)),
        initial_residual=float(np.sqrt(2 * prob.objective(x0))),
        objective_history=res.history if keep_history else None,
    )


def _probs(d) -> np.ndarray:
    return np.asarray(d.probs if isinstance(d, PhotonDistribution) else d, dtype=float)


def reconstruct_input_state(
    P: Union[FidelityMatrix, np.ndarray],
    observed,
    tol: float = 1e-12,
    max_iters: int = 50_000,
    polish: bool = True,
) -> PhotonDistribution:
    """Photon-number distribution ``p`` on the simplex minimising ``||P p - observed||``.

    ``observed`` is zero-padded or folded to the click rows of ``P``.
    The returned distribution carries ``converged`` and ``residual``
    attributes.
    """
    Pm = np.asarray(P.entries if isinstance(P, FidelityMatrix) else P, dtype=float)
    obs = _probs(observed)
    n_rows = Pm.shape[0]
    if obs.size < n_rows:
        obs = np.pad(obs, (0, n_rows - obs.size))
    elif obs.size > n_rows:
        raise DomainError(f"observed distribution has {obs.size} classes, P has {n_rows} rows")
    mask = np.ones((Pm.shape[1], 1), dtype=bool)
    prob = _Problem(Pm, obs, mask, lipschitz=max(np.linalg.norm(Pm, 2) ** 2, 1e-300))
    x0 = np.full(Pm.shape[1], 1.0 / Pm.shape[1])
    res = _solve(prob, x0, tol, max_iters, polish)
    # clean floating dust so the result is a valid distribution
    p = np.maximum(res.x, 0.0)
    out = PhotonDistribution(p / p.sum())
    out.converged = res.converged
    out.residual = float(np.sqrt(2 * res.objective))
    return out


def hellinger(p, q) -> float:
    """Hellinger distance ``sqrt(1 - sum sqrt(p_i q_i))``; shorter input is zero-padded."""
    a, b = _probs(p), _probs(q)
    if np.any(a < 0) or np.any(b < 0):
        raise DomainError("distributions must be non-negative")
    n = max(a.size, b.size)
    a = np.pad(a, (0, n - a.size))
    b = np.pad(b, (0, n - b.size))
    bc = float(np.sum(np.sqrt(a * b)))
    return float(np.sqrt(min(1.0, max(0.0, 1.0 - bc))))


def crosstalk_probability(stats: CrosstalkStats) -> float:
    """Single-pixel crosstalk ``p(2|1) - p(1|1) p(1|0)``; may come out slightly negative."""
    return stats.p_2_given_1 - stats.p_1_given_1 * stats.p_1_given_0


def estimate_crosstalk_stats(dataset: ClickDataset, pulse_frequency: float = 100e3) -> CrosstalkStats:
    """Conditional click probabilities from a dataset that records true photon numbers."""
    truth = dataset.true_photon_number
    if truth is None:
        raise DomainError("crosstalk estimation needs the true photon number of every pulse")
    clicks = dataset.clicked_pixels
    one = truth == 1
    zero = truth == 0
    if not one.any() or not zero.any():
        raise DomainError("dataset lacks single-photon or empty pulses")
    return CrosstalkStats(
        p_2_given_1=float(np.mean(clicks[one] == 2)),
        p_1_given_1=float(np.mean(clicks[one] == 1)),
        p_1_given_0=float(np.mean(clicks[zero] == 1)),
        pulse_frequency=pulse_frequency,
        mu=dataset.mu,
    )
