"""Regularization parameter choice rules.

* :func:`discrepancy_select`: residual matching ``phi(x_eta) = c_m delta^2``
  along a ray ``eta = t * w`` (root finding in ``log t``).
* :func:`balance_fixed_point_I`, :func:`balance_fixed_point_II`: fixed-point
  iterations whose fixed points solve the balancing system
  ``gamma eta_i psi_i(x_eta) = phi(x_eta)``.
* :func:`atikhonov_fixed_point`: the same with offsets,
  ``eta_i = (phi + beta0) / (gamma (psi_i + beta))``.
* :func:`gamma_two_step`: rerun a balancing rule with a data-driven ``gamma``.
* :func:`oracle_grid_search`: the parameter of smallest reconstruction error
  on a grid (needs the exact solution).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .exceptions import DegeneratePenaltyError, NonConvergenceError
from .inner_solver import SolveRecord, check_eta
from .problem import relative_error
from .value_function import grid_points, log_grid, phi_gamma

log = logging.getLogger(__name__)

__all__ = [
    "RuleIterate",
    "RuleTrace",
    "discrepancy_select",
    "balance_fixed_point_I",
    "balance_fixed_point_II",
    "atikhonov_fixed_point",
    "balancing_residual",
    "update_I",
    "update_II",
    "update_atikhonov",
    "GammaStrategy",
    "GAMMA_STRATEGIES",
    "gamma_two_step",
    "OracleResult",
    "oracle_grid_search",
    "refined_oracle",
    "run_rule",
    "RULES",
]

DEFAULT_ETA0 = 1e-3
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100


@dataclass
class RuleIterate:
    eta: np.ndarray
    phi: float
    psi: np.ndarray
    F: float
    criterion: float = float("nan")


@dataclass
class RuleTrace:
    """History of one parameter choice run.

    ``final`` is the selected parameter and ``record`` the solve at it.
    ``residual`` is the balancing residual ``max_i |gamma eta_i psi_i - phi| /
    phi`` for the balancing rules and ``|phi - c_m delta^2| / (c_m delta^2)``
    for the discrepancy principle.
    """

    rule: str
    iterates: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = "max_iter"
    final: np.ndarray | None = None
    record: SolveRecord | None = field(default=None, repr=False)
    gamma: float | None = None
    residual: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def n_iterations(self) -> int:
        """Number of parameter updates performed."""
        return max(len(self.iterates) - 1, 0)

    def rows(self):
        n = len(self.final) if self.final is not None else len(self.iterates[0].eta)
        header = ["iteration", *[f"eta{i + 1}" for i in range(n)], "phi",
                  *[f"psi{i + 1}" for i in range(n)], "F", "criterion"]
        out = [header]
        for k, it in enumerate(self.iterates):
            out.append([k, *it.eta, it.phi, *it.psi, it.F, it.criterion])
        return out

    def write_csv(self, path) -> None:
        path = Path(path)
        try:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                rows = self.rows()
                w.writerow(rows[0])
                for r in rows[1:]:
                    w.writerow([r[0], *(f"{v:.17g}" for v in r[1:])])
        except OSError as exc:
            raise OSError(f"cannot write trace file {path}: {exc}") from exc


def _iterate(rec: SolveRecord, gamma: float | None) -> RuleIterate:
    crit = float("nan")
    if gamma is not None and len(rec.eta) == 2:
        crit = phi_gamma(rec.F, rec.eta, gamma)
    return RuleIterate(eta=rec.eta.copy(), phi=rec.phi, psi=rec.psi.copy(), F=rec.F, criterion=crit)


def balancing_residual(rec: SolveRecord, gamma: float) -> float:
    """``max_i |gamma eta_i psi_i - phi| / phi`` at a solve."""
    if rec.phi <= 0:
        return float("inf")
    return float(np.max(np.abs(gamma * rec.eta * rec.psi - rec.phi)) / rec.phi)


# ---------------------------------------------------------------------------
# fixed-point updates (pure functions of one solve)
# ---------------------------------------------------------------------------


def _check_psi(psi, beta=0.0):
    psi = np.asarray(psi, dtype=float)
    if np.any(psi + beta <= 0):
        i = int(np.argmin(psi))
        raise DegeneratePenaltyError(
            f"penalty {i + 1} vanished at the current iterate (psi = {psi[i]:.3e}); "
            "the corresponding term is inactive for this data"
        )
    return psi


def update_I(phi: float, psi, eta, gamma: float) -> np.ndarray:
    """``eta_i = (phi + sum_{j != i} eta_j psi_j) / ((n - 1 + gamma) psi_i)``."""
    psi = _check_psi(psi)
    eta = np.asarray(eta, dtype=float)
    n = len(eta)
    ep = eta * psi
    return (phi + ep.sum() - ep) / ((n - 1 + gamma) * psi)


def update_II(phi: float, psi, eta, gamma: float) -> np.ndarray:
    """``eta_i = phi / (gamma psi_i)``."""
    psi = _check_psi(psi)
    return phi / (gamma * psi)


def update_atikhonov(phi: float, psi, eta, gamma: float, beta: float = 0.0, beta0: float = 0.0) -> np.ndarray:
    """``eta_i = (phi + beta0) / (gamma (psi_i + beta))``."""
    psi = _check_psi(psi, beta)
    return (phi + beta0) / (gamma * (psi + beta))


def _fixed_point(problem, update, gamma, eta0, tol, max_iter, name, meta=None) -> RuleTrace:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    n = problem.n_penalties
    eta = check_eta(np.full(n, eta0) if np.ndim(eta0) == 0 else eta0, n)
    trace = RuleTrace(rule=name, gamma=gamma, meta=dict(meta or {}, tol=tol, max_iter=max_iter))
    rec = problem.solve(eta)
    trace.iterates.append(_iterate(rec, gamma))
    for _ in range(max_iter):
        new = update(rec.phi, rec.psi, eta, gamma)
        if not np.all(np.isfinite(new)) or np.any(new <= 0):
            raise DegeneratePenaltyError(f"{name}: update produced a nonpositive parameter {new}")
        change = float(np.max(np.abs(new - eta) / eta))
        eta = new
        rec = problem.solve(eta, warm=rec)
        trace.iterates.append(_iterate(rec, gamma))
        if change <= tol:
            trace.converged = True
            trace.stop_reason = "tolerance"
            break
    trace.final = eta.copy()
    trace.record = rec
    trace.residual = balancing_residual(rec, gamma)
    if not trace.converged:
        log.warning("%s stopped after %d iterations without meeting tol=%g", name, max_iter, tol)
    return trace


def balance_fixed_point_I(problem, gamma: float, eta0=DEFAULT_ETA0, tol: float = DEFAULT_TOL,
                          max_iter: int = DEFAULT_MAX_ITER) -> RuleTrace:
    """Fixed-point iteration I for the balancing system.

    Each step solves at the current parameter and sets
    ``eta_i <- (phi + sum_{j != i} eta_j psi_j) / ((n - 1 + gamma) psi_i)``.
    Iteration stops when ``max_i |Delta eta_i| / eta_i <= tol``.

    Raises
    ------
    DegeneratePenaltyError
        If some ``psi_i`` vanishes at an iterate.
    """
    return _fixed_point(problem, update_I, gamma, eta0, tol, max_iter, "balance1")


def balance_fixed_point_II(problem, gamma: float, eta0=DEFAULT_ETA0, tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER) -> RuleTrace:
    """Fixed-point iteration II, ``eta_i <- phi / (gamma psi_i)``.

    Its fixed points satisfy the balancing system exactly.
    """
    return _fixed_point(problem, update_II, gamma, eta0, tol, max_iter, "balance2")


def atikhonov_fixed_point(problem, gamma: float, beta: float = 0.0, beta0: float = 0.0, eta0=DEFAULT_ETA0,
                          tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> RuleTrace:
    """Fixed-point iteration for the augmented Tikhonov system.

    With ``beta = beta0 = 0`` the iterates coincide with
    :func:`balance_fixed_point_II`.
    """
    if beta < 0 or beta0 < 0:
        raise ValueError("beta and beta0 must be nonnegative")

    def update(phi, psi, eta, g):
        return update_atikhonov(phi, psi, eta, g, beta, beta0)

    return _fixed_point(problem, update, gamma, eta0, tol, max_iter, "atik", meta={"beta": beta, "beta0": beta0})


# ---------------------------------------------------------------------------
# discrepancy principle
# ---------------------------------------------------------------------------


class _Hit(Exception):
    pass


def discrepancy_select(problem, delta2: float | None = None, c_m: float = 1.0, ratio=1.0, *,
                       rtol: float = 1e-3, t_start: float = 1e-3, t_min: float = 1e-14,
                       t_max: float = 1e6, max_evals: int = 200) -> RuleTrace:
    """Discrepancy principle on the ray ``eta = t * w``.

    For two penalties ``w = (ratio, 1)``; for ``n`` penalties ``ratio`` may be
    a length-``n`` weight vector. ``phi(x_{t w})`` is nondecreasing in ``t``,
    so the rule brackets the target ``c_m delta2`` by decades and then runs
    a safeguarded root finder on ``log phi - log target`` in ``log t``,
    stopping once ``|phi - target| <= rtol * target``.

    A failed bracket (target below ``phi(t_min)`` or above ``phi(t_max)``)
    returns a trace with ``stop_reason="bracket_fail"`` and the nearest probe
    as ``final``.
    """
    if delta2 is None:
        delta2 = problem.delta2
    if delta2 is None or not delta2 > 0:
        raise ValueError("the discrepancy principle needs a positive noise level delta2")
    if c_m < 1:
        raise ValueError(f"c_m must be >= 1, got {c_m}")
    n = problem.n_penalties
    w = np.ones(n)
    if np.ndim(ratio) == 0:
        w[0] = float(ratio)
    else:
        w = np.asarray(ratio, dtype=float)
    w = check_eta(w, n)
    target = c_m * delta2
    trace = RuleTrace(rule="discrepancy", meta={"c_m": c_m, "ratio": list(w), "delta2": delta2, "rtol": rtol})
    recs = {}

    def phi_at(t):
        rec = problem.solve(t * w)
        recs[t] = rec
        trace.iterates.append(_iterate(rec, None))
        return rec.phi

    def finish(t, reason, converged):
        rec = recs[t]
        trace.final = rec.eta.copy()
        trace.record = rec
        trace.stop_reason = reason
        trace.converged = converged
        trace.residual = abs(rec.phi - target) / target
        return trace

    def hit(t, phi):
        return abs(phi - target) <= rtol * target

    t = float(np.clip(t_start, t_min, t_max))
    f = phi_at(t)
    if hit(t, f):
        return finish(t, "tolerance", True)
    # bracket by decades
    if f < target:
        lo, hi = t, None
        while hi is None:
            if t >= t_max:
                return finish(t, "bracket_fail", False)
            t = min(t * 10.0, t_max)
            f = phi_at(t)
            if hit(t, f):
                return finish(t, "tolerance", True)
            if f > target:
                hi = t
            else:
                lo = t
    else:
        lo, hi = None, t
        while lo is None:
            if t <= t_min:
                return finish(t, "bracket_fail", False)
            t = max(t / 10.0, t_min)
            f = phi_at(t)
            if hit(t, f):
                return finish(t, "tolerance", True)
            if f < target:
                lo = t
            else:
                hi = t
    trace.meta["bracket"] = (lo, hi)
    if recs[lo].phi <= 0:
        # log phi undefined at exact fits; step the lower end up
        while recs[lo].phi <= 0 and hi / lo > 1.0001:
            lo = np.sqrt(lo * hi)
            if hit(lo, phi_at(lo)):
                return finish(lo, "tolerance", True)
    best = {"t": lo}

    def g(s):
        tt = float(np.exp(s))
        ph = phi_at(tt)
        if abs(ph - target) < abs(recs[best["t"]].phi - target):
            best["t"] = tt
        if hit(tt, ph):
            raise _Hit
        if len(trace.iterates) >= max_evals:
            raise _Hit
        return np.log(max(ph, 1e-300)) - np.log(target)

    try:
        brentq(g, np.log(lo), np.log(hi), xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=max_evals)
    except _Hit:
        pass
    except ValueError:
        pass
    t = best["t"]
    if hit(t, recs[t].phi):
        return finish(t, "tolerance", True)
    # phi jumps across the target (nonunique minimizers) or evaluation cap
    return finish(t, "max_iter", False)


# ---------------------------------------------------------------------------
# two-step gamma
# ---------------------------------------------------------------------------

GammaStrategy = Callable[[RuleTrace, object, float], float]


def _gamma_fixed(trace, problem, gamma0):
    return gamma0


def estimate_noise_level(problem, phi: float) -> float:
    """Relative noise level implied by a fidelity value.

    ``eps_est = sqrt(phi / m) / max|y|``, the inverse of the noise model
    ``y = y_true + max|y_true| * eps * xi`` with standard normal ``xi``.
    """
    m = len(problem.y_noisy)
    ymax = float(np.abs(problem.y_noisy).max())
    if phi <= 0 or ymax <= 0:
        return 0.0
    return float(np.sqrt(phi / m) / ymax)


def _gamma_noise_adaptive(trace, problem, gamma0, lo=1.5, hi=20.0, power=1.5):
    """Shrink ``gamma`` as the estimated noise level decreases.

    With ``L = log10(1/eps_est)`` from the first run's fidelity the new weight
    is ``gamma0 * (2/L)**power`` clamped to ``[lo, hi]``; ``gamma0`` is kept at
    ``eps_est = 1e-2``. Large weights push the fixed point towards tiny
    parameters, which on clean data ends in an unregularized collapse, while
    on noisy data they trade a little bias for stability.
    """
    eps = estimate_noise_level(problem, trace.record.phi)
    if not 0.0 < eps < 1.0:
        return float(np.clip(gamma0 if eps >= 1.0 else lo, lo, hi))
    L = np.log10(1.0 / eps)
    return float(np.clip(gamma0 * (2.0 / L) ** power, lo, hi))


GAMMA_STRATEGIES: dict[str, GammaStrategy] = {
    "fixed": _gamma_fixed,
    "noise_adaptive": _gamma_noise_adaptive,
}

DEFAULT_GAMMA_STRATEGY = "noise_adaptive"


def gamma_two_step(problem, gamma0: float = 5.0, rule: str = "balance2", strategy=DEFAULT_GAMMA_STRATEGY,
                   **rule_kw):
    """Run a balancing rule at ``gamma0``, adjust ``gamma`` and rerun.

    Parameters
    ----------
    strategy : str or callable
        Name in :data:`GAMMA_STRATEGIES` or a callable
        ``(first_trace, problem, gamma0) -> gamma``.

    Returns
    -------
    gamma, trace
        The adjusted ``gamma`` and the trace of the second run (the first run
        is kept in ``trace.meta["first"]``). When the adjusted ``gamma``
        equals ``gamma0`` the first run is returned unchanged.
    """
    fn = GAMMA_STRATEGIES[strategy] if isinstance(strategy, str) else strategy
    name = strategy if isinstance(strategy, str) else getattr(strategy, "__name__", "custom")
    first = run_rule(problem, rule, gamma=gamma0, **rule_kw)
    gamma = float(fn(first, problem, gamma0))
    if gamma == gamma0:
        first.meta.update(gamma_strategy=name, gamma0=gamma0)
        return gamma, first
    rule_kw = dict(rule_kw)
    # restart from the first run's answer
    rule_kw.setdefault("eta0", first.final)
    second = run_rule(problem, rule, gamma=gamma, **rule_kw)
    second.meta.update(gamma_strategy=name, gamma0=gamma0, first=first)
    return gamma, second


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    eta: np.ndarray
    error: float
    points: np.ndarray
    errors: np.ndarray
    record: SolveRecord | None = field(default=None, repr=False)
    # parameters whose inner solve could not be certified (error NaN)
    failed: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def n_failed(self) -> int:
        return int(np.isnan(self.errors).sum())


def oracle_grid_search(problem, grid, metric=None, inject=None) -> OracleResult:
    """Exhaustive search for the parameter of smallest reconstruction error.

    Parameters
    ----------
    grid : (N, n) array or sequence of 1-D axes (product grid)
    metric : callable ``x -> float``, optional
        Defaults to the relative error against ``problem.x_true``.
    inject : sequence of parameter vectors, optional
        Extra points evaluated together with the grid.

    Ties are broken by the first point in evaluation order. Points whose
    inner solve raises :class:`NonConvergenceError` get error NaN and are
    excluded from the minimum; they are listed in ``failed``.
    """
    if metric is None:
        if problem.x_true is None:
            raise ValueError("the oracle needs the exact solution")

        def metric(x):
            return relative_error(x, problem.x_true)

    pts = grid_points(grid)
    if inject is not None:
        pts = np.vstack([pts, np.atleast_2d(np.asarray(inject, dtype=float))])
    errors = np.empty(len(pts))
    best_rec, best = None, np.inf
    for k, p in enumerate(pts):
        try:
            rec = problem.solve(p)
        except NonConvergenceError:
            log.warning("oracle: inner solve failed at eta=%s", p)
            errors[k] = np.nan
            continue
        errors[k] = metric(rec.x)
        if errors[k] < best:
            best, best_rec = errors[k], rec
    if best_rec is None:
        raise NonConvergenceError("oracle: no grid point could be solved", None)
    k = int(np.nanargmin(errors))
    return OracleResult(eta=pts[k].copy(), error=float(errors[k]), points=pts, errors=errors,
                        record=best_rec, failed=pts[np.isnan(errors)])


def refined_oracle(problem, lo, hi, coarse: float, fine: float, *, fixed=None, inject=None,
                   radius: float = 1.0, metric=None) -> OracleResult:
    """Coarse log-grid search followed by a finer grid around the best point.

    ``lo``/``hi`` bound every searched component; ``fixed`` maps component
    indices to pinned values (used for single-penalty baselines). The fine
    stage spans ``radius`` decades around the coarse argmin in every free
    component. The returned search space is the union of both stages plus
    ``inject``, so refinement never increases the error.
    """
    n = problem.n_penalties
    fixed = dict(fixed or {})

    def axes_for(centers, per_decade, span):
        axes = []
        for i in range(n):
            if i in fixed:
                axes.append(np.array([fixed[i]]))
            elif centers is None:
                axes.append(log_grid(lo, hi, per_decade))
            else:
                c = centers[i]
                a = log_grid(max(lo, c * 10.0 ** -span), min(hi, c * 10.0 ** span), per_decade)
                axes.append(a)
        return axes

    stage1 = oracle_grid_search(problem, axes_for(None, coarse, None), metric=metric, inject=inject)
    stage2 = oracle_grid_search(problem, axes_for(stage1.eta, fine, radius), metric=metric)
    pts = np.vstack([stage1.points, stage2.points])
    errs = np.concatenate([stage1.errors, stage2.errors])
    k = int(np.nanargmin(errs))
    rec = stage1.record if k < len(stage1.points) else stage2.record
    return OracleResult(eta=pts[k].copy(), error=float(errs[k]), points=pts, errors=errs, record=rec,
                        failed=pts[np.isnan(errs)])


# ---------------------------------------------------------------------------
# dispatch by name
# ---------------------------------------------------------------------------

RULES = ("balance1", "balance2", "atik", "discrepancy")


def run_rule(problem, rule: str, gamma: float = 5.0, **kw) -> RuleTrace:
    """Run a rule by name with keyword overrides."""
    if rule == "balance1":
        return balance_fixed_point_I(problem, gamma, **kw)
    if rule == "balance2":
        return balance_fixed_point_II(problem, gamma, **kw)
    if rule == "atik":
        return atikhonov_fixed_point(problem, gamma, **kw)
    if rule == "discrepancy":
        kw.pop("eta0", None)
        return discrepancy_select(problem, **kw)
    raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
