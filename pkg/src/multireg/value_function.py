"""The value function ``F(eta) = min_x J_eta(x)`` and the balancing criteria.

``F`` is concave and nondecreasing in each component of ``eta``, and its
one-sided partial derivatives bracket the penalty values at any minimizer:

    d+_i F(eta) <= psi_i(x_eta) <= d-_i F(eta).

The functions here evaluate ``F``, finite-difference estimates of the
one-sided partials, and the two-parameter criteria

    Phi_gamma(eta) = c_gamma F(eta)^(2+gamma) / (eta_1 eta_2),
    Psi_gamma(eta) = phi(x_eta)^gamma psi_1(x_eta) psi_2(x_eta),

with ``c_gamma = gamma^gamma / (gamma+2)^(gamma+2)``. By the weighted
AM-GM inequality ``Psi_gamma <= Phi_gamma``, with equality exactly when
``gamma eta_i psi_i = phi`` for both ``i``. Grid certifications of
monotonicity, concavity and the derivative sandwich return reports instead of
raising.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CapabilityError
from .inner_solver import SolveRecord, check_eta

__all__ = [
    "ValueSample",
    "eval_F",
    "fd_partials",
    "c_gamma",
    "phi_gamma",
    "psi_gamma",
    "eval_Phi",
    "eval_Psi",
    "phi_psi_gap",
    "ConcavityReport",
    "certify_concavity",
    "SandwichReport",
    "certify_sandwich",
    "log_grid",
    "grid_points",
    "landscape",
    "write_landscape_csv",
]


@dataclass
class ValueSample:
    eta: np.ndarray
    F: float
    phi: float
    psi: np.ndarray
    grad_plus: np.ndarray | None = None
    grad_minus: np.ndarray | None = None
    record: SolveRecord | None = field(default=None, repr=False)


def eval_F(problem, eta, warm=None) -> ValueSample:
    """Value function sample from a converged solve."""
    rec = problem.solve(eta, warm=warm)
    return ValueSample(eta=rec.eta.copy(), F=rec.F, phi=rec.phi, psi=rec.psi.copy(), record=rec)


def fd_partials(problem, eta, h_rel: float = 1e-4):
    """One-sided difference quotients of ``F`` with steps ``h_i = h_rel eta_i``.

    Returns
    -------
    grad_plus, grad_minus : ndarray
        ``(F(eta + h_i e_i) - F(eta)) / h_i`` and
        ``(F(eta) - F(eta - h_i e_i)) / h_i``.
    """
    if not 0.0 < h_rel < 0.5:
        raise ValueError(f"h_rel must lie in (0, 0.5), got {h_rel}")
    eta = check_eta(eta, problem.n_penalties)
    center = problem.solve(eta)
    gp = np.empty(len(eta))
    gm = np.empty(len(eta))
    for i in range(len(eta)):
        h = h_rel * eta[i]
        up = eta.copy()
        up[i] += h
        dn = eta.copy()
        dn[i] -= h
        # the realized steps, which differ from h by rounding
        hu, hd = up[i] - eta[i], eta[i] - dn[i]
        gp[i] = (problem.solve(up, warm=center).F - center.F) / hu
        gm[i] = (center.F - problem.solve(dn, warm=center).F) / hd
    return gp, gm


def c_gamma(gamma: float) -> float:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return float(np.exp(gamma * np.log(gamma) - (gamma + 2.0) * np.log(gamma + 2.0)))


def _require_two(eta):
    if len(eta) != 2:
        raise CapabilityError(f"the balancing criteria are defined for two penalties, got {len(eta)}")


def phi_gamma(F: float, eta, gamma: float) -> float:
    """``c_gamma F^(2+gamma) / (eta_1 eta_2)`` computed in log space."""
    eta = check_eta(eta)
    _require_two(eta)
    if F <= 0:
        return 0.0
    return float(np.exp(np.log(c_gamma(gamma)) + (2.0 + gamma) * np.log(F) - np.log(eta).sum()))


def psi_gamma(phi: float, psi, gamma: float) -> float:
    """``phi^gamma psi_1 psi_2``."""
    psi = np.asarray(psi, dtype=float)
    _require_two(psi)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if phi <= 0 or np.any(psi <= 0):
        return 0.0
    return float(np.exp(gamma * np.log(phi) + np.log(psi).sum()))


def eval_Phi(problem, eta, gamma: float) -> float:
    eta = check_eta(eta, problem.n_penalties)
    _require_two(eta)
    return phi_gamma(problem.solve(eta).F, eta, gamma)


def eval_Psi(problem, eta, gamma: float) -> float:
    eta = check_eta(eta, problem.n_penalties)
    _require_two(eta)
    rec = problem.solve(eta)
    return psi_gamma(rec.phi, rec.psi, gamma)


def phi_psi_gap(phi: float, psi, eta, gamma: float) -> float:
    """``1 - Psi_gamma / Phi_gamma`` at one evaluation (``0`` when both vanish).

    Negative values mean ``Psi > Phi``. ``F`` is rebuilt as
    ``phi + eta . psi`` so the check covers exactly the evaluated triple.
    """
    eta = check_eta(eta)
    psi = np.asarray(psi, dtype=float)
    F = phi + float(eta @ psi)
    Phi = phi_gamma(F, eta, gamma)
    if Phi == 0.0:
        return 0.0
    return 1.0 - psi_gamma(phi, psi, gamma) / Phi


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


def log_grid(lo: float, hi: float, per_decade: float) -> np.ndarray:
    """Log-spaced points from ``lo`` to ``hi`` inclusive."""
    if not 0 < lo <= hi:
        raise ValueError(f"invalid grid range [{lo}, {hi}]")
    n = max(int(round(np.log10(hi / lo) * per_decade)) + 1, 1)
    return np.logspace(np.log10(lo), np.log10(hi), n) if n > 1 else np.array([lo])


def grid_points(eta_grid) -> np.ndarray:
    """Normalize a grid to an ``(N, n)`` array of parameter vectors.

    ``eta_grid`` is either such an array or a sequence of 1-D axes whose
    Cartesian product is taken; the product is traversed in serpentine order
    from the largest value of the first axis down, so consecutive points are
    neighbours and sweeps run towards weaker regularization (useful for warm
    starts).
    """
    if isinstance(eta_grid, np.ndarray) and eta_grid.ndim == 2:
        return eta_grid.astype(float)
    axes = [np.atleast_1d(np.asarray(a, dtype=float)) for a in eta_grid]
    if len(axes) == 1:
        return np.sort(axes[0])[::-1, None]
    if len(axes) != 2:
        return np.array(list(itertools.product(*axes)))
    rows = []
    inner = np.sort(axes[1])[::-1]
    for k, a in enumerate(np.sort(axes[0])[::-1]):
        cols = inner if k % 2 == 0 else inner[::-1]
        rows.extend((a, b) for b in cols)
    return np.array(rows)


# ---------------------------------------------------------------------------
# certifications
# ---------------------------------------------------------------------------


@dataclass
class ConcavityReport:
    """Monotonicity and midpoint-concavity violations of ``F`` on a grid.

    ``monotonicity`` lists index pairs ``(i, j)`` with ``eta_i <= eta_j``
    componentwise but ``F_i > F_j + tol``; ``concavity`` lists
    ``(i, j, gap)`` with ``F(mid) < (F_i + F_j)/2 - tol``.
    """

    points: np.ndarray
    F: np.ndarray
    tol: float
    monotonicity: list = field(default_factory=list)
    concavity: list = field(default_factory=list)
    n_pairs: int = 0
    n_midpoints: int = 0

    @property
    def ok(self) -> bool:
        return not self.monotonicity and not self.concavity


def certify_concavity(problem, eta_grid, tol: float | None = None, pairs: str = "all") -> ConcavityReport:
    """Check monotonicity and midpoint concavity of ``F`` over a grid.

    Parameters
    ----------
    problem : Problem
    eta_grid : (N, n) array or sequence of axes
    tol : float, optional
        Violation threshold; default ``1e-8 * max F``.
    pairs : {"all", "neighbors"}
        Midpoints of all point pairs, or only of pairs adjacent in a
        product grid (Chebyshev index distance 1 or 2).
    """
    pts = grid_points(eta_grid)
    recs = []
    for p in pts:
        recs.append(problem.solve(p))
    F = np.array([r.F for r in recs])
    if tol is None:
        tol = 1e-8 * max(float(np.abs(F).max()), 1e-300) if len(F) else 0.0
    rep = ConcavityReport(points=pts, F=F, tol=tol)
    N = len(pts)
    for i, j in itertools.permutations(range(N), 2):
        if np.all(pts[i] <= pts[j]):
            rep.n_pairs += 1
            if F[i] > F[j] + tol:
                rep.monotonicity.append((i, j))
    if pairs == "all":
        cand = itertools.combinations(range(N), 2)
    elif pairs == "neighbors":
        logs = np.log(pts)
        steps = np.array([np.min(np.diff(np.unique(c))) if len(np.unique(c)) > 1 else 1.0 for c in logs.T])
        cand = ((i, j) for i, j in itertools.combinations(range(N), 2)
                if np.max(np.abs(logs[i] - logs[j]) / steps) <= 2.0 + 1e-9)
    else:
        raise ValueError(f"unknown pairs mode {pairs!r}")
    for i, j in cand:
        mid = 0.5 * (pts[i] + pts[j])
        Fm = problem.solve(mid, warm=recs[i]).F
        rep.n_midpoints += 1
        if Fm < 0.5 * (F[i] + F[j]) - tol:
            rep.concavity.append((i, j, 0.5 * (F[i] + F[j]) - Fm))
    return rep


@dataclass
class SandwichReport:
    """Derivative sandwich ``grad_plus - tol <= psi <= grad_minus + tol``."""

    samples: list
    rtol: float
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def certify_sandwich(problem, etas, h_rel: float = 1e-4, rtol: float = 1e-2) -> SandwichReport:
    """Compare finite-difference partials of ``F`` with the penalty values.

    The tolerance for component ``i`` is ``rtol * psi_i``. Violations are
    ``(k, i, side, excess)`` with ``side`` in ``{"plus", "minus"}``.
    """
    rep = SandwichReport(samples=[], rtol=rtol)
    for k, eta in enumerate(np.atleast_2d(np.asarray(etas, dtype=float))):
        s = eval_F(problem, eta)
        s.grad_plus, s.grad_minus = fd_partials(problem, eta, h_rel)
        rep.samples.append(s)
        tol = rtol * np.abs(s.psi)
        for i in range(len(eta)):
            if s.grad_plus[i] - tol[i] > s.psi[i]:
                rep.violations.append((k, i, "plus", s.grad_plus[i] - s.psi[i]))
            if s.psi[i] > s.grad_minus[i] + tol[i]:
                rep.violations.append((k, i, "minus", s.psi[i] - s.grad_minus[i]))
    return rep


# ---------------------------------------------------------------------------
# landscapes
# ---------------------------------------------------------------------------

LANDSCAPE_COLUMNS = ("eta1", "eta2", "F", "phi", "psi1", "psi2", "Phi", "Psi")


def landscape(problem, eta1_values, eta2_values, gamma: float) -> np.ndarray:
    """Rows ``(eta1, eta2, F, phi, psi1, psi2, Phi, Psi)`` over a product grid.

    Rows are sorted by ``(eta1, eta2)`` regardless of evaluation order.
    """
    pts = grid_points((eta1_values, eta2_values))
    rows = []
    for p in pts:
        r = problem.solve(p)
        rows.append((p[0], p[1], r.F, r.phi, r.psi[0], r.psi[1],
                     phi_gamma(r.F, p, gamma), psi_gamma(r.phi, r.psi, gamma)))
    rows = np.array(rows, dtype=float).reshape(-1, len(LANDSCAPE_COLUMNS))
    order = np.lexsort((rows[:, 1], rows[:, 0]))
    return rows[order]


def write_landscape_csv(path, rows) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LANDSCAPE_COLUMNS)
            for r in rows:
                w.writerow([f"{v:.17g}" for v in r])
    except OSError as exc:
        raise OSError(f"cannot write landscape file {path}: {exc}") from exc
