"""Inner Tikhonov solvers.

Every solver minimizes

    J(x) = ||K x - y||^2 + sum_i eta_i psi_i(x)

for one supported penalty family and returns a :class:`SolveRecord`:

* all penalties quadratic: normal equations, Cholesky;
* one ``l1`` penalty plus quadratics (elastic net);
* one ``tv1d`` penalty plus quadratics (H^1-TV).

For the two nonsmooth families the minimizer is piecewise affine in the
nonsmooth weight, with breakpoints where an entry of ``x`` (or of ``D x``)
enters or leaves the support. The solvers try, in order, a primal-dual active
set iteration from the warm start, exact path following from the weight at
which the solution is trivial down to the requested weight, and finally a
first-order method (FISTA with function-value restart for the elastic net,
ADMM with residual balancing for H^1-TV) whose iterates are polished by the
active set step. Active set and path results solve the optimality system
exactly for the identified support, so their KKT residual sits at rounding
level. ``polish=False`` runs the first-order method alone.
"""

from __future__ import annotations

import functools
import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .exceptions import NonConvergenceError, SingularSystemError, UnsupportedPenaltyError
from .operators import GridSpec, LinearOperator, power_iteration
from .penalties import Penalty, difference_matrix, evaluate_all, h1_seminorm, l1_norm, l2_squared, total_variation

log = logging.getLogger(__name__)

__all__ = [
    "SolveRecord",
    "solve",
    "solve_quadratic",
    "solve_elastic_net",
    "solve_h1_tv",
    "objective",
    "SUPPORTED_FAMILIES",
]

SUPPORTED_FAMILIES = (
    "quadratic penalties only",
    "one l1 penalty plus quadratic penalties (elastic net)",
    "one tv1d penalty plus quadratic penalties (H1-TV)",
)

TOL_QUADRATIC = 1e-10
TOL_ITERATIVE = 1e-10
TOL_ADMM = 1e-8
MAX_ITER = 50000
# above this size the exact path is tried only after FISTA
PATH_FIRST_MAX_SIZE = 500
# FISTA iterations when the exact methods are available; its iterates only
# count once the active-set polish makes them exact, which at small weights
# either happens early or not at all
FISTA_BUDGET_POLISH = 3000


@dataclass
class SolveRecord:
    """Minimizer of ``J_eta`` with its fidelity/penalty split.

    ``F`` equals ``phi + eta @ psi``. ``dual`` holds a multiplier usable as a
    warm start (``D x`` multiplier for TV problems), ``method`` the path that
    produced ``x``.
    """

    x: np.ndarray
    eta: np.ndarray
    phi: float
    psi: np.ndarray
    F: float
    iterations: int
    kkt_residual: float
    method: str = ""
    tol: float = 0.0
    dual: np.ndarray | None = None
    converged: bool = True


def as_operator(K) -> LinearOperator:
    return K if isinstance(K, LinearOperator) else LinearOperator(np.asarray(K, dtype=float))


def check_eta(eta, n: int | None = None) -> np.ndarray:
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if eta.ndim != 1:
        raise ValueError("eta must be a vector")
    if n is not None and eta.shape[0] != n:
        raise ValueError(f"eta has {eta.shape[0]} components for {n} penalties")
    if not np.all(np.isfinite(eta)) or np.any(eta <= 0):
        raise ValueError(f"regularization parameters must be positive and finite, got {eta}")
    return eta


def objective(K, y, eta, penalties, x) -> float:
    """``J_eta(x)`` evaluated directly from the functionals."""
    K = as_operator(K)
    r = K.matrix @ x - y
    return float(r @ r + np.dot(eta, evaluate_all(penalties, x)))


def _record(K, y, eta, penalties, x, **kw) -> SolveRecord:
    r = K.matrix @ x - y
    phi = float(r @ r)
    psi = evaluate_all(penalties, x)
    return SolveRecord(x=x, eta=eta.copy(), phi=phi, psi=psi, F=phi + float(eta @ psi), **kw)


@functools.lru_cache(maxsize=64)
def _gram(p: Penalty) -> np.ndarray:
    G = p.L.T @ p.L
    G = 0.5 * (G + G.T)
    G.setflags(write=False)
    return G


@functools.lru_cache(maxsize=64)
def _gram_norm(p: Penalty) -> float:
    return power_iteration(_gram(p))


class _QuadraticPart:
    """``A = 2 K^T K + sum_i c_i G_i`` without forming identity Grams."""

    def __init__(self, K: LinearOperator, terms):
        self.K = K
        self.n = K.shape[1]
        self.ident = 0.0
        self.mats = []
        self._gram_bound = 0.0
        for c, p in terms:
            c = c * p.scale
            if p.L is None:
                self.ident += c
            else:
                self.mats.append((c, _gram(p)))
                self._gram_bound += c * _gram_norm(p)

    def dense(self) -> np.ndarray:
        A = 2.0 * self.K.normal_matrix()
        for c, G in self.mats:
            A = A + c * G
        if self.ident:
            A = A + self.ident * np.eye(self.n)
        return A

    def matvec(self, x):
        out = 2.0 * self.K.normal_product(x)
        for c, G in self.mats:
            out += c * (G @ x)
        if self.ident:
            out += self.ident * x
        return out

    def sub(self, S):
        ix = np.ix_(S, S)
        A = 2.0 * self.K.normal_matrix()[ix]
        for c, G in self.mats:
            A += c * G[ix]
        if self.ident:
            A[np.diag_indices_from(A)] += self.ident
        return A

    def column(self, rows, j):
        """``A[rows, j]``."""
        c = 2.0 * self.K.normal_matrix()[rows, j]
        for w, G in self.mats:
            c += w * G[rows, j]
        if self.ident:
            c[rows == j] += self.ident
        return c

    def diag(self):
        d = 2.0 * np.diag(self.K.normal_matrix()).copy()
        for c, G in self.mats:
            d += c * np.diag(G)
        return d + self.ident

    def lmax(self) -> float:
        """Upper bound on the largest eigenvalue."""
        return 2.0 * self.K.norm_squared() + self.ident + self._gram_bound


def _classify(penalties):
    quad = [i for i, p in enumerate(penalties) if p.kind == "quadratic"]
    l1 = [i for i, p in enumerate(penalties) if p.kind == "l1"]
    tv = [i for i, p in enumerate(penalties) if p.kind == "tv1d"]
    if len(quad) == len(penalties):
        return "quadratic", quad, None
    if len(l1) == 1 and not tv:
        return "l1", quad, l1[0]
    if len(tv) == 1 and not l1:
        return "tv", quad, tv[0]
    kinds = [p.kind for p in penalties]
    raise UnsupportedPenaltyError(
        f"no solver for penalty combination {kinds}; supported families: " + "; ".join(SUPPORTED_FAMILIES)
    )


def _validate(K, y, eta, penalties):
    K = as_operator(K)
    y = np.asarray(y, dtype=float)
    if y.shape != (K.shape[0],):
        raise ValueError(f"data has shape {y.shape}, operator has {K.shape[0]} rows")
    if len(penalties) == 0:
        raise ValueError("at least one penalty is required")
    eta = check_eta(eta, len(penalties))
    for p in penalties:
        if p.size is not None and p.size != K.shape[1]:
            raise ValueError(f"penalty {p.name} has size {p.size}, operator has {K.shape[1]} columns")
    return K, y, eta


def _factor(A, what):
    try:
        return sla.cho_factor(A, lower=False, check_finite=False)
    except sla.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (A + A.T))
        v = V[:, np.argmin(w)]
        raise SingularSystemError(
            f"{what} is singular (smallest eigenvalue {w.min():.3e}); "
            "the operator and all quadratic penalties share a null direction",
            direction=v,
        ) from None


# reduced systems beyond this condition number give untrustworthy solutions
MAX_REDUCED_COND = 1e13


def _guarded_cho(M):
    """Cholesky factor of a reduced system, or None if (nearly) singular.

    The squared ratio of the extreme diagonal entries of the factor is a
    cheap lower bound on the condition number.
    """
    try:
        fac = sla.cho_factor(M, check_finite=False)
    except (sla.LinAlgError, ValueError):
        return None
    d = np.abs(np.diag(fac[0]))
    if d.size and (d.min() == 0.0 or (d.max() / d.min()) ** 2 > MAX_REDUCED_COND):
        return None
    return fac


# ---------------------------------------------------------------------------
# quadratic
# ---------------------------------------------------------------------------


def solve_quadratic(K, y, eta, penalties, *, tol=TOL_QUADRATIC, method="cholesky", x0=None,
                    max_iter=MAX_ITER, **_) -> SolveRecord:
    """Solve ``(2 K^T K + sum eta_i G_i) x = 2 K^T y``.

    ``method="cholesky"`` factors the dense matrix; ``method="cg"`` runs
    matrix-free conjugate gradients to relative residual ``tol`` and exists
    mainly as an independent cross-check of the direct path.
    """
    K, y, eta = _validate(K, y, eta, penalties)
    if any(p.kind != "quadratic" for p in penalties):
        raise UnsupportedPenaltyError("solve_quadratic requires quadratic penalties only")
    Q = _QuadraticPart(K, zip(eta, penalties))
    b = 2.0 * K.rmatvec(y)
    if method == "cholesky":
        A = Q.dense()
        x = sla.cho_solve(_factor(A, "normal-equation matrix"), b, check_finite=False)
        Ax = A @ x
        iterations = 1
    elif method == "cg":
        n = len(b)
        A = spla.LinearOperator((n, n), matvec=Q.matvec, dtype=float)
        counter = [0]

        def count(_):
            counter[0] += 1

        x, info = spla.cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter, callback=count)
        Ax = Q.matvec(x)
        iterations = counter[0]
    else:
        raise ValueError(f"unknown quadratic method {method!r}; expected 'cholesky' or 'cg'")
    kkt = float(np.linalg.norm(Ax - b) / _residual_scale(Ax, b))
    if method == "cg" and kkt > tol:
        best = _record(K, y, eta, penalties, x, iterations=iterations, kkt_residual=kkt, method="cg", tol=tol,
                       converged=False)
        raise NonConvergenceError(f"CG reached {iterations} iterations with residual {kkt:.3e} > {tol:.1e}",
                                  best=best)
    # a direct solve has no iterations to add; a large residual only flags
    # an ill-conditioned system
    return _record(K, y, eta, penalties, x, iterations=iterations, kkt_residual=kkt, method=method, tol=tol,
                   converged=kkt <= tol)


# ---------------------------------------------------------------------------
# l1 + quadratic (elastic net)
# ---------------------------------------------------------------------------


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _residual_scale(Ax, b):
    """``max(||b||, ||A x||)``, the size of the terms a KKT residual balances.

    Unlike a backward-error scale this does not grow with ``||x||``. It does
    not make the residual sensitive to very small weights, see
    :func:`_l1_active_set`.
    """
    return max(np.linalg.norm(b), np.linalg.norm(Ax), 1e-300)


def _l1_kkt(Qx, b, x, lam):
    """Minimal-norm subgradient of ``J`` relative to :func:`_residual_scale`.

    ``A x - b`` is the smooth part's (half) gradient.
    """
    g = Qx - b
    scale = _residual_scale(Qx, b)
    on = x != 0
    r = np.where(on, g + lam * np.sign(x), np.sign(g) * np.maximum(np.abs(g) - lam, 0.0))
    return float(np.linalg.norm(r) / scale)


def _l1_active_set(Q, b, lam, x, tol, max_iter=40):
    """Semismooth Newton iteration on ``x = soft(x + tau*(b - A x), tau*lam)``.

    Returns ``(x, iterations)`` or None when the iteration cycles, meets a
    singular reduced system or runs out of iterations.
    """
    tau = 1.0 / Q.diag()
    d = b - Q.matvec(x)
    seen = set()
    for it in range(1, max_iter + 1):
        u = x + tau * d
        active = np.abs(u) > tau * lam
        sigma = np.sign(u[active])
        key = (active.tobytes(), sigma.tobytes())
        if key in seen:
            return None
        seen.add(key)
        S = np.flatnonzero(active)
        x = np.zeros_like(x)
        if S.size:
            fac = _guarded_cho(Q.sub(S))
            if fac is None:
                return None
            x[S] = sla.cho_solve(fac, b[S] - lam * sigma, check_finite=False)
            if not np.all(np.isfinite(x)):
                return None
        d = b - Q.matvec(x)
        # At small weights a wrong sign costs only 2 lam in the KKT residual
        # but a large objective gap, so also require the support solve to be
        # the exact minimizer: consistent signs and a feasible complement.
        slack = 1e-12 * _residual_scale(b - d, b)
        exact = np.all(x[S] * sigma > 0) and np.all(np.abs(d[~active]) <= lam + slack)
        if exact and _l1_kkt(b - d, b, x, lam) <= tol:
            return x, it
    return None


class _SingularSupport(Exception):
    pass


def _l1_support_solve(Q, b, lam, x):
    """Exact minimizer for the support and signs of ``x``, or None.

    The solve on a fixed support is exact up to round-off, and it is optimal
    when its signs agree with ``x`` and ``|b - A w| <= lam`` off the support.
    Raises ``_SingularSupport`` when the support block is too ill-conditioned
    for a direct solve.
    """
    S = np.flatnonzero(x)
    sigma = np.sign(x[S])
    w = np.zeros_like(x)
    if S.size:
        fac = _guarded_cho(Q.sub(S))
        if fac is None:
            raise _SingularSupport
        w[S] = sla.cho_solve(fac, b[S] - lam * sigma, check_finite=False)
    d = b - Q.matvec(w)
    off = np.ones(len(x), dtype=bool)
    off[S] = False
    slack = 1e-12 * _residual_scale(b - d, b)
    if np.all(w[S] * sigma > 0) and np.all(np.abs(d[off]) <= lam + slack):
        return w
    return None


def _homotopy(affine, n_idx, lam_start, lam, max_events, start=None):
    """Exact path following in the weight of the nonsmooth term.

    For a fixed active set and sign pattern the optimality system is affine
    in the weight ``t``: ``affine(active, sigma)`` returns ``(s0, s1, q0,
    q1)`` such that the signal ``s0 + t*s1`` (jumps or coefficients, read on
    active indices) and the multiplier ``q0 + t*q1`` (read on inactive
    indices) are exact. The path starts at ``lam_start`` with an empty active
    set and moves down, adding an index when ``|q_i|`` reaches ``t`` and
    dropping it when ``s_i`` reaches zero.

    ``start = (active, sigma)`` resumes the path from an exact solution at
    ``lam_start`` instead of the empty set.

    Returns ``(active, sigma, events)`` valid at ``lam`` or None.
    """
    if start is None:
        active = np.zeros(n_idx, dtype=bool)
        sigma = np.zeros(n_idx)
        # start just above so the index attaining lam_start enters first
        t = lam_start * (1.0 + 1e-9)
    else:
        active = np.array(start[0], dtype=bool)
        sigma = np.zeros(n_idx)
        sigma[active] = start[1]
        t = lam_start
    for events in range(max_events):
        res = affine(active, sigma[active])
        if res is None:
            return None
        s0, s1, q0, q1 = res
        best, kind, j = lam, None, -1
        # Events are accepted only when the quantity moves towards its bound
        # as t decreases; this resolves near-ties created by rounding.
        ceil = t * (1.0 + 1e-9)
        with np.errstate(divide="ignore", invalid="ignore"):
            tz = np.where(active & (sigma * s1 > 0), -s0 / s1, -np.inf)
            tp = np.where(~active & (q1 < 1.0), q0 / (1.0 - q1), -np.inf)
            tm = np.where(~active & (q1 > -1.0), -q0 / (1.0 + q1), -np.inf)
        for cand, what in ((tz, "drop"), (tp, 1.0), (tm, -1.0)):
            cand[~np.isfinite(cand) | (cand > ceil)] = -np.inf
            if cand.size and cand.max() > best:
                j = int(np.argmax(cand))
                best, kind = cand[j], what
        if kind is None:
            return active, sigma[active], events
        t = min(best, t)
        if kind == "drop":
            active[j] = False
            sigma[j] = 0.0
        else:
            active[j] = True
            sigma[j] = kind
    return None


class _SupportFactor:
    """Upper Cholesky factor of ``A[S, S]`` updated as ``S`` gains or loses an index.

    Path events change the support by one index, so a column insertion (two
    triangular solves) or deletion (Givens sweep) replaces a refactorization.
    The factor keeps its own index order; ``valid`` is False when the block
    fails the same conditioning test as :func:`_guarded_cho`.
    """

    def __init__(self, Q):
        self.Q = Q
        self.order = np.empty(0, dtype=int)
        self.R = np.empty((0, 0))

    def _refactor(self, S):
        self.order = S.copy()
        if not S.size:
            self.R = np.empty((0, 0))
            return True
        fac = _guarded_cho(self.Q.sub(S))
        if fac is None:
            return False
        self.R = np.asfortranarray(np.triu(fac[0]) if not fac[1] else np.triu(fac[0].T))
        return True

    def _insert(self, j):
        k = self.order.size
        c = self.Q.column(self.order, j) if k else np.empty(0)
        d = float(self.Q.column(np.array([j]), j)[0])
        r = sla.solve_triangular(self.R, c, trans="T", check_finite=False) if k else c
        rho2 = d - r @ r
        if not rho2 > 0:
            return False
        # Fortran order keeps the LAPACK triangular solves copy-free
        R = np.zeros((k + 1, k + 1), order="F")
        R[:k, :k] = self.R
        R[:k, k] = r
        R[k, k] = np.sqrt(rho2)
        self.R = R
        self.order = np.append(self.order, j)
        return True

    def _delete(self, j):
        p = int(np.flatnonzero(self.order == j)[0])
        k = self.order.size
        if k == 1:
            self.R = np.empty((0, 0))
        else:
            _, R = sla.qr_delete(np.eye(k), self.R, p, 1, which="col", check_finite=False)
            self.R = np.asfortranarray(R[:k - 1])
        self.order = np.delete(self.order, p)

    def update(self, S) -> bool:
        added = np.setdiff1d(S, self.order, assume_unique=True)
        removed = np.setdiff1d(self.order, S, assume_unique=True)
        if added.size + removed.size > 1:
            return self._refactor(S)
        if removed.size:
            self._delete(removed[0])
        elif added.size and not self._insert(added[0]):
            return self._refactor(S)
        d = np.abs(np.diag(self.R))
        return not d.size or (d.min() > 0.0 and (d.max() / d.min()) ** 2 <= MAX_REDUCED_COND)

    def solve(self, rhs):
        """Solve ``A[order, order] z = rhs`` (``rhs`` in factor order)."""
        z = sla.solve_triangular(self.R, rhs, trans="T", check_finite=False)
        return sla.solve_triangular(self.R, z, check_finite=False)


def _l1_path(Q, b, lam_start, lam, x_start=None):
    n = len(b)
    fac = _SupportFactor(Q)

    def affine(active, sigma):
        S = np.flatnonzero(active)
        s0 = np.zeros(n)
        s1 = np.zeros(n)
        if S.size:
            if not fac.update(S):
                return None
            sig = np.zeros(n)
            sig[S] = sigma
            o = fac.order
            z = fac.solve(np.column_stack([b[o], -sig[o]]))
            s0[o], s1[o] = z[:, 0], z[:, 1]
        else:
            fac.update(S)
        both = Q.matvec(np.column_stack([s0, s1]))
        return s0, s1, b - both[:, 0], -both[:, 1]

    start = None if x_start is None else (x_start != 0, np.sign(x_start[x_start != 0]))
    res = _homotopy(affine, n, lam_start, lam, max_events=20 * n, start=start)
    if res is None:
        return None
    active, sigma, events = res
    s0, s1, _, _ = affine(active, sigma)
    return s0 + lam * s1, events


def _fista(Q, b, lam, x, L, n_iter, obj):
    """FISTA with function-value restart; returns the last accepted iterate."""
    step = 1.0 / L
    z = x.copy()
    t = 1.0
    fx = obj(x)
    history = [fx]
    for _ in range(n_iter):
        g = Q.matvec(z) - b
        x_new = _soft(z - step * g, step * lam)
        f_new = obj(x_new)
        if f_new > fx:
            # restart: drop momentum and take a plain proximal step from x
            t = 1.0
            z = x.copy()
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        history.append(fx)
    return x, history


def _solve_l1_family(K, y, eta, penalties, quad, il1, *, x0=None, eta_warm=None, tol=TOL_ITERATIVE,
                     max_iter=MAX_ITER, polish=True, **_):
    Q = _QuadraticPart(K, [(eta[i], penalties[i]) for i in quad])
    lam = eta[il1] * penalties[il1].scale
    b = 2.0 * K.rmatvec(y)
    a_norm = Q.lmax()
    big = len(b) > PATH_FIRST_MAX_SIZE
    ssn_iter = 10 if big else 40

    def obj(v):
        r = K @ v - y
        val = r @ r + lam * np.abs(v).sum()
        for c, G in Q.mats:
            val += 0.5 * c * (v @ (G @ v))
        return val + 0.5 * Q.ident * (v @ v)

    # every penalty vanishes at 0, so a minimizer cannot do worse than x = 0
    J0 = float(y @ y)

    kkt_only = []

    def certified(v):
        """The exact minimizer on the support of ``v`` if it passes, else None.

        A support too ill-conditioned to re-solve falls back to the KKT test
        alone, and the record's method is marked ``+kkt``.
        """
        kkt_only.clear()
        try:
            w = _l1_support_solve(Q, b, lam, v)
        except _SingularSupport:
            w = v
            kkt_only.append(True)
        if w is None or _l1_kkt(Q.matvec(w), b, w, lam) > tol or obj(w) > J0 * (1.0 + 1e-12):
            return None
        return w

    def finish(v, iters, method):
        kkt = _l1_kkt(Q.matvec(v), b, v, lam)
        if kkt_only:
            method += "+kkt"
        return _record(K, y, eta, penalties, v, iterations=iters, kkt_residual=kkt, method=method, tol=tol)

    def active_set(v):
        kkt_only.clear()
        res = _l1_active_set(Q, b, lam, v, tol, max_iter=ssn_iter)
        return res if res is not None and obj(res[0]) <= J0 * (1.0 + 1e-12) else None

    def path():
        # x = 0 is optimal for every weight above ||b||_inf
        lam0 = np.abs(b).max()
        out = (np.zeros(len(b)), 0) if lam0 <= lam else _l1_path(Q, b, lam0, lam)
        w = None if out is None else certified(out[0])
        return None if w is None else (w, out[1])

    def path_from_warm(v):
        # x0 exact for a larger l1 weight and the same quadratic part: resume its path
        if eta_warm is None or len(eta_warm) != len(eta) or not np.array_equal(eta_warm[quad], eta[quad]):
            return None
        lam_w = eta_warm[il1] * penalties[il1].scale
        if not lam_w > lam or _l1_kkt(Q.matvec(v), b, v, lam_w) > tol:
            return None
        out = _l1_path(Q, b, lam_w, lam, x_start=v)
        w = None if out is None else certified(out[0])
        return None if w is None else (w, out[1])

    x = np.zeros(K.shape[1]) if x0 is None else np.array(x0, dtype=float)
    # the KKT residual hardly depends on tiny weights, so a start is reused
    # as is only for the weights it was computed at
    same = eta_warm is not None and np.array_equal(eta_warm, eta)
    if same or x0 is None:
        w = certified(x)
        if w is not None:
            return finish(w, 0, "warm")
    if polish:
        out = path_from_warm(x)
        if out is not None:
            return finish(out[0], out[1], "homotopy")
        res = active_set(x)
        if res is not None:
            return finish(res[0], res[1], "active-set")
        # Each path event refactors the support block, so large problems go
        # through the first-order method first.
        if not big:
            out = path()
            if out is not None:
                return finish(out[0], out[1], "homotopy")
    total = 0
    L = 1.01 * a_norm
    seg = 100
    fista_cap = min(max_iter, FISTA_BUDGET_POLISH) if polish else max_iter
    while total < fista_cap:
        n = min(seg, fista_cap - total)
        x, _ = _fista(Q, b, lam, x, L, n, obj)
        total += n
        if polish:
            res = active_set(x)
            if res is not None:
                return finish(res[0], total + res[1], "fista+active-set")
        w = certified(x)
        if w is not None:
            return finish(w, total, "fista")
        seg *= 2
    if polish and big:
        out = path()
        if out is not None:
            return finish(out[0], total + out[1], "fista+homotopy")
    best = finish(x, total, "fista")
    best.converged = False
    raise NonConvergenceError(
        f"elastic-net solver reached {total} iterations with KKT residual {best.kkt_residual:.3e} > {tol:.1e}",
        best=best,
    )


def solve_elastic_net(K, y, eta, *, l1: Penalty | None = None, l2: Penalty | None = None, **kw) -> SolveRecord:
    """Minimize ``||Kx - y||^2 + eta[0] ||x||_1 + eta[1]/2 ||x||^2``."""
    K = as_operator(K)
    n = K.shape[1]
    penalties = [l1 or l1_norm(n), l2 or l2_squared(n)]
    return solve(K, y, eta, penalties, **kw)


# ---------------------------------------------------------------------------
# tv1d + quadratic (H1-TV)
# ---------------------------------------------------------------------------


class _BlockSystem:
    """TV active-set machinery for a fixed quadratic part ``A`` and data ``b``.

    Given the jump set ``J`` and jump signs, the minimizer is constant on the
    blocks between jumps; the block values solve a small system with matrix
    ``B^T A B`` (``B`` the block indicator matrix), and the multiplier of
    ``D x`` follows from a cumulative sum of the stationarity residual.
    """

    def __init__(self, A, b, D):
        self.A = A
        self.b = b
        n = len(b)
        fac = _factor(A, "H1-TV quadratic part")
        # scaling of the active-set test: diagonal of D A^{-1} D^T
        W = sla.cho_solve(fac, D.T, check_finite=False)
        self.tau = 1.0 / np.einsum("ij,ji->i", D, W)
        self.n = n

    def solve(self, jumps, sigma, lam):
        n = self.n
        starts = np.concatenate(([0], jumps + 1))
        rhs = self.b.copy()
        s = lam * sigma
        rhs[jumps] += s
        rhs[jumps + 1] -= s
        AB = np.add.reduceat(self.A, starts, axis=1)
        BAB = np.add.reduceat(AB, starts, axis=0)
        rb = np.add.reduceat(rhs, starts)
        fac = _guarded_cho(BAB)
        if fac is None:
            return None
        v = sla.cho_solve(fac, rb, check_finite=False)
        lengths = np.diff(np.concatenate((starts, [n])))
        x = np.repeat(v, lengths)
        r = self.b - self.A @ x
        p = -np.cumsum(r)[:-1]
        p[jumps] = s
        return x, p

    def constant_start(self):
        """Solution and multiplier when no jumps are allowed."""
        x, p = self.solve(np.array([], dtype=np.int64), np.array([]), 0.0)
        return x, p


def _tv_active_set(sys, lam, x, p, max_iter=60):
    seen = set()
    prev = None
    for it in range(1, max_iter + 1):
        u = p + sys.tau * np.diff(x)
        active = np.abs(u) > lam
        sigma = np.sign(u[active])
        key = (active.tobytes(), sigma.tobytes())
        if key == prev:
            if np.all(np.abs(p) <= lam * (1 + 1e-10)):
                return (x, p), it
            return None
        if key in seen:
            return None
        seen.add(key)
        prev = key
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            res = sys.solve(np.flatnonzero(active), sigma, lam)
        if res is None:
            return None
        x, p = res
    return None


def _tv_path(sys, lam):
    x_c, p_c = sys.constant_start()
    lam0 = np.abs(p_c).max()
    if lam0 <= lam:
        return (x_c, p_c), 1
    m = sys.n - 1

    def affine(active, sigma):
        J = np.flatnonzero(active)
        r0 = sys.solve(J, sigma, 0.0)
        r1 = sys.solve(J, sigma, 1.0)
        if r0 is None or r1 is None:
            return None
        (x0, p0), (x1, p1) = r0, r1
        w0 = np.diff(x0)
        return w0, np.diff(x1) - w0, p0, p1 - p0

    res = _homotopy(affine, m, lam0, lam, max_events=20 * m)
    if res is None:
        return None
    active, sigma, events = res
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        out = sys.solve(np.flatnonzero(active), sigma, lam)
    return None if out is None else (out, events)


def _tv_kkt(A, b, D, x, p, lam):
    """Stationarity residual with ``p`` projected onto ``lam * sign(D x)``.

    Scaled as in :func:`_l1_kkt`.
    """
    w = D @ x
    thr = 1e-9 * max(np.abs(x).max(), 1e-300)
    jump = np.abs(w) > thr
    ph = np.where(jump, lam * np.sign(w), np.clip(p, -lam, lam))
    Ax = A @ x
    return float(np.linalg.norm(Ax - b + D.T @ ph) / _residual_scale(Ax, b))


def _solve_tv_family(K, y, eta, penalties, quad, itv, *, x0=None, dual0=None, tol=TOL_ITERATIVE,
                     admm_tol=TOL_ADMM, max_iter=MAX_ITER, polish=True, rho=1.0, **_):
    n = K.shape[1]
    Qp = _QuadraticPart(K, [(eta[i], penalties[i]) for i in quad])
    A = Qp.dense()
    lam = eta[itv] * penalties[itv].scale
    b = 2.0 * K.rmatvec(y)
    D = difference_matrix(n)

    blocks = {}

    def polished(x_start, p_start):
        if "sys" not in blocks:
            blocks["sys"] = _BlockSystem(A, b, D)
        sys = blocks["sys"]
        res = _tv_active_set(sys, lam, x_start, np.asarray(p_start, dtype=float))
        method = "active-set"
        if res is None:
            res = _tv_path(sys, lam)
            method = "homotopy"
        if res is None:
            return None
        (x, p), it = res
        kkt = _tv_kkt(A, b, D, x, p, lam)
        if kkt > tol:
            return None
        return _record(K, y, eta, penalties, x, iterations=it, kkt_residual=kkt, method=method, tol=tol, dual=p)

    if polish:
        x_start = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        p_start = np.zeros(n - 1) if dual0 is None else dual0
        rec = polished(x_start, p_start)
        if rec is not None:
            return rec

    # ADMM, scaled form: u = multiplier / rho
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    z = D @ x
    u = np.zeros(n - 1) if dual0 is None else np.clip(dual0, -lam, lam) / rho
    fac = _factor(A + rho * (D.T @ D), "ADMM system matrix")
    total = 0
    seg = 100
    sqn = np.sqrt(n)
    while total < max_iter:
        stop = min(total + seg, max_iter)
        r_norm = s_norm = np.inf
        converged = False
        while total < stop:
            total += 1
            x = sla.cho_solve(fac, b + rho * (D.T @ (z - u)), check_finite=False)
            Dx = D @ x
            z_old = z
            z = _soft(Dx + u, lam / rho)
            u = u + Dx - z
            r_norm = np.linalg.norm(Dx - z)
            s_norm = rho * np.linalg.norm(D.T @ (z - z_old))
            eps_pri = sqn * admm_tol + admm_tol * max(np.linalg.norm(Dx), np.linalg.norm(z))
            eps_dual = sqn * admm_tol + admm_tol * rho * np.linalg.norm(D.T @ u)
            if r_norm <= eps_pri and s_norm <= eps_dual:
                converged = True
                break
            if total % 10 == 0:
                if r_norm > 10 * s_norm:
                    rho *= 2.0
                    u /= 2.0
                    fac = _factor(A + rho * (D.T @ D), "ADMM system matrix")
                elif s_norm > 10 * r_norm:
                    rho /= 2.0
                    u *= 2.0
                    fac = _factor(A + rho * (D.T @ D), "ADMM system matrix")
        if polish:
            rec = polished(x, rho * u)
            if rec is not None:
                rec.iterations += total
                rec.method = "admm+" + rec.method
                return rec
        if converged:
            kkt = max(r_norm / max(eps_pri, 1e-300), s_norm / max(eps_dual, 1e-300)) * admm_tol
            return _record(K, y, eta, penalties, x, iterations=total, kkt_residual=float(kkt),
                           method="admm", tol=admm_tol, dual=rho * u)
        seg *= 2
    best = _record(K, y, eta, penalties, x, iterations=total, kkt_residual=float(r_norm + s_norm),
                   method="admm", tol=admm_tol, dual=rho * u, converged=False)
    raise NonConvergenceError(f"H1-TV solver did not converge in {total} iterations", best=best)


def solve_h1_tv(K, y, eta, grid: GridSpec | None = None, *, h1: Penalty | None = None,
                tv: Penalty | None = None, **kw) -> SolveRecord:
    """Minimize ``||Kx - y||^2 + eta[0]/2 |x|_{H^1}^2 + eta[1] |x|_TV``."""
    K = as_operator(K)
    if h1 is None:
        if grid is None:
            raise ValueError("either grid or an explicit H1 penalty is required")
        h1 = h1_seminorm(grid)
    penalties = [h1, tv or total_variation(K.shape[1])]
    return solve(K, y, eta, penalties, **kw)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def solve(K, y, eta, penalties, *, warm: SolveRecord | None = None, **kw) -> SolveRecord:
    """Minimize ``J_eta`` for any supported penalty family.

    Parameters
    ----------
    K : LinearOperator or (m, n) array
    y : (m,) array
    eta : (n_pen,) array of positive floats
    penalties : sequence of Penalty
    warm : SolveRecord, optional
        Previous solution used to seed ``x0`` and ``dual0``.
    **kw
        ``x0``, ``dual0``, ``tol``, ``max_iter``, ``polish`` forwarded to the
        family solver.

    Raises
    ------
    UnsupportedPenaltyError
        For combinations outside :data:`SUPPORTED_FAMILIES`.
    NonConvergenceError
        When an iterative solver reaches ``max_iter``; ``exc.best`` holds the
        last iterate.
    """
    penalties = list(penalties)
    K, y, eta = _validate(K, y, eta, penalties)
    family, quad, idx = _classify(penalties)
    if warm is not None:
        kw.setdefault("x0", warm.x)
        if warm.dual is not None:
            kw.setdefault("dual0", warm.dual)
    if family == "quadratic":
        return solve_quadratic(K, y, eta, penalties, **kw)
    if family == "l1":
        kw.pop("dual0", None)
        if warm is not None:
            kw.setdefault("eta_warm", warm.eta)
        return _solve_l1_family(K, y, eta, penalties, quad, idx, **kw)
    return _solve_tv_family(K, y, eta, penalties, quad, idx, **kw)
