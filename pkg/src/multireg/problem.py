"""Regularized inverse problem instances.

A :class:`Problem` bundles the forward operator, the penalties and the data,
and memoizes solves by parameter vector. Every solve is logged in
``problem.audit`` (parameter, fidelity, penalties, value and a comparison
with the exact solution when one is known) so that certification code can
inspect all evaluations made during a run.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .inner_solver import SolveRecord, as_operator, check_eta, solve
from .operators import GridSpec, ImageGrid, LinearOperator
from .penalties import Penalty, evaluate_all


@dataclass(frozen=True)
class AuditEntry:
    eta: tuple
    phi: float
    psi: tuple
    F: float
    kkt_residual: float
    tol: float
    converged: bool
    method: str
    # J_eta(x_true), NaN when no exact solution is attached
    J_true: float = float("nan")


@dataclass(eq=False)
class Problem:
    """Operator, penalties and (noisy) data of one inverse problem.

    Parameters
    ----------
    operator : LinearOperator
    penalties : sequence of Penalty
    y_noisy : (m,) ndarray
        The data actually fitted.
    x_true, y_true : ndarray, optional
        Exact solution and data of synthetic problems.
    delta2 : float, optional
        ``||K x_true - y_noisy||^2``; computed when ``x_true`` is given.
    noise_level : float
        Relative noise level used to generate ``y_noisy``.
    seed : int or None
        Seed of the noise realization.
    grid : GridSpec or ImageGrid, optional
    name : str
    cache_size : int
        Number of solve records kept for reuse.
    """

    operator: LinearOperator
    penalties: tuple
    y_noisy: np.ndarray
    x_true: np.ndarray | None = None
    y_true: np.ndarray | None = None
    delta2: float | None = None
    noise_level: float = 0.0
    seed: int | None = None
    grid: GridSpec | ImageGrid | None = None
    name: str = ""
    cache_size: int = 4096
    audit: list = field(default_factory=list, repr=False)
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)
    _last: SolveRecord | None = field(default=None, repr=False)

    def __post_init__(self):
        self.operator = as_operator(self.operator)
        self.penalties = tuple(self.penalties)
        if not self.penalties or not all(isinstance(p, Penalty) for p in self.penalties):
            raise TypeError("penalties must be a nonempty sequence of Penalty")
        m, n = self.operator.shape
        self.y_noisy = np.asarray(self.y_noisy, dtype=float)
        if self.y_noisy.shape != (m,):
            raise ValueError(f"data has shape {self.y_noisy.shape}, operator has {m} rows")
        if self.x_true is not None:
            self.x_true = np.asarray(self.x_true, dtype=float)
            if self.x_true.shape != (n,):
                raise ValueError("x_true does not match the operator width")
            if self.y_true is None:
                self.y_true = self.operator @ self.x_true
            r = self.operator @ self.x_true - self.y_noisy
            d2 = float(r @ r)
            if self.delta2 is None:
                self.delta2 = d2
            elif abs(self.delta2 - d2) > 1e-12 * max(d2, 1e-300):
                raise ValueError("stored delta2 disagrees with ||K x_true - y_noisy||^2")
            self._psi_true = evaluate_all(self.penalties, self.x_true)
        else:
            self._psi_true = None

    @property
    def n_penalties(self) -> int:
        return len(self.penalties)

    @property
    def size(self) -> int:
        return self.operator.shape[1]

    def solve(self, eta, warm: SolveRecord | None = None, **kw) -> SolveRecord:
        """Minimizer of ``J_eta``, memoized on the exact parameter values.

        Without ``warm`` the solver is seeded by a cached solve that differs
        only in a larger l1 weight (its path can be resumed), else by the most
        recent solve. The inner solvers are exact, so this only affects speed.
        """
        eta = check_eta(eta, self.n_penalties)
        key = eta.tobytes()
        if key in self._cache and not kw:
            self._cache.move_to_end(key)
            return self._cache[key]
        if warm is None:
            warm = self._path_neighbour(eta) or self._last
        rec = solve(self.operator, self.y_noisy, eta, self.penalties, warm=warm, **kw)
        self._log(rec)
        self._last = rec
        if not kw:
            self._cache[key] = rec
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return rec

    def _path_neighbour(self, eta):
        l1 = [i for i, p in enumerate(self.penalties) if p.kind == "l1"]
        if len(l1) != 1:
            return None
        i = l1[0]
        others = np.arange(self.n_penalties) != i
        best = None
        for rec in self._cache.values():
            if rec.eta[i] > eta[i] and np.array_equal(rec.eta[others], eta[others]):
                if best is None or rec.eta[i] < best.eta[i]:
                    best = rec
        return best

    def _log(self, rec: SolveRecord):
        J_true = float("nan")
        if self._psi_true is not None:
            J_true = self.delta2 + float(rec.eta @ self._psi_true)
        self.audit.append(AuditEntry(
            eta=tuple(rec.eta), phi=rec.phi, psi=tuple(rec.psi), F=rec.F,
            kkt_residual=rec.kkt_residual, tol=rec.tol, converged=rec.converged,
            method=rec.method, J_true=J_true,
        ))

    def relative_error(self, x) -> float:
        if self.x_true is None:
            raise ValueError("problem has no exact solution")
        return relative_error(x, self.x_true)

    def with_penalties(self, penalties, name: str | None = None) -> "Problem":
        """Same data with a different penalty set (fresh cache and audit)."""
        return Problem(
            operator=self.operator, penalties=tuple(penalties), y_noisy=self.y_noisy,
            x_true=self.x_true, y_true=self.y_true, delta2=self.delta2,
            noise_level=self.noise_level, seed=self.seed, grid=self.grid,
            name=self.name if name is None else name, cache_size=self.cache_size,
        )


def relative_error(x, x_true) -> float:
    """``||x - x_true|| / ||x_true||``."""
    x = np.asarray(x, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    nt = np.linalg.norm(x_true)
    if nt == 0:
        raise ValueError("relative error undefined for a zero reference")
    return float(np.linalg.norm(x - x_true) / nt)
