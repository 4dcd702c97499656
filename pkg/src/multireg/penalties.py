"""Convex penalty functionals.

A :class:`Penalty` is one of

* ``quadratic``: ``psi(x) = scale/2 * ||L x||^2``; ``L = None`` means the
  identity, i.e. half the squared Euclidean norm;
* ``l1``: ``psi(x) = scale * sum |x_i|``;
* ``tv1d``: ``psi(x) = scale * sum |x_{i+1} - x_i|`` (unweighted jumps).

The discrete H^1 seminorm is the quadratic penalty with
``L = D / sqrt(h)``, so that ``psi(x) = 1/2 sum ((x_{i+1} - x_i)/h)^2 h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UnsupportedPenaltyError
from .operators import GridSpec

KINDS = ("quadratic", "l1", "tv1d")


@dataclass(frozen=True, eq=False)
class Penalty:
    kind: str
    L: np.ndarray | None = None
    scale: float = 1.0
    size: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}; expected one of {KINDS}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"penalty scale must be positive, got {self.scale}")
        if self.L is not None:
            if self.kind != "quadratic":
                raise ValueError("only quadratic penalties carry a matrix")
            L = np.array(self.L, dtype=float, ndmin=2)
            L.setflags(write=False)
            object.__setattr__(self, "L", L)
            if self.size is None:
                object.__setattr__(self, "size", L.shape[1])
            elif self.size != L.shape[1]:
                raise ValueError("penalty size disagrees with its matrix")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def is_quadratic(self) -> bool:
        return self.kind == "quadratic"

    @property
    def degree(self) -> int:
        """Degree of positive homogeneity."""
        return 2 if self.is_quadratic else 1

    def __call__(self, x) -> float:
        return evaluate(self, x)


def difference_matrix(n: int) -> np.ndarray:
    """Forward-difference matrix ``D`` of shape ``(n-1, n)``."""
    D = np.zeros((n - 1, n))
    i = np.arange(n - 1)
    D[i, i] = -1.0
    D[i, i + 1] = 1.0
    return D


def h1_seminorm(grid: GridSpec, scale: float = 1.0) -> Penalty:
    """``1/2 |x|_{H^1}^2`` discretized with forward differences on ``grid``."""
    L = difference_matrix(grid.n_points) / np.sqrt(grid.h)
    return Penalty("quadratic", L=L, scale=scale, name="h1")


def l2_squared(size: int | None = None, scale: float = 1.0) -> Penalty:
    """``1/2 ||x||^2``."""
    return Penalty("quadratic", scale=scale, size=size, name="l2")


def l1_norm(size: int | None = None, scale: float = 1.0) -> Penalty:
    return Penalty("l1", scale=scale, size=size, name="l1")


def total_variation(size: int | None = None, scale: float = 1.0) -> Penalty:
    return Penalty("tv1d", scale=scale, size=size, name="tv")


def _check_size(p: Penalty, x: np.ndarray):
    if x.ndim != 1:
        raise ValueError("penalties act on 1-D vectors")
    if p.size is not None and x.shape[0] != p.size:
        raise ValueError(f"dimension mismatch: penalty {p.name} expects {p.size}, got {x.shape[0]}")


def evaluate(p: Penalty, x) -> float:
    """Value of the penalty at ``x`` (nonnegative)."""
    x = np.asarray(x, dtype=float)
    _check_size(p, x)
    if p.kind == "quadratic":
        v = x if p.L is None else p.L @ x
        val = 0.5 * float(v @ v)
    elif p.kind == "l1":
        val = float(np.abs(x).sum())
    else:
        val = float(np.abs(np.diff(x)).sum())
    return p.scale * val


def quadratic_gram(p: Penalty, size: int | None = None) -> np.ndarray:
    """Symmetric PSD matrix ``G`` with ``psi(x) = 1/2 x^T G x``."""
    if p.kind != "quadratic":
        raise UnsupportedPenaltyError(f"penalty kind {p.kind!r} has no quadratic Gram matrix")
    if p.L is None:
        n = size if size is not None else p.size
        if n is None:
            raise ValueError("size required for the identity penalty")
        return p.scale * np.eye(n)
    G = p.L.T @ p.L
    return p.scale * 0.5 * (G + G.T)


def evaluate_all(penalties, x) -> np.ndarray:
    return np.array([evaluate(p, x) for p in penalties])
