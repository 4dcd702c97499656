"""Discrete forward operators for the test problems.

Three families are provided: midpoint-rule discretizations of first-kind
convolution kernels on an interval, a masked 2-D Gaussian blur with zero
boundary conditions, and generic dense matrices (loaded from the text matrix
format written by :func:`save_matrix`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "GridSpec",
    "ImageGrid",
    "LinearOperator",
    "kernel_function",
    "build_convolution_kernel",
    "build_gaussian_blur",
    "gaussian_stencil",
    "apply",
    "save_matrix",
    "load_matrix",
    "save_operator",
    "load_operator",
]

# products go through a CSR copy when at most this fraction of entries is nonzero
SPARSE_DENSITY = 0.05


@dataclass(frozen=True)
class GridSpec:
    """Uniform midpoint grid of ``n_points`` cells on ``[a, b]``."""

    a: float
    b: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise ValueError(f"invalid interval [{self.a}, {self.b}]")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return self.a + (np.arange(self.n_points) + 0.5) * self.h


@dataclass(frozen=True)
class ImageGrid:
    """Pixel grid of a ``height x width`` image, flattened row-major."""

    width: int
    height: int

    def __post_init__(self):
        for name in ("width", "height"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")

    @property
    def n_points(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """Dense forward operator, optionally restricted to a subset of rows.

    Parameters
    ----------
    matrix : (m, n) ndarray
        The retained rows of the operator.
    row_index_map : (m,) int ndarray, optional
        Indices of the retained rows within the unmasked operator.
    full_rows : int, optional
        Row count of the unmasked operator; defaults to ``m``.
    """

    matrix: np.ndarray
    row_index_map: np.ndarray | None = None
    full_rows: int | None = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.matrix, dtype=float)
        if A.ndim != 2:
            raise ValueError("operator matrix must be 2-D")
        if not np.all(np.isfinite(A)):
            raise ValueError("operator matrix has non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        full = A.shape[0] if self.full_rows is None else int(self.full_rows)
        object.__setattr__(self, "full_rows", full)
        if self.row_index_map is not None:
            idx = np.asarray(self.row_index_map, dtype=np.int64)
            if idx.shape != (A.shape[0],):
                raise ValueError("row_index_map length must equal the number of rows")
            if len(np.unique(idx)) != len(idx):
                raise ValueError("row_index_map entries must be unique")
            if idx.size and (idx.min() < 0 or idx.max() >= full):
                raise ValueError("row_index_map entries out of range")
            idx.setflags(write=False)
            object.__setattr__(self, "row_index_map", idx)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, x):
        return apply(self, x)

    def rmatvec(self, r: np.ndarray) -> np.ndarray:
        S = self._sparse("matrix")
        return S.T @ r if S is not None else self.matrix.T @ r

    def _sparse(self, what):
        """CSR copy of ``matrix`` or of ``K^T K`` when it is sparse enough to pay off."""
        key = "sparse_" + what
        if key not in self._cache:
            A = self.matrix if what == "matrix" else self.normal_matrix()
            nnz = np.count_nonzero(A)
            self._cache[key] = sp.csr_array(A) if nnz <= SPARSE_DENSITY * A.size else None
        return self._cache[key]

    def normal_product(self, X) -> np.ndarray:
        """``K^T K X`` for a vector or a matrix of columns."""
        S = self._sparse("normal")
        return S @ X if S is not None else self.normal_matrix() @ X

    # Lazily computed quantities shared by every solve on this operator.
    def normal_matrix(self) -> np.ndarray:
        """Return ``K^T K`` (cached)."""
        if "normal" not in self._cache:
            N = self.matrix.T @ self.matrix
            N = 0.5 * (N + N.T)
            N.setflags(write=False)
            self._cache["normal"] = N
        return self._cache["normal"]

    def norm_squared(self) -> float:
        """Power-iteration estimate of ``||K||_2^2`` (cached)."""
        if "norm2" not in self._cache:
            self._cache["norm2"] = power_iteration(self.normal_matrix())
        return self._cache["norm2"]


def power_iteration(A: np.ndarray, iters: int = 500, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    n = A.shape[0]
    # deterministic start vector with no special symmetry
    v = np.cos(np.arange(1, n + 1) * 0.7071) + 1.1
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= tol * nw:
            lam = nw
            break
        lam = nw
    return float(lam)


def _cosine_bump(s, t):
    d = np.asarray(s) - np.asarray(t)
    return np.where(np.abs(d) <= 3.0, 1.0 + np.cos(np.pi * d / 3.0), 0.0)


def _bump_pair(s, t):
    d = np.asarray(s) - np.asarray(t)
    return 0.25 * (1.0 / 16.0 + d**2) ** -1.5


_KERNELS = {"cosine_bump": _cosine_bump, "bump_pair": _bump_pair}


def kernel_function(kind: str):
    """Return the vectorized kernel ``k(s, t)`` named by ``kind``."""
    try:
        return _KERNELS[kind]
    except KeyError:
        raise ValueError(f"unknown kernel {kind!r}; expected one of {sorted(_KERNELS)}") from None


def build_convolution_kernel(kind: str, grid: GridSpec) -> LinearOperator:
    """Midpoint-rule matrix ``h * k(s_i, t_j)`` on a shared collocation grid.

    ``cosine_bump`` is ``1 + cos(pi (s - t) / 3)`` for ``|s - t| <= 3`` and
    zero otherwise; ``bump_pair`` is ``((s - t)^2 + 1/16)^(-3/2) / 4``.
    """
    if not isinstance(grid, GridSpec):
        raise TypeError("grid must be a GridSpec")
    k = kernel_function(kind)
    t = grid.nodes
    return LinearOperator(grid.h * k(t[:, None], t[None, :]))


def gaussian_stencil(width: int, sigma: float) -> np.ndarray:
    """Normalized ``width x width`` Gaussian stencil."""
    if int(width) != width or width < 1 or width % 2 == 0:
        raise ValueError(f"blur width must be an odd positive integer, got {width}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = width // 2
    i = np.arange(-r, r + 1)
    w = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2.0 * sigma**2))
    return w / w.sum()


def build_gaussian_blur(
    width: int,
    sigma: float,
    image: ImageGrid,
    keep_fraction: float = 1.0,
    seed: int = 0,
) -> LinearOperator:
    """Gaussian blur with zero boundary conditions and random row masking.

    The retained pixels are ``round(keep_fraction * N)`` indices drawn
    uniformly without replacement by ``numpy.random.default_rng(seed)`` and
    stored sorted in ``row_index_map``.
    """
    w = gaussian_stencil(width, sigma)
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    H, W = image.shape
    N = H * W
    r = width // 2
    B = np.zeros((N, N))
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    out = (rows * W + cols).ravel()
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            rr, cc = rows + di, cols + dj
            ok = ((rr >= 0) & (rr < H) & (cc >= 0) & (cc < W)).ravel()
            src = (rr * W + cc).ravel()
            B[out[ok], src[ok]] += w[di + r, dj + r]
    n_keep = int(round(keep_fraction * N))
    if n_keep < 1:
        raise ValueError("keep_fraction retains no rows")
    if n_keep == N:
        kept = np.arange(N)
    else:
        rng = np.random.default_rng(seed)
        kept = np.sort(rng.choice(N, size=n_keep, replace=False))
    return LinearOperator(B[kept], row_index_map=kept, full_rows=N)


def apply(op: LinearOperator, x) -> np.ndarray:
    """Matrix-vector product with the retained rows of ``op``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (op.shape[1],):
        raise ValueError(f"dimension mismatch: operator has {op.shape[1]} columns, x has shape {x.shape}")
    S = op._sparse("matrix")
    return S @ x if S is not None else op.matrix @ x


def save_matrix(path, A) -> None:
    """Write a matrix (or vector, as one column) in row-major text format.

    The first line holds ``rows cols``; each following line one row, with
    every value printed to 17 significant digits so reads round-trip exactly.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    path = Path(path)
    try:
        with path.open("w") as fh:
            fh.write(f"{A.shape[0]} {A.shape[1]}\n")
            for row in A:
                fh.write(" ".join(f"{v:.17g}" for v in row))
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write matrix file {path}: {exc}") from exc


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed header {header!r}")
        m, n = int(header[0]), int(header[1])
        data = np.loadtxt(fh, ndmin=2) if m * n else np.zeros((m, n))
    if data.shape != (m, n):
        raise ValueError(f"{path}: header says {m}x{n}, found {data.shape}")
    return data


def save_operator(op: LinearOperator, path) -> None:
    save_matrix(path, op.matrix)


def load_operator(path) -> LinearOperator:
    return LinearOperator(load_matrix(path))
