"""Synthetic experiments: problem factories, noise, runs and file output.

Three test problems are defined:

1. ``cosine_bump`` deconvolution on ``[-6, 6]`` with an H^1 + TV pair of
   penalties; the exact solution has a plateau of height 1 on ``[-3, -1]``
   and a smooth hump ``0.5 (1 + cos(pi (t - 2) / 2))`` on ``[0, 4]``.
2. ``bump_pair`` kernel on ``[0, 1]`` with an l1 + l2 (elastic net) pair; the
   exact solution is ``exp(-((t - .3)/.03)^2) + .8 exp(-((t - .7)/.03)^2)``
   with values below 0.01 set to zero.
3. Masked Gaussian deblurring of a 50 x 50 binary image (two rectangles and
   a cross) with the elastic net pair.

Noise is ``y_noisy = y_true + max|y_true| * eps * xi`` with ``xi`` standard
normal drawn from ``numpy.random.default_rng(seed)``. ``xi`` depends only on
the seed, so runs at several noise levels share the same realization up to
scale.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import inner_solver
from .exceptions import MultiregError
from .operators import GridSpec, ImageGrid, build_convolution_kernel, build_gaussian_blur, save_matrix
from .penalties import h1_seminorm, l1_norm, l2_squared, total_variation
from .problem import Problem, relative_error
from .selection_rules import (
    DEFAULT_GAMMA_STRATEGY,
    RuleTrace,
    gamma_two_step,
    refined_oracle,
    run_rule,
)
from .value_function import landscape, log_grid, phi_psi_gap, write_landscape_csv

log = logging.getLogger(__name__)

__all__ = [
    "ExampleSpec",
    "EXAMPLES",
    "make_example",
    "exact_solution",
    "add_noise",
    "relative_error",
    "ExperimentConfig",
    "ExperimentReport",
    "run_experiment",
    "emit_outputs",
    "TABLE_EPS",
    "make_quadratic_toy",
]

TABLE_EPS = (5e-2, 5e-3, 5e-4, 5e-5, 5e-6)
# pinned weight of the absent penalty in single-penalty baselines
PIN = 1e-14


@dataclass(frozen=True)
class ExampleSpec:
    id: int
    label: str
    single_names: tuple
    default_n: int
    default_eps: tuple
    mask_seed: int = 0
    # lower end of the oracle search box and coarse 2-D density
    grid_lo: float = 1e-10
    coarse_2d: float = 2.0


EXAMPLES = {
    1: ExampleSpec(1, "H1-TV deconvolution", ("h1", "tv"), 100, TABLE_EPS),
    2: ExampleSpec(2, "elastic net, sparse bumps", ("l1", "l2"), 100, TABLE_EPS),
    # below 1e-5 the underdetermined elastic net solves dominate the run time
    # and the reconstructions are far from optimal
    3: ExampleSpec(3, "elastic net, masked deblurring", ("l1", "l2"), 50, (1e-2,), grid_lo=1e-5,
                     coarse_2d=1.0),
}


def _example1_profile(t):
    x = np.where((t >= -3) & (t <= -1), 1.0, 0.0)
    hump = 0.5 * (1.0 + np.cos(np.pi * (t - 2.0) / 2.0))
    return x + np.where((t >= 0) & (t <= 4), hump, 0.0)


def _example2_profile(t):
    x = np.exp(-(((t - 0.3) / 0.03) ** 2)) + 0.8 * np.exp(-(((t - 0.7) / 0.03) ** 2))
    return np.where(x < 0.01, 0.0, x)


def _example3_image(side):
    img = np.zeros((side, side))
    s = side / 50.0

    def box(r0, r1, c0, c1):
        img[int(r0 * s):int(r1 * s), int(c0 * s):int(c1 * s)] = 1.0

    box(6, 18, 5, 21)     # rectangle
    box(30, 44, 28, 44)   # rectangle
    box(24, 42, 10, 14)   # cross, vertical bar
    box(31, 35, 3, 21)    # cross, horizontal bar
    return img


def exact_solution(example: int, n: int | None = None):
    """Return ``(grid, x_true)`` of an example."""
    spec = EXAMPLES.get(example)
    if spec is None:
        raise ValueError(f"unknown example {example!r}; expected one of {sorted(EXAMPLES)}")
    n = spec.default_n if n is None else int(n)
    if example == 1:
        grid = GridSpec(-6.0, 6.0, n)
        return grid, _example1_profile(grid.nodes)
    if example == 2:
        grid = GridSpec(0.0, 1.0, n)
        return grid, _example2_profile(grid.nodes)
    grid = ImageGrid(n, n)
    return grid, _example3_image(n).ravel()


def add_noise(y_true, epsilon: float, seed: int):
    """``(y_noisy, delta2)`` with ``delta2 = ||y_noisy - y_true||^2``."""
    y_true = np.asarray(y_true, dtype=float)
    if not epsilon >= 0:
        raise ValueError(f"noise level must be nonnegative, got {epsilon}")
    xi = np.random.default_rng(seed).standard_normal(y_true.shape)
    y = y_true + np.abs(y_true).max() * epsilon * xi
    d = y - y_true
    return y, float(d @ d)


def make_example(example: int, n: int | None = None, *, blur_width: int = 5, blur_sigma: float = 1.0,
                 keep_fraction: float = 0.5, mask_seed: int = 0):
    """Return a factory ``(epsilon, seed) -> Problem`` for an example.

    The operator and exact solution are built once and shared by every
    problem the factory produces.
    """
    grid, x_true = exact_solution(example, n)
    if example == 1:
        K = build_convolution_kernel("cosine_bump", grid)
        penalties = (h1_seminorm(grid), total_variation(grid.n_points))
    elif example == 2:
        K = build_convolution_kernel("bump_pair", grid)
        penalties = (l1_norm(grid.n_points), l2_squared(grid.n_points))
    else:
        K = build_gaussian_blur(blur_width, blur_sigma, grid, keep_fraction, seed=mask_seed)
        penalties = (l1_norm(grid.n_points), l2_squared(grid.n_points))
    y_true = K @ x_true

    def factory(epsilon: float, seed: int = 0) -> Problem:
        y, d2 = add_noise(y_true, epsilon, seed)
        return Problem(operator=K, penalties=penalties, y_noisy=y, x_true=x_true, y_true=y_true,
                       delta2=d2, noise_level=epsilon, seed=seed, grid=grid, name=f"example{example}",
                       cache_size=4096 if example != 3 else 256)

    factory.example = example
    factory.grid = grid
    factory.operator = K
    factory.x_true = x_true
    factory.penalties = penalties
    return factory


def make_quadratic_toy(m: int = 30, n: int = 20, epsilon: float = 1e-2, seed: int = 0) -> Problem:
    """Small all-quadratic problem (H^1 + l2) with a Gaussian forward matrix.

    ``K`` has full column rank almost surely, so ``min phi`` is the least
    squares residual and every value function quantity has a closed form.
    """
    grid = GridSpec(0.0, 1.0, n)
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((m, n)) / np.sqrt(m)
    x_true = np.sin(2.0 * np.pi * grid.nodes)
    y_true = K @ x_true
    y, d2 = add_noise(y_true, epsilon, seed + 1)
    return Problem(operator=K, penalties=(h1_seminorm(grid), l2_squared(n)), y_noisy=y, x_true=x_true,
                   y_true=y_true, delta2=d2, noise_level=epsilon, seed=seed, grid=grid, name="quadratic_toy")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Settings of one experiment run (all recorded in the metadata).

    Oracle grids are log-spaced on ``[grid_lo, grid_hi]`` in every component
    (``None`` for ``grid_lo`` or ``coarse_per_decade_2d`` takes the example's
    default):
    a coarse pass with ``coarse_per_decade`` points per decade, then a fine
    pass with ``fine_per_decade`` over ``refine_radius`` decades around the
    coarse optimum. The 2-D search uses the ``*_2d`` densities; ``oracle_2d``
    switches it off.
    """

    example: int = 1
    eps: tuple = TABLE_EPS
    seeds: tuple = (0, 1, 2, 3, 4)
    rule: str = "balance2"
    gamma: float = 5.0
    gamma_strategy: str = DEFAULT_GAMMA_STRATEGY
    two_step: bool = True
    eta0: float = 1e-3
    tol: float = 1e-3
    max_iter: int = 100
    c_m: float = 1.0
    ratio: float = 1.0
    beta: float = 0.0
    beta0: float = 0.0
    n: int | None = None
    grid_lo: float | None = None
    grid_hi: float = 1e1
    coarse_per_decade: float = 5.0
    fine_per_decade: float = 25.0
    coarse_per_decade_2d: float | None = None
    fine_per_decade_2d: float = 10.0
    refine_radius: float = 1.0
    refine_radius_2d: float = 0.5
    oracle_2d: bool = True
    singles: bool = True
    landscape_gamma: float | None = None
    landscape_per_decade: float = 2.0

    def rule_kwargs(self):
        if self.rule == "discrepancy":
            return {"c_m": self.c_m, "ratio": self.ratio}
        kw = {"eta0": self.eta0, "tol": self.tol, "max_iter": self.max_iter}
        if self.rule == "atik":
            kw.update(beta=self.beta, beta0=self.beta0)
        return kw

    def as_dict(self):
        d = dict(self.__dict__)
        d["eps"] = list(self.eps)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class Cell:
    """Result of one ``(eps, seed)`` pair."""

    eps: float
    seed: int
    eta_b: np.ndarray | None = None
    e_b: float = float("nan")
    x_b: np.ndarray | None = None
    trace: RuleTrace | None = None
    gamma: float = float("nan")
    eta_o: np.ndarray | None = None
    e_o: float = float("nan")
    x_o: np.ndarray | None = None
    singles: dict = field(default_factory=dict)  # name -> (eta, error, x)
    failure: str = ""
    problem: Problem | None = field(default=None, repr=False)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list = field(default_factory=list)
    landscapes: dict = field(default_factory=dict)

    @property
    def single_names(self):
        return EXAMPLES[self.config.example].single_names

    def cells_at(self, eps):
        return [c for c in self.cells if c.eps == eps]

    def median(self, key, eps):
        vals = []
        for c in self.cells_at(eps):
            v = c.singles[key][1] if key in self.single_names and key in c.singles else getattr(c, key, np.nan)
            if np.isfinite(v):
                vals.append(v)
        return statistics.median(vals) if vals else float("nan")

    def table_rows(self):
        """Per-noise-level medians, one row per ``eps``."""
        names = self.single_names
        header = ["eps", "n_seeds", "eta_b1", "eta_b2", "eta_o1", "eta_o2",
                  *[f"eta_{s}" for s in names], "e_b", "e_o", *[f"e_{s}" for s in names], "failures"]
        rows = [header]
        for eps in self.config.eps:
            cells = self.cells_at(eps)

            def med(vals):
                vals = [v for v in vals if v is not None and np.isfinite(v)]
                return statistics.median(vals) if vals else float("nan")

            eb = [c.eta_b if c.eta_b is not None else (np.nan, np.nan) for c in cells]
            eo = [c.eta_o if c.eta_o is not None else (np.nan, np.nan) for c in cells]
            row = [eps, len(cells), med([e[0] for e in eb]), med([e[1] for e in eb]),
                   med([e[0] for e in eo]), med([e[1] for e in eo])]
            for s in names:
                row.append(med([c.singles[s][0] for c in cells if s in c.singles]))
            row += [self.median("e_b", eps), self.median("e_o", eps)]
            row += [self.median(s, eps) for s in names]
            row.append(sum(1 for c in cells if c.failure))
            rows.append(row)
        return rows

    def cell_rows(self):
        names = self.single_names
        header = ["eps", "seed", "gamma", "iterations", "converged", "residual", "eta_b1", "eta_b2", "e_b",
                  "eta_o1", "eta_o2", "e_o"]
        for s in names:
            header += [f"eta_{s}", f"e_{s}"]
        header.append("failure")
        rows = [header]
        for c in self.cells:
            t = c.trace
            eb = c.eta_b if c.eta_b is not None else (np.nan, np.nan)
            eo = c.eta_o if c.eta_o is not None else (np.nan, np.nan)
            row = [c.eps, c.seed, c.gamma, t.n_iterations if t else -1, int(bool(t and t.converged)),
                   t.residual if t else np.nan, eb[0], eb[1], c.e_b, eo[0], eo[1], c.e_o]
            for s in names:
                eta, err = (c.singles[s][0], c.singles[s][1]) if s in c.singles else (np.nan, np.nan)
                row += [eta, err]
            row.append(c.failure)
            rows.append(row)
        return rows


def run_cell(factory, cfg: ExperimentConfig, eps: float, seed: int) -> Cell:
    problem = factory(eps, seed)
    cell = Cell(eps=eps, seed=seed, problem=problem)
    try:
        # rule "oracle" computes only the reference columns
        if cfg.rule != "oracle":
            if cfg.rule != "discrepancy" and cfg.two_step:
                gamma, trace = gamma_two_step(problem, cfg.gamma, cfg.rule, cfg.gamma_strategy,
                                              **cfg.rule_kwargs())
            else:
                gamma, trace = cfg.gamma, run_rule(problem, cfg.rule, gamma=cfg.gamma, **cfg.rule_kwargs())
            cell.gamma, cell.trace = gamma, trace
            cell.eta_b = trace.final.copy()
            cell.x_b = trace.record.x
            cell.e_b = relative_error(cell.x_b, problem.x_true)
    except MultiregError as exc:
        cell.failure = f"rule: {type(exc).__name__}: {exc}"
        log.warning("eps=%g seed=%d: %s", eps, seed, cell.failure)
    inject = None if cell.eta_b is None else [cell.eta_b]
    if cfg.oracle_2d:
        try:
            o = refined_oracle(problem, cfg.grid_lo, cfg.grid_hi, cfg.coarse_per_decade_2d, cfg.fine_per_decade_2d,
                               inject=inject, radius=cfg.refine_radius_2d)
            cell.eta_o, cell.e_o, cell.x_o = o.eta, o.error, o.record.x
        except MultiregError as exc:
            cell.failure += f" oracle: {type(exc).__name__}: {exc}"
    if cfg.singles:
        for k, name in enumerate(EXAMPLES[cfg.example].single_names):
            try:
                o = refined_oracle(problem, cfg.grid_lo, cfg.grid_hi, cfg.coarse_per_decade, cfg.fine_per_decade,
                                   fixed={1 - k: PIN}, radius=cfg.refine_radius)
                cell.singles[name] = (float(o.eta[k]), o.error, o.record.x)
            except MultiregError as exc:
                cell.failure += f" {name}: {type(exc).__name__}: {exc}"
    return cell


def run_experiment(example: int, eps_list=None, rules=None, seeds=None, config: ExperimentConfig | None = None,
                   **overrides) -> ExperimentReport:
    """Run a rule, the 2-D oracle and the single-penalty oracles per cell.

    Parameters
    ----------
    example : {1, 2, 3}
    eps_list, seeds : sequences, optional
        Default to the example's noise levels and seeds ``0..4``.
    rules : str, optional
        Rule name (see :data:`multireg.selection_rules.RULES`).
    config : ExperimentConfig, optional
        Base settings; ``overrides`` replace individual fields.

    Failures inside a cell are recorded in ``cell.failure`` and the report
    is still produced.
    """
    cfg = ExperimentConfig(example=example) if config is None else config
    if example not in EXAMPLES:
        raise ValueError(f"unknown example {example!r}; expected one of {sorted(EXAMPLES)}")
    cfg.example = example
    if eps_list is not None:
        cfg.eps = tuple(float(e) for e in eps_list)
    elif config is None:
        cfg.eps = EXAMPLES[example].default_eps
    if seeds is not None:
        cfg.seeds = tuple(int(s) for s in seeds)
    if rules is not None:
        cfg.rule = rules
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise TypeError(f"unknown experiment setting {k!r}")
        setattr(cfg, k, v)
    if cfg.grid_lo is None:
        cfg.grid_lo = EXAMPLES[example].grid_lo
    if cfg.coarse_per_decade_2d is None:
        cfg.coarse_per_decade_2d = EXAMPLES[example].coarse_2d
    factory = make_example(example, cfg.n)
    report = ExperimentReport(config=cfg)
    for eps in cfg.eps:
        for seed in cfg.seeds:
            cell = run_cell(factory, cfg, eps, seed)
            report.cells.append(cell)
            log.info("example %d eps=%g seed=%d e_b=%.3e e_o=%.3e", example, eps, seed, cell.e_b, cell.e_o)
    if cfg.landscape_gamma is not None and report.cells:
        c = report.cells[0]
        axis = log_grid(cfg.grid_lo, cfg.grid_hi, cfg.landscape_per_decade)
        report.landscapes[(c.eps, c.seed)] = landscape(c.problem, axis, axis, cfg.landscape_gamma)
    return report


def psi_phi_violations(problems, gamma: float, rtol: float = 1e-12):
    """Audit entries of ``problems`` where ``Psi_gamma > Phi_gamma``."""
    bad = []
    for p in problems:
        if p.n_penalties != 2:
            continue
        for a in p.audit:
            if phi_psi_gap(a.phi, a.psi, a.eta, gamma) < -rtol:
                bad.append((p.name, a))
    return bad


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _write_csv(path: Path, rows):
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_outputs(report: ExperimentReport, out_dir) -> list:
    """Write tables, traces, solution vectors, landscapes and metadata.

    Files (``<k>`` is the example id):

    * ``table_example<k>.csv``: medians per noise level;
    * ``cells_example<k>.csv``: one row per ``(eps, seed)``;
    * ``traces/trace_eps<eps>_seed<s>.csv``;
    * ``vectors/x_<kind>_eps<eps>_seed<s>.txt`` in the text matrix format;
    * ``landscape_eps<eps>_seed<s>.csv`` when a landscape was computed;
    * ``metadata_example<k>.txt``: one ``key=value`` per line (JSON values).

    Returns the written paths. All numbers use 17 significant digits and no
    timestamps are written, so identical runs give identical files.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "traces").mkdir(exist_ok=True)
        (out / "vectors").mkdir(exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    k = report.config.example
    written = []
    p = out / f"table_example{k}.csv"
    _write_csv(p, report.table_rows())
    written.append(p)
    p = out / f"cells_example{k}.csv"
    _write_csv(p, report.cell_rows())
    written.append(p)
    for c in report.cells:
        tag = f"eps{c.eps:g}_seed{c.seed}"
        if c.trace is not None:
            p = out / "traces" / f"trace_example{k}_{tag}.csv"
            c.trace.write_csv(p)
            written.append(p)
        vecs = {"b": c.x_b, "o": c.x_o}
        vecs.update({s: v[2] for s, v in c.singles.items()})
        for kind, x in vecs.items():
            if x is not None:
                p = out / "vectors" / f"x_{kind}_example{k}_{tag}.txt"
                save_matrix(p, x)
                written.append(p)
    for (eps, seed), rows in report.landscapes.items():
        p = out / f"landscape_example{k}_eps{eps:g}_seed{seed}.csv"
        write_landscape_csv(p, rows)
        written.append(p)
    meta = {
        "example": k,
        "label": EXAMPLES[k].label,
        "config": report.config.as_dict(),
        "noise_model": "y = y_true + max|y_true| * eps * xi, xi ~ N(0, I) from numpy default_rng(seed)",
        "gamma_per_cell": [[c.eps, c.seed, c.gamma] for c in report.cells],
        "pinned_weight": PIN,
        "solver_tolerances": {"quadratic": inner_solver.TOL_QUADRATIC, "iterative": inner_solver.TOL_ITERATIVE,
                              "admm": inner_solver.TOL_ADMM, "max_iter": inner_solver.MAX_ITER},
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    p = out / f"metadata_example{k}.txt"
    try:
        with p.open("w") as fh:
            for key, val in meta.items():
                fh.write(f"{key}={json.dumps(val, sort_keys=True, default=_fmt)}\n")
    except OSError as exc:
        raise OSError(f"cannot write {p}: {exc}") from exc
    written.append(p)
    return written
