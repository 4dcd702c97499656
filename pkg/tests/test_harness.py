import numpy as np
import pytest

from multireg.harness import (
    EXAMPLES,
    ExperimentConfig,
    ExperimentReport,
    add_noise,
    emit_outputs,
    exact_solution,
    make_example,
    relative_error,
    run_experiment,
)
from multireg.problem import Problem
from multireg.value_function import log_grid


class TestNoise:
    def test_zero_noise(self):
        y = np.array([1.0, -3.0, 2.0])
        yn, d2 = add_noise(y, 0.0, 7)
        np.testing.assert_array_equal(yn, y)
        assert d2 == 0.0

    def test_expected_delta2(self):
        # E[delta^2] = m (max|y| eps)^2
        y = np.linspace(-2.0, 1.0, 50)
        eps = 1e-2
        mean = np.mean([add_noise(y, eps, s)[1] for s in range(1000)])
        expected = y.size * (2.0 * eps) ** 2
        assert abs(mean - expected) <= 0.1 * expected

    def test_deterministic(self):
        y = np.arange(10.0)
        a, da = add_noise(y, 1e-3, 42)
        b, db = add_noise(y, 1e-3, 42)
        np.testing.assert_array_equal(a, b)
        assert da == db

    def test_delta2_matches_data(self):
        y = np.sin(np.arange(20.0))
        yn, d2 = add_noise(y, 5e-2, 1)
        assert d2 == np.sum((yn - y) ** 2)

    def test_negative_level(self):
        with pytest.raises(ValueError):
            add_noise(np.ones(3), -1.0, 0)


class TestRelativeError:
    x = np.array([1.0, -2.0, 0.5])

    def test_exact(self):
        assert relative_error(self.x, self.x) == 0.0

    def test_zero(self):
        assert relative_error(np.zeros(3), self.x) == 1.0

    def test_double(self):
        assert relative_error(2 * self.x, self.x) == pytest.approx(1.0, rel=1e-15)

    def test_zero_reference(self):
        with pytest.raises(ValueError):
            relative_error(self.x, np.zeros(3))


class TestExamples:
    def test_example1_defaults(self):
        grid, x = exact_solution(1)
        assert (grid.a, grid.b, grid.n_points) == (-6.0, 6.0, 100)
        t = grid.nodes
        np.testing.assert_array_equal(x[(t > -3) & (t < -1)], 1.0)
        assert x[np.argmin(np.abs(t - 2.0))] == pytest.approx(1.0, abs=1e-2)
        assert np.all(x[t > 4] == 0.0) and np.all(x[t < -3] == 0.0)

    def test_example2_defaults(self):
        grid, x = exact_solution(2)
        assert (grid.a, grid.b, grid.n_points) == (0.0, 1.0, 100)
        assert np.all((x == 0.0) | (x >= 0.01))
        assert 0.0 < np.count_nonzero(x) < 30

    def test_example3_defaults(self):
        grid, x = exact_solution(3)
        assert x.size == 2500
        assert set(np.unique(x)) == {0.0, 1.0}
        p = make_example(3)(1e-2, 0)
        assert p.operator.shape == (1250, 2500)

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_example(4)
        with pytest.raises(ValueError):
            run_experiment(0)

    @pytest.mark.parametrize("example", sorted(EXAMPLES))
    def test_problem_fields(self, example):
        p = make_example(example)(5e-3, 3)
        np.testing.assert_allclose(p.y_true, p.operator @ p.x_true, rtol=0, atol=0)
        r = p.operator @ p.x_true - p.y_noisy
        assert p.delta2 == r @ r
        assert p.noise_level == 5e-3 and p.seed == 3

    def test_noise_shared_across_levels(self):
        f = make_example(2)
        a, b = f(1e-2, 0), f(1e-3, 0)
        np.testing.assert_allclose(a.y_noisy - a.y_true, 10 * (b.y_noisy - b.y_true), rtol=0,
                                   atol=1e-14 * np.abs(a.y_true).max())

    def test_problem_rejects_inconsistent_delta2(self):
        p = make_example(2)(1e-2, 0)
        with pytest.raises(ValueError):
            Problem(operator=p.operator, penalties=p.penalties, y_noisy=p.y_noisy, x_true=p.x_true,
                    delta2=p.delta2 * (1 + 1e-9))


def small_config(**kw):
    cfg = ExperimentConfig(example=2, eps=(5e-3,), seeds=(0,), coarse_per_decade=1, fine_per_decade=3,
                           coarse_per_decade_2d=1, fine_per_decade_2d=2)
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(2, config=small_config(landscape_gamma=5.0, landscape_per_decade=1))


class TestRun:
    def test_cells(self, small_report):
        (c,) = small_report.cells
        assert not c.failure
        assert c.e_b == pytest.approx(relative_error(c.x_b, c.problem.x_true))
        assert c.e_o == pytest.approx(relative_error(c.x_o, c.problem.x_true))
        for name in ("l1", "l2"):
            eta, err, x = c.singles[name]
            assert err == pytest.approx(relative_error(x, c.problem.x_true))
        # the 2-D search includes the balancing point
        assert c.e_o <= c.e_b

    def test_table_layout(self, small_report):
        rows = small_report.table_rows()
        assert rows[0][:2] == ["eps", "n_seeds"]
        assert "e_l1" in rows[0] and "e_l2" in rows[0]
        assert len(rows) == 2

    def test_unknown_setting(self):
        with pytest.raises(TypeError):
            run_experiment(2, eps_list=[1e-2], seeds=[0], colour="red")

    def test_unconverged_rule_is_not_a_failure(self):
        r = run_experiment(2, config=small_config(oracle_2d=False, singles=False, max_iter=1))
        (c,) = r.cells
        assert c.trace is not None and not c.trace.converged
        assert r.table_rows()[1][-1] == 0

    def test_oracle_only(self):
        r = run_experiment(2, config=small_config(rule="oracle", singles=False))
        (c,) = r.cells
        assert c.trace is None and np.isfinite(c.e_o)


class TestOutputs:
    def test_empty_report(self, tmp_path):
        rep = ExperimentReport(config=ExperimentConfig(example=1, eps=()))
        emit_outputs(rep, tmp_path)
        lines = (tmp_path / "table_example1.csv").read_text().splitlines()
        assert len(lines) == 1 and lines[0].startswith("eps,n_seeds")

    def test_files_and_recomputable_errors(self, tmp_path, small_report):
        from multireg.operators import load_matrix

        emit_outputs(small_report, tmp_path)
        c = small_report.cells[0]
        x = load_matrix(tmp_path / "vectors" / "x_b_example2_eps0.005_seed0.txt").ravel()
        assert relative_error(x, c.problem.x_true) == c.e_b
        meta = (tmp_path / "metadata_example2.txt").read_text()
        assert "solver_tolerances=" in meta and "seeds" in meta
        trace = (tmp_path / "traces" / "trace_example2_eps0.005_seed0.csv").read_text().splitlines()
        assert trace[0].startswith("iteration,eta1,eta2")

    def test_landscape_rows(self, tmp_path, small_report):
        emit_outputs(small_report, tmp_path)
        lines = (tmp_path / "landscape_example2_eps0.005_seed0.csv").read_text().splitlines()
        axis = log_grid(1e-10, 1e1, 1)
        assert len(lines) == 1 + axis.size ** 2

    def test_byte_identical_rerun(self, tmp_path, small_report):
        emit_outputs(small_report, tmp_path / "a")
        emit_outputs(run_experiment(2, config=small_config(landscape_gamma=5.0, landscape_per_decade=1)),
                     tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f

    def test_unwritable(self, tmp_path, small_report):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            emit_outputs(small_report, blocker / "sub")
