import numpy as np
import pytest

from multireg.cli import build_config, build_parser, load_config, main

FAST = ["--coarse", "1", "--fine", "2", "--coarse-2d", "1", "--fine-2d", "1"]


def parse(*argv):
    return build_parser().parse_args(list(argv))


class TestConfig:
    def test_flags(self):
        cfg, out = build_config(parse("run", "--example", "2", "--eps", "1e-2,1e-3", "--rule", "atik",
                                      "--gamma", "3", "--cm", "1.1", "--seeds", "0,2", "--out", "d"))
        assert cfg.example == 2 and cfg.eps == (1e-2, 1e-3) and cfg.seeds == (0, 2)
        assert cfg.rule == "atik" and cfg.gamma == 3.0 and cfg.c_m == 1.1
        assert str(out) == "d"

    def test_defaults(self):
        cfg, out = build_config(parse("run"))
        assert cfg.example == 1 and len(cfg.eps) == 5 and cfg.seeds == (0, 1, 2, 3, 4)
        assert str(out) == "results"

    def test_file_then_flags(self, tmp_path):
        f = tmp_path / "c.toml"
        f.write_text('example = 2\neps = [5e-3]\nrule = "balance1"\ngamma = 2.0\nout = "x"\n')
        cfg, out = build_config(parse("run", "--config", str(f), "--gamma", "4"))
        assert cfg.example == 2 and cfg.eps == (5e-3,) and cfg.rule == "balance1"
        assert cfg.gamma == 4.0 and str(out) == "x"

    def test_unknown_key(self, tmp_path):
        f = tmp_path / "c.toml"
        f.write_text("colour = 1\n")
        with pytest.raises(ValueError):
            load_config(f)

    def test_switches(self):
        cfg, _ = build_config(parse("run", "--single-step", "--no-oracle", "--no-singles"))
        assert not cfg.two_step and not cfg.oracle_2d and not cfg.singles

    def test_bad_rule(self):
        with pytest.raises(SystemExit):
            parse("run", "--rule", "lcurve")


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "res"
    code = main(["run", "--example", "2", "--eps", "5e-3", "--seeds", "0", "--out", str(out), *FAST])
    assert code == 0
    assert (out / "table_example2.csv").exists()
    assert (out / "metadata_example2.txt").exists()
    assert "wrote" in capsys.readouterr().out


def test_landscape(tmp_path):
    path = tmp_path / "l.csv"
    assert main(["landscape", "--example", "2", "--eps", "5e-3", "--grid", "1e-4,1e-2,1", "--out", str(path)]) == 0
    assert len(path.read_text().splitlines()) == 1 + 9


def test_errors_are_reported(tmp_path, capsys):
    f = tmp_path / "c.toml"
    f.write_text("colour = 1\n")
    assert main(["run", "--config", str(f)]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = main(["run", "--example", "2", "--eps", "5e-3", "--seeds", "0", "--out", str(blocker / "x"),
                 "--no-oracle", "--no-singles"])
    assert code == 2
    assert str(blocker) in capsys.readouterr().err


def test_grid_argument():
    args = parse("landscape", "--grid", "1e-2,1,2")
    np.testing.assert_allclose(args.grid, np.geomspace(1e-2, 1.0, 5))
    with pytest.raises(SystemExit):
        parse("landscape", "--grid", "1,2")
