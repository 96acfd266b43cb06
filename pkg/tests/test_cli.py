import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from quasimfg.cli import list_experiments, main
from quasimfg.config import ConfigError, parse_config
from quasimfg.output import fmt, line_plot, read_csv, write_csv

REQUIRED = {"ergodic_equilibrium", "small_discount_limit", "qss_evolution", "theorem41_decay", "chaos_scaling",
            "ergodic_cost_mc", "holder_half", "continuous_dependence"}


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    names = {line.split()[0] for line in out.splitlines()}
    assert REQUIRED <= names and len(names) >= 8
    assert all(len(line.split(maxsplit=1)) == 2 for line in out.splitlines())
    assert list_experiments() == list_experiments()


def test_trivial_equilibrium_run(tmp_path):
    cfg = write(tmp_path, 'experiment = "ergodic_equilibrium"\nstrength = 0.0\nwell_depth = 0.0\nn = 64\n')
    assert main(["--quiet", "run", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
    out = tmp_path / "out" / "ergodic_equilibrium"
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["lambda_bar"]) <= 1e-10 and summary["passed"]
    header, data = read_csv(out / "equilibrium.csv")
    assert header == ["x", "u_bar", "m_bar", "gibbs_u_bar"] and data.shape == (64, 4)
    ET.parse(out / "equilibrium.svg")


def test_unknown_experiment_exits_1(tmp_path, capsys):
    cfg = write(tmp_path, '# comment\nexperiment = "nonsense"\n')
    assert main(["run", str(cfg)]) == 1
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize("text,line", [
    ('experiment = "qss_evolution"\nn = "big"\n', 2),
    ('experiment = "qss_evolution"\n\nwat = 1\n', 3),
    ('experiment = "qss_evolution"\ndim = 3\n', 2),
    ('experiment = "qss_evolution"\nsigma = -1.0\n', 2),
    ('experiment = "qss_evolution"\nN_list = [1, 2]\n', 2),
    ('experiment = "qss_evolution"\n[table]\nx = 1\n', 2),
    ('n = = 3\n', 1),
])
def test_invalid_configs_are_line_anchored(tmp_path, capsys, text, line):
    assert main(["run", str(write(tmp_path, text))]) == 1
    assert f"line {line}" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml")]) == 1


def test_failed_check_exits_2(tmp_path):
    # repeated discount rates cannot give strictly decreasing gaps
    cfg = write(tmp_path, 'experiment = "small_discount_limit"\nn = 64\nwell_depth = 0.0\nstrength = 2.0\n'
                          'rho_list = [0.01, 0.01]\n')
    assert main(["--quiet", "run", str(cfg), "--output-dir", str(tmp_path)]) == 2
    assert not json.loads((tmp_path / "small_discount_limit" / "summary.json").read_text())["passed"]


def test_manifest_reruns_to_identical_csv(tmp_path):
    cfg = write(tmp_path, 'experiment = "qss_evolution"\nn = 32\nT = 0.05\ndt = 0.01\nstore_every = 1\n')
    assert main(["--quiet", "run", str(cfg), "--output-dir", str(tmp_path / "a"), "--seed", "7"]) == 0
    manifest = tmp_path / "a" / "qss_evolution" / "manifest.toml"
    text = manifest.read_text()
    assert "seed = 7" in text and "[manifest]" in text and "numpy" in text
    parsed = parse_config(text)
    assert parsed.seed == 7 and parsed.n == 32
    assert main(["--quiet", "run", str(manifest), "--output-dir", str(tmp_path / "b")]) == 0
    for name in ("trajectory.csv", "snapshots.csv"):
        a = (tmp_path / "a" / "qss_evolution" / name).read_bytes()
        b = (tmp_path / "b" / "qss_evolution" / name).read_bytes()
        assert a == b and b"\r" not in a


def test_particle_csv_reproducible_with_seed(tmp_path):
    cfg = write(tmp_path, 'experiment = "leave_one_out"\nn = 32\nloo_N_list = [2, 4]\nloo_steps = 3\n')
    for d in ("a", "b"):
        assert main(["--quiet", "run", str(cfg), "--output-dir", str(tmp_path / d), "--seed", "3"]) in (0, 2)
    a, b = ((tmp_path / d / "leave_one_out" / "leave_one_out.csv").read_bytes() for d in "ab")
    assert a == b


def test_config_defaults_and_overrides():
    cfg = parse_config('experiment = "chaos_scaling"\n', {"seed": 11})
    assert cfg.sigma == 0.1 and cfg.seed == 11 and cfg.N_list == [16, 64, 256, 1024]
    assert parse_config("").experiment == "ergodic_equilibrium"
    with pytest.raises(ConfigError):
        parse_config('experiment = "qss_evolution"\nn = 100\n')
    with pytest.raises(AttributeError):
        parse_config("").nonexistent


def test_csv_format(tmp_path):
    p = write_csv(tmp_path / "t.csv", ["a", "b"], [(0.1, 3), (1 / 3, np.int64(2))])
    text = p.read_text()
    assert text == "a,b\n0.10000000000000001,3\n0.33333333333333331,2\n"
    assert float(fmt(np.pi)) == np.pi
    with pytest.raises(ValueError):
        write_csv(tmp_path / "u.csv", ["a"], [(1, 2)])


def test_svg_plots(tmp_path):
    t = np.linspace(0, 5, 30)
    p = line_plot(tmp_path / "p.svg", {"decay": (t, np.exp(-t)), "zero": (t, 0 * t)}, "t<itle>", "t", "y", logy=True)
    root = ET.parse(p).getroot()
    assert root.tag.endswith("svg")
    assert len([e for e in root.iter() if e.tag.endswith("polyline")]) == 1
    line_plot(tmp_path / "empty.svg", {}, logx=True)
    ET.parse(tmp_path / "empty.svg")
