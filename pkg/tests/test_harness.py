import json
import os

import numpy as np
import pytest

from chcsim import cli, runner
from chcsim.config import (
    ConfigError,
    build_observable,
    build_state,
    config_hash,
    emit_config,
    parse_config,
    parse_config_text,
)

MINIMAL = """
kind = simulate
M = 32
dt = 1e-4
T = 1
c = 0
lambda = 1
potential = poly
n = 4
b = 1:1.0
b = 2:1.0
N = 2
seed = 7
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_config_accepted():
    cfg = parse_config_text(MINIMAL)
    assert cfg.kind == "simulate"
    assert cfg.sim.M == 32 and cfg.sim.seed == 7
    assert cfg.sim.grid_size == 4 * 33
    assert cfg.band == 2
    assert cfg.sim.cov.b[1] == 1.0 and cfg.sim.cov.b[2] == 1.0


def test_mean_conservation_rejected():
    bad = MINIMAL.replace("b = 1:1.0", "b = 0:0.5")
    with pytest.raises(ConfigError, match="mean-conservation violated"):
        parse_config_text(bad)


def test_zero_inside_band_rejected():
    bad = MINIMAL.replace("b = 2:1.0", "b = 3:1.0")
    with pytest.raises(ConfigError, match="b_k > 0 for k = 1..2"):
        parse_config_text(bad)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown configuration key"):
        parse_config_text(MINIMAL + "wibble = 3\n")


def test_missing_required_rejected():
    with pytest.raises(ConfigError, match="dt"):
        parse_config_text(MINIMAL.replace("dt = 1e-4\n", ""))


def test_kind_specific_validation():
    with pytest.raises(ConfigError, match="y0"):
        parse_config_text(MINIMAL.replace("kind = simulate", "kind = couple"))
    with pytest.raises(ConfigError, match="potential"):
        parse_config_text(MINIMAL.replace("kind = simulate", "kind = lintest") + "replicas = 10\n")
    with pytest.raises(ConfigError, match="x0"):
        parse_config_text(MINIMAL.replace("kind = simulate", "kind = ergodic"))


def test_config_round_trip():
    text = MINIMAL + "y0 = gaussian:0.5\nt = 0.1\nt = 0.2\nobservable = mode:1:2\n"
    cfg = parse_config_text(text.replace("kind = simulate", "kind = pair"))
    again = parse_config_text(emit_config(cfg))
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)


def test_build_state_variants():
    cfg = parse_config_text(MINIMAL).sim
    const = build_state("const", cfg, 0)
    assert const.mean == 0.0 and np.all(const.coeffs[1:] == 0.0)
    gauss = build_state("gaussian:0.5", cfg, 0)
    assert gauss.mean == 0.0 and np.any(gauss.coeffs[1:] != 0.0)
    assert np.array_equal(gauss.coeffs, build_state("gaussian:0.5", cfg, 0).coeffs)
    modes = build_state("modes:1=0.2,3=-0.1", cfg, 0)
    assert modes.coeffs[1] == 0.2 and modes.coeffs[3] == -0.1
    with pytest.raises(ConfigError):
        parse_config_text(MINIMAL + "x0 = modes:0=0.5\n")


def test_build_observable_variants():
    assert build_observable("seminorm:-1").name == "seminorm[-1]"
    assert build_observable("mode:2:4").kind == "mode_moment"
    assert build_observable("tanh:1").sup_bound == 1.0
    with pytest.raises(ConfigError):
        build_observable("volume")


def run_kind(tmp_path, text, kind=None, extra=""):
    if kind is None:
        kind = text.split("kind = ")[1].split()[0]
    cfg_path = write_cfg(tmp_path, text + extra, name=f"{kind}.cfg")
    return cli.main([kind, "--config", cfg_path, "--out", str(tmp_path / "runs")])


def test_cli_simulate_and_plot(tmp_path, capsys):
    text = MINIMAL.replace("T = 1", "T = 0.05") + "save_every = 10\nsave_states = true\n"
    code = run_kind(tmp_path, text, "simulate")
    assert code == 0
    out = capsys.readouterr().out
    assert "PASS mass_conservation" in out
    manifest_path = out.strip().splitlines()[-1]
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    assert manifest["passed"] is True
    assert "snapshots.json" in manifest["outputs"]
    snap = json.load(open(os.path.join(os.path.dirname(manifest_path), "snapshots.json")))
    assert snap["M"] == 32
    assert len(snap["coeffs"][0]) == 33

    assert cli.main(["plot", "--manifest", manifest_path, "--series", "norm_1"]) == 0
    plotted = capsys.readouterr().out.strip()
    header = open(plotted).readline().strip().split(",")
    assert header[0] == "t" and "norm_1" in header
    assert cli.main(["plot", "--manifest", manifest_path, "--series", "nope"]) == 2


def test_cli_kind_mismatch(tmp_path):
    path = write_cfg(tmp_path, MINIMAL)
    assert cli.main(["pair", "--config", path]) == 2


def test_cli_config_error_exit(tmp_path):
    path = write_cfg(tmp_path, MINIMAL.replace("b = 1:1.0", "b = 0:1.0"))
    assert cli.main(["simulate", "--config", path]) == 2


def test_cli_stiff_exit(tmp_path):
    text = (
        MINIMAL.replace("T = 1", "T = 0.1")
        .replace("lambda = 1", "lambda = 60")
        .replace("n = 4", "n = 0")
        + "sup_guard = 1.0\nx0 = modes:1=0.5\n"
    )
    assert run_kind(tmp_path, text, "simulate") == 3


def test_cli_pair_and_couple(tmp_path, capsys):
    base = MINIMAL.replace("T = 1", "T = 0.05") + "save_every = 10\ny0 = gaussian:0.4\n"
    assert run_kind(tmp_path, base.replace("kind = simulate", "kind = pair")) == 0
    capsys.readouterr()
    assert (
        run_kind(
            tmp_path,
            base.replace("kind = simulate", "kind = couple"),
            "couple",
            extra="x0 = modes:1=0.2\n",
        )
        == 0
    )
    out = capsys.readouterr().out
    assert "PASS contraction_pathwise" in out
    assert "PASS fitted_rate" in out


def test_cli_girsanov(tmp_path, capsys):
    text = (
        MINIMAL.replace("kind = simulate", "kind = girsanov").replace("T = 1", "T = 0.05")
        + "y0 = modes:1=0.02\nreplicas = 400\nsave_every = 10\n"
    )
    assert run_kind(tmp_path, text) == 0
    out = capsys.readouterr().out
    assert "PASS martingale_unit_mean" in out
    assert "PASS gap_below_bound" in out


def test_cli_asf(tmp_path, capsys):
    text = (
        MINIMAL.replace("kind = simulate", "kind = asf").replace("T = 1", "T = 0.1")
        + "y0 = modes:1=0.05\nreplicas = 64\nt = 0.05\nt = 0.1\nobservable = tanh:1\nsave_every = 10\n"
    )
    assert run_kind(tmp_path, text) == 0
    assert "PASS smoothing_bound" in capsys.readouterr().out


def test_cli_ergodic(tmp_path, capsys):
    text = (
        MINIMAL.replace("kind = simulate", "kind = ergodic")
        .replace("T = 1", "T = 4")
        .replace("dt = 1e-4", "dt = 1e-3")
        + "x0 = const\nx0 = gaussian:0.9\nsave_every = 5\n"
    )
    code = run_kind(tmp_path, text)
    out = capsys.readouterr().out
    assert "start_independence" in out
    assert code == 0
    run_dir = os.path.dirname(out.strip().splitlines()[-1])
    report = json.load(open(os.path.join(run_dir, "ergodic.json")))
    assert report["elliptic_ok"] is True
    assert os.path.exists(os.path.join(run_dir, "ergodic.txt"))


def test_cli_irreducibility(tmp_path, capsys):
    text = (
        MINIMAL.replace("kind = simulate", "kind = irreducibility")
        .replace("T = 1", "T = 0.5")
        .replace("dt = 1e-4", "dt = 1e-3")
        + "x0 = const\nx0 = gaussian:0.7\nradius = 0.3\nt = 0.5\nreplicas = 100\nsave_every = 10\n"
    )
    assert run_kind(tmp_path, text) == 0
    assert "PASS reachable_from_all_starts" in capsys.readouterr().out


def test_cli_nsweep(tmp_path, capsys):
    text = (
        MINIMAL.replace("kind = simulate", "kind = nsweep")
        .replace("T = 1", "T = 0.5")
        .replace("dt = 1e-4", "dt = 1e-3")
        + "sweep_n = 2\nsweep_n = 4\nsweep_n = 8\nt = 0.5\nreplicas = 300\n"
        + "observable = seminorm:-1\nsave_every = 100\n"
    )
    assert run_kind(tmp_path, text) == 0
    out = capsys.readouterr().out
    assert "PASS cauchy_decreasing" in out


def test_cli_lintest(tmp_path, capsys):
    text = (
        MINIMAL.replace("kind = simulate", "kind = lintest")
        .replace("T = 1", "T = 0.25")
        .replace("potential = poly", "potential = off")
        .replace("lambda = 1", "lambda = 0")
        .replace("n = 4", "")
        .replace("M = 32", "M = 8")
        + "replicas = 4000\nx0 = modes:1=0.3,2=-0.2\nsave_every = 250\n"
    )
    assert run_kind(tmp_path, text) == 0
    out = capsys.readouterr().out
    assert "PASS per_mode_means" in out
    assert "PASS per_mode_variances" in out
    assert "PASS ks_mode_distribution" in out
    assert "PASS gronwall_envelope" in out


def test_plot_log_column_reproduces_decay_rate(tmp_path, capsys):
    text = (
        MINIMAL.replace("kind = simulate", "kind = couple").replace("T = 1", "T = 0.08")
        + "y0 = gaussian:0.4\nx0 = modes:1=0.2\nsave_every = 20\n"
    )
    assert run_kind(tmp_path, text) == 0
    manifest_path = capsys.readouterr().out.strip().splitlines()[-1]
    assert cli.main(["plot", "--manifest", manifest_path, "--series", "dist_m1"]) == 0
    plotted = capsys.readouterr().out.strip()
    data = np.loadtxt(plotted, delimiter=",", skiprows=1)
    header = open(plotted).readline().strip().split(",")
    t = data[:, header.index("t")]
    log10_dist = data[:, header.index("log10_dist_m1")]
    slope = np.polyfit(t, log10_dist, 1)[0] * np.log(10.0)
    from chcsim.coupling import contraction_rate

    assert -slope >= 0.9 * contraction_rate(2, 1.0).operational


def test_run_outputs_bit_exact(tmp_path):
    text = MINIMAL.replace("T = 1", "T = 0.02")
    cfg = parse_config_text(text)
    m1 = runner.run(cfg, override_out=str(tmp_path / "a"))
    m2 = runner.run(cfg, override_out=str(tmp_path / "b"))
    f1 = open(os.path.join(m1.directory, "trajectory.csv"), "rb").read()
    f2 = open(os.path.join(m2.directory, "trajectory.csv"), "rb").read()
    assert f1 == f2
    # same base dir never overwrites
    m3 = runner.run(cfg, override_out=str(tmp_path / "a"))
    assert m3.directory != m1.directory


def test_manifest_contents(tmp_path):
    cfg = parse_config_text(MINIMAL.replace("T = 1", "T = 0.02"))
    manifest = runner.run(cfg, override_out=str(tmp_path))
    data = json.load(open(manifest.path))
    assert data["config_hash"] == config_hash(cfg)
    assert data["replica_streams"]["keys"] == [[7, 0]]
    assert data["outputs"] == ["trajectory.csv"]
    assert "created_utc" in data
    parsed_back = parse_config_text(data["config"])
    assert parsed_back == cfg
