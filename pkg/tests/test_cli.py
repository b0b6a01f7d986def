import csv
import json
import os
import pytest
import tomllib

from dataclasses import replace

from conformal.qcurv.cli import (
    PROBE_COLUMNS,
    GridConfig,
    ProbeConfig,
    RunConfig,
    build_parser,
    cmd_probe,
    cmd_solve,
    load_config,
    main,
)
from conformal.qcurv.config import (
    PROBE_EXAMPLE_CONFIG_PATH,
    THM1_EXAMPLE_CONFIG_PATH,
    THM2_EXAMPLE_CONFIG_PATH,
)
from conformal.qcurv.constants import lambda1
from conformal.qcurv.diagnostics import validate_report


SMALL_GRID = """
[grid]
size = {size}
r_max = 40.0
grading = 2.0
"""

QUARTIC_N3 = """
mode = "solve"

[problem]
n = 3
variant = "THM2"
kappa_factor = 0.5

[problem.q]
kind = "quartic"
amplitude = 2.0
rate = 1.0
"""

GAUSSIAN_PROBE = """
mode = "probe"

[problem]
n = 3
variant = "THM2"
kappa_factor = 1.0

[problem.q]
kind = "gaussian"
amplitude = 1.0
rate = 1.0

[probe]
kappa_factors = {factors}
"""


# A positive polynomial makes Q e^{nP} unbounded, so the solve stops before iterating
UNBOUNDED_THM1 = """
[problem]
n = 5
variant = "THM1"
kappa_factor = 1.0
p_coeffs = [0.0, 1.0]

[problem.q]
kind = "constant"
amplitude = 24.0
"""

def write_config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def report_without_output(out):
    with open(out / "report.json") as f:
        document = json.load(f)
    # the output directory is the only field that differs between runs
    del document["config"]["output"]
    return document


@pytest.mark.parametrize(
    "path, n, variant, factor",
    [
        (THM1_EXAMPLE_CONFIG_PATH, 5, "THM1", 1.0),
        (THM2_EXAMPLE_CONFIG_PATH, 3, "THM2", 2.0),
        (PROBE_EXAMPLE_CONFIG_PATH, 3, "THM2", 0.5),
    ],
)
def test_packaged_configs_load(path, n, variant, factor):
    cfg = load_config(path)
    assert cfg.problem.n == n
    assert cfg.problem.variant == variant
    assert cfg.problem.kappa == pytest.approx(factor * lambda1(n))
    assert cfg.grid == GridConfig(size=2048, r_max=100.0, grading=2.0)


def test_probe_config_sweep():
    cfg = load_config(PROBE_EXAMPLE_CONFIG_PATH)
    assert cfg.mode == "probe"
    assert cfg.probe.kappas == pytest.approx(tuple(f * lambda1(3) for f in (0.5, 1.0, 1.5)))


@pytest.mark.parametrize(
    "path", [THM1_EXAMPLE_CONFIG_PATH, THM2_EXAMPLE_CONFIG_PATH, PROBE_EXAMPLE_CONFIG_PATH]
)
def test_run_config_dict_form(path):
    cfg = load_config(path)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_absolute_kappa():
    with open(THM2_EXAMPLE_CONFIG_PATH, "rb") as f:
        data = tomllib.load(f)
    data["problem"].pop("kappa_factor")
    data["problem"]["kappa"] = 12.5
    assert RunConfig.from_dict(data).problem.kappa == 12.5
    data["problem"]["kappa_factor"] = 1.0
    with pytest.raises(ValueError):
        RunConfig.from_dict(data)


@pytest.mark.parametrize(
    "edit",
    [
        lambda d: d.update(extra={}),
        lambda d: d["problem"].pop("q"),
        lambda d: d["problem"].update(n=3.0),
        lambda d: d["problem"].update(colour="red"),
        lambda d: d["solver"].update(dampening=0.5),
        lambda d: d["grid"].update(r_max=15.0),
        lambda d: d.update(mode="explore"),
        lambda d: d["problem"]["q"].update(amplitude=0.0),
    ],
)
def test_invalid_run_config(edit):
    with open(THM1_EXAMPLE_CONFIG_PATH, "rb") as f:
        data = tomllib.load(f)
    edit(data)
    with pytest.raises(ValueError):
        RunConfig.from_dict(data)


def test_probe_mode_requirements():
    cfg = load_config(PROBE_EXAMPLE_CONFIG_PATH)
    with pytest.raises(ValueError):
        replace(cfg, probe=ProbeConfig(()))
    with pytest.raises(ValueError):
        replace(cfg, probe=ProbeConfig((1.0, -2.0)))
    quartic = load_config(THM2_EXAMPLE_CONFIG_PATH)
    with pytest.raises(ValueError):
        replace(quartic, mode="probe", probe=ProbeConfig((1.0,)))


@pytest.mark.parametrize(
    "text",
    [
        # THM1 below dimension 5
        QUARTIC_N3.replace('variant = "THM2"', 'variant = "THM1"').replace("n = 3", "n = 4"),
        # Q(0) = 0
        QUARTIC_N3.replace("amplitude = 2.0", "amplitude = 0.0"),
        # grid below the minimum size
        QUARTIC_N3 + SMALL_GRID.format(size=16),
        "this is [not toml",
    ],
)
def test_solve_rejects_bad_config(tmp_path, text):
    path = write_config(tmp_path, text)
    assert cmd_solve(path, out_dir=str(tmp_path / "out")) == 2
    assert not os.path.exists(tmp_path / "out" / "report.json")


def test_solve_missing_config(tmp_path):
    assert cmd_solve(str(tmp_path / "absent.toml")) == 2


@pytest.mark.parametrize("factors", ["[]", "[0.5, -1.0]"])
def test_probe_rejects_bad_sweep(tmp_path, factors):
    path = write_config(tmp_path, GAUSSIAN_PROBE.format(factors=factors))
    assert cmd_probe(path, out_dir=str(tmp_path)) == 2


def test_probe_rejects_solve_config(tmp_path):
    path = write_config(tmp_path, QUARTIC_N3 + SMALL_GRID.format(size=64))
    assert cmd_probe(path, out_dir=str(tmp_path)) == 2


def test_failed_solve_still_writes_report(tmp_path):
    text = UNBOUNDED_THM1 + SMALL_GRID.format(size=64)
    out = tmp_path / "out"
    assert cmd_solve(write_config(tmp_path, text), out_dir=str(out)) == 1
    assert not os.path.exists(out / "solution.csv")
    with open(out / "report.json") as f:
        document = json.load(f)
    validate_report(document)
    assert document["solve"]["status"] == "AdmissibilityError"
    assert document["diagnostics"]["passed"] is False
    assert document["config"]["problem"]["p_coeffs"] == [0.0, 1.0]


def test_kernel_cache_directory_is_created(tmp_path):
    path = write_config(tmp_path, UNBOUNDED_THM1 + SMALL_GRID.format(size=64))
    cache = tmp_path / "caches" / "n5" / "kernel.bin"
    assert cmd_solve(path, out_dir=str(tmp_path / "out"), kernel_cache=str(cache)) == 1
    assert cache.exists()
    assert (tmp_path / "out" / "report.json").exists()


def test_unusable_kernel_cache_is_a_config_error(tmp_path):
    path = write_config(tmp_path, UNBOUNDED_THM1 + SMALL_GRID.format(size=64))
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    cache = blocker / "kernel.bin"
    assert cmd_solve(path, out_dir=str(tmp_path / "out"), kernel_cache=str(cache)) == 2


def test_sweep_kappa_is_optional(tmp_path):
    text = GAUSSIAN_PROBE.format(factors="[0.5, 1.5]").replace("kappa_factor = 1.0\n", "")
    cfg = load_config(write_config(tmp_path, text))
    assert cfg.problem.kappa == pytest.approx(0.5 * lambda1(3))
    assert cfg.probe.kappas == pytest.approx((0.5 * lambda1(3), 1.5 * lambda1(3)))
    assert RunConfig.from_dict(cfg.to_dict()) == cfg

    # solve mode still requires kappa
    solve_text = text.replace('mode = "probe"', 'mode = "solve"')
    with pytest.raises(ValueError):
        load_config(write_config(tmp_path, solve_text, name="solve.toml"))


def test_parser():
    parser = build_parser()
    args = parser.parse_args(["solve", "--config", "a.toml", "--kernel-cache", "k.bin"])
    assert (args.command, args.config, args.out, args.kernel_cache) == (
        "solve",
        "a.toml",
        None,
        "k.bin",
    )
    assert parser.parse_args(["verify", "--fast"]).fast
    args = parser.parse_args(["--verbose", "probe", "--config", "p.toml", "--out", "o"])
    assert args.verbose and args.out == "o"
    with pytest.raises(SystemExit):
        parser.parse_args(["solve"])
    with pytest.raises(SystemExit):
        parser.parse_args([])


def test_main_dispatch(tmp_path):
    path = write_config(tmp_path, "not = [toml")
    assert main(["solve", "--config", path]) == 2
    assert main(["probe", "--config", path]) == 2


@pytest.mark.slow
def test_solve_artifacts_are_reproducible(tmp_path):
    path = write_config(tmp_path, QUARTIC_N3 + SMALL_GRID.format(size=512))
    out = tmp_path / "out"
    files = ("solution.csv", "plotdata.csv", "report.json")
    contents = []
    for _ in range(2):
        assert cmd_solve(path, out_dir=str(out)) in (0, 1)
        contents.append([(out / name).read_bytes() for name in files])
    assert contents[0] == contents[1]

    document = json.loads(contents[0][2])
    assert document["solve"]["status"] == "Converged"
    header, *rows = read_csv(out / "solution.csv")
    assert header == ["r", "u", "v", "lap_v"]
    assert len(rows) == 513
    assert read_csv(out / "plotdata.csv")[0] == ["r", "log_r", "g"]


@pytest.mark.slow
def test_kernel_cache_is_reused(tmp_path):
    path = write_config(tmp_path, QUARTIC_N3 + SMALL_GRID.format(size=256))
    cache = tmp_path / "kernel.bin"
    cmd_solve(path, out_dir=str(tmp_path / "a"), kernel_cache=str(cache))
    assert cache.exists()
    cmd_solve(path, out_dir=str(tmp_path / "b"), kernel_cache=str(cache))
    assert report_without_output(tmp_path / "a") == report_without_output(tmp_path / "b")


@pytest.mark.slow
def test_probe_writes_one_row_per_kappa(tmp_path):
    text = GAUSSIAN_PROBE.format(factors="[0.5, 1.0, 1.5]") + SMALL_GRID.format(size=256)
    assert cmd_probe(write_config(tmp_path, text), out_dir=str(tmp_path)) == 0
    header, *rows = read_csv(tmp_path / "probe.csv")
    assert header == list(PROBE_COLUMNS)
    assert len(rows) == 3
    assert all(len(row) == 5 for row in rows)
    assert [float(row[2]) for row in rows] == pytest.approx([-1.0, 0.0, 3.0], abs=1e-12)
