import csv
import json
import math
import os
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

from hypdecay import cli

KG = """model:
  family: klein_gordon
  params: {m0: 1.0, sigma: 2}
pipeline: [predict]
xi_samples: [1.0e-6, 5.0]
"""

WAVE = """model:
  family: wave_dissipation
  params: {mu0: 1.0}
horizon: [0, 1000]
pipeline: [predict, verify]
xi_samples: [1.0e-6, 5.0]
verify: {product_samples: 1}
"""


def _write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, *args):
    return cli.main([*args])


@pytest.fixture(scope="module")
def wave_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("wave")
    cfg = _write(d, WAVE)
    rc = cli.main(["verify", cfg, "--out", str(d / "out")])
    return rc, d / "out"


def test_klein_gordon_predict(tmp_path):
    cfg = _write(tmp_path, KG)
    assert cli.main(["predict", cfg, "--out", str(tmp_path / "o"), "--format", "json"]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    pred = rep["predicted"]
    assert pred["mu"]["mu"] == pytest.approx(0.5, abs=1e-6)
    assert abs(pred["kappa"]["kappa_plus"]) < 0.01 and abs(pred["kappa"]["kappa_minus"]) < 0.01
    assert pred["dichotomy"]["kind"] == "failed"
    assert "strong dichotomy unverified" in pred["dichotomy"]["flags"]


def test_wave_verify_exponents(wave_run):
    rc, out = wave_run
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())
    fits = {round(r["xi_norm"], 8): r for r in rep["verified"]["decay_fits"]}
    assert fits[5.0]["exponent"] == pytest.approx(-0.5, abs=0.02)
    assert abs(fits[1e-6]["exponent"]) < 0.01  # constants solve the xi = 0 equation
    assert rep["verified"]["liouville_defect_max"] < 1e-6
    assert rep["verified"]["product_deviation_max"] < 1e-6
    for r in rep["verified"]["decay_fits"]:
        assert "residual" in r and len(r["window"]) == 2


def test_decay_csv_has_five_columns(wave_run):
    _, out = wave_run
    with open(out / "decay_fits.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["xi_norm", "exponent", "residual", "window_lo", "window_hi"]
    assert len(rows) == 3 and all(len(r) == 5 for r in rows)


def test_one_fit_gives_one_row(tmp_path):
    cfg = _write(tmp_path, WAVE.replace("[1.0e-6, 5.0]", "[5.0]").replace("product_samples: 1", "product_samples: 0"))
    assert cli.main(["verify", cfg, "--out", str(tmp_path / "o"), "--format", "csv"]) == 0
    with open(tmp_path / "o" / "decay_fits.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 2 and len(rows[1]) == 5
    assert not (tmp_path / "o" / "report.json").exists()


def _numbers(obj):
    if isinstance(obj, dict):
        for v in obj.values():
            yield from _numbers(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _numbers(v)
    elif isinstance(obj, float):
        yield obj


def test_json_round_trip_is_bit_exact(wave_run):
    _, out = wave_run
    text = (out / "report.json").read_text()
    rep = json.loads(text)
    again = cli.dumps(rep) + "\n"
    assert again == text


@given(st.floats(allow_nan=False))
def test_float_format_round_trips(x):
    s = cli.format_float(x)
    y = json.loads(s)
    assert isinstance(y, float) and (y == x) and math.copysign(1, y) == math.copysign(1, x)


def test_determinism_apart_from_wall_time(tmp_path):
    cfg = _write(tmp_path, KG)
    docs = []
    for k in range(2):
        assert cli.main(["predict", cfg, "--out", str(tmp_path / f"o{k}"), "--format", "json"]) == 0
        docs.append((tmp_path / f"o{k}" / "report.json").read_text().splitlines())
    diff = [(a, b) for a, b in zip(*docs) if a != b]
    assert len(docs[0]) == len(docs[1])
    assert all('"wall_time"' in a for a, _ in diff)


def test_workers_do_not_change_results(tmp_path, wave_run):
    _, out = wave_run
    cfg = _write(tmp_path, WAVE)
    assert cli.main(["verify", cfg, "--out", str(tmp_path / "o"), "--workers", "2"]) == 0
    a = json.loads((out / "report.json").read_text())
    b = json.loads((tmp_path / "o" / "report.json").read_text())
    assert a["verified"] == b["verified"]


def test_empty_pipeline_echoes_model(tmp_path):
    cfg = _write(tmp_path, KG.replace("[predict]", "[]"))
    assert cli.main(["report", cfg, "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert set(rep) == {"model", "stages", "provenance"}
    assert rep["stages"] == {}
    assert rep["model"]["family"] == "klein_gordon"


def test_config_error_is_line_precise(tmp_path, capsys):
    cfg = _write(tmp_path, WAVE.replace("horizon: [0, 1000]", "horizon: [0, 1000]\nverify_typo: 3"))
    assert cli.main(["verify", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"{cfg}:5:1: verify_typo: unknown key" in err


@pytest.mark.parametrize("text, where", [
    ("model: {family: klein_gordon, params: {m0: 1.0}}\nhorizon: [10, 5]\n", ":2:"),
    ("model: {family: klein_gordon, params: {mass: 1.0}}\n", ":1:"),
    ("model: {family: nope}\n", ":1:"),
    ("model: {family: klein_gordon, params: {m0: 1.0}}\nxi_samples: []\n", ":2:"),
    ("model: {family: klein_gordon, params: {m0: 1.0}}\nsurfaces:\n  gamma_max: 1\n", ":3:"),
    ("model: [unclosed\n", ":2:"),
])
def test_config_errors_exit_1(tmp_path, capsys, text, where):
    cfg = _write(tmp_path, text)
    assert cli.main(["predict", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert where in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["predict", str(tmp_path / "absent.yaml")]) == cli.EXIT_CONFIG


def test_stage_failure_exit_2(tmp_path):
    # m0 = 1/2 gives a Jordan block at t = infinity, so the large-time symbol is refused
    cfg = _write(tmp_path, KG.replace("m0: 1.0", "m0: 0.5"))
    assert cli.main(["predict", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_STAGE
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["stages"]["predict"]["status"] == "failed"
    assert "LargeTimeError" in rep["stages"]["predict"]["error"]


def test_io_failure_exit_3(tmp_path):
    cfg = _write(tmp_path, KG)
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["predict", cfg, "--out", str(blocker / "sub")]) == cli.EXIT_IO


def test_env_overrides_output_dir(tmp_path, monkeypatch):
    cfg = _write(tmp_path, KG.replace("[predict]", "[]"))
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env_out"))
    assert cli.main(["report", cfg]) == 0
    assert (tmp_path / "env_out" / "report.json").exists()


def test_report_writes_figures_and_surfaces(tmp_path):
    text = """model:
  family: first_order
  params:
    A: [[[1, 0], [0, -1]], [[0, 1], [1, 0]]]
    B_inf: [["0.4i", 0], [0, "1.1i"]]
horizon: [0, 1000]
xi_samples: [[2.0, 0.0], [0.0, 5.0]]
pipeline: [predict, verify, surfaces]
verify: {product_samples: 0}
surfaces: {resolution_deg: 2.0, branches: [1]}
"""
    cfg = _write(tmp_path, text)
    out = tmp_path / "o"
    assert cli.main(["report", cfg, "--out", str(out)]) == 0
    figs = sorted(os.listdir(out / "figures"))
    assert figs == ["decay_fits.png", "exponents.png", "surface_branch1.png"]
    assert (out / "figures" / "decay_fits.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with open(out / "surface_branch1.csv") as fh:
        head = next(csv.reader(fh))
    assert head == ["angle", "r", "kappa_2", "kappa_3", "kappa_4"]
    rep = json.loads((out / "report.json").read_text())
    assert rep["surfaces"][0]["gamma"] == 2 and rep["surfaces"][0]["convex"]


def test_surfaces_skipped_for_one_dimension(tmp_path):
    cfg = _write(tmp_path, KG)
    assert cli.main(["surfaces", cfg, "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["stages"]["surfaces"]["status"] == "skipped"


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, KG.replace("[predict]", "[]"))
    proc = subprocess.run([sys.executable, "-m", "hypdecay.cli", "report", cfg, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith("report.json")
