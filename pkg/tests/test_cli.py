import json
from importlib.resources import files

import numpy as np
import pytest

from dropstab.cli import _load_controller, load_model, main, model_to_json

EXAMPLE = str(files("dropstab").joinpath("data/example1.json"))


def run_cli(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


@pytest.fixture()
def scalar_mp(tmp_path):
    return _write(tmp_path, "scalar.json", {
        "name": "scalar-mp",
        "format": "tf",
        "tf": {"num": [[[1]]], "den": [[[1, -2]]]},
    })


@pytest.fixture()
def stable2(tmp_path):
    return _write(tmp_path, "stable2.json", {
        "name": "stable2",
        "format": "tf",
        "tf": {
            "num": [[[1], [1]], [[0.5], [1]]],
            "den": [[[1, -0.5], [1, -0.5, -0.125, 0.03125]],
                    [[1, 0.25], [1, -0.1]]],
        },
    })


# ---------------------------------------------------------------------------
# model files


def test_load_example_detects_zeros():
    model = load_model(EXAMPLE)
    assert model.name == "example1"
    assert model.format == "tf"
    assert model.plant.n_inputs == 2
    assert model.zeros == (-2.0, 1.5)


def test_round_trip_is_value_identical(tmp_path):
    model = load_model(EXAMPLE)
    path = tmp_path / "copy.json"
    path.write_text(model_to_json(model), encoding="utf-8")
    again = load_model(str(path))
    assert again.document == model.document
    assert again.zeros == model.zeros


def test_load_rejects_malformed(tmp_path):
    bad = [
        {"format": "tf", "tf": {"num": [[[1]]], "den": [[[1, -2]]]}},
        {"name": "x", "format": "zpk", "tf": {}},
        {"name": "x", "format": "tf"},
        {"name": "x", "format": "tf", "tf": {"num": [[[1]]], "den": [[[1, -2]]]},
         "ss": {"A": [], "B": [], "C": [], "D": []}},
        {"name": "x", "format": "ss",
         "ss": {"A": [[0.5]], "B": [[1]], "C": [[1]], "D": [[0]]}},
        {"name": "x", "format": "tf", "tf": {"num": [[[1]]], "den": [[[1, -2]]]},
         "channel_zeros": [0.5]},
    ]
    for k, payload in enumerate(bad):
        path = _write(tmp_path, f"bad{k}.json", payload)
        with pytest.raises(ValueError):
            load_model(path)


def test_ss_format_matches_tf(tmp_path, example_ss, capsys):
    ss = {name: np.real(getattr(example_ss, name)).tolist()
          for name in ("A", "B", "C", "D")}
    path = _write(tmp_path, "ss.json", {
        "name": "example1-ss", "format": "ss", "ss": ss,
        "channel_zeros": [-2.0, 1.5],
    })
    code, out, _ = run_cli(["rects", path], capsys)
    assert code == 0
    assert "vertex: (0.1758, 0.0142)" in out
    assert "vertex: (0.0476, 0.0246)" in out


# ---------------------------------------------------------------------------
# rects


def test_rects_example(capsys):
    code, out, _ = run_cli(["rects", EXAMPLE], capsys)
    assert code == 0
    assert "decompositions: 2" in out
    assert "vertex: (0.1758, 0.0142)" in out
    assert "vertex: (0.0476, 0.0246)" in out
    assert "volume: 2.49e-03" in out
    assert "volume: 1.17e-03" in out
    assert "max blocking probability: 2.49e-03" in out
    assert "(z - 2)/(2 z - 1)" in out
    assert "(z + 1.5)(z - 2.5)/((-1.5 z - 1)(2.5 z - 1))" in out


def test_rects_rejects_nonsquare(tmp_path, capsys):
    path = _write(tmp_path, "wide.json", {
        "name": "wide", "format": "tf",
        "tf": {"num": [[[1], [1]]], "den": [[[1, -2], [1, -3]]]},
    })
    code, _, err = run_cli(["rects", path], capsys)
    assert code == 1
    assert "error:" in err


def test_rects_stable_plant(stable2, capsys):
    code, out, _ = run_cli(["rects", stable2], capsys)
    assert code == 0
    assert "decompositions: 1" in out
    assert "vertex: (1.0000, 1.0000)" in out


# ---------------------------------------------------------------------------
# analyze


def test_analyze_member(capsys):
    code, out, _ = run_cli(
        ["analyze", EXAMPLE, "--probs", "0.17,0.014"], capsys)
    assert code == 0
    assert "rectangle union: member" in out
    assert "scaling search: member" in out
    assert "certificate gamma:" in out


def test_analyze_not_found(capsys):
    code, out, _ = run_cli(["analyze", EXAMPLE, "--probs", "0.5,0.5"], capsys)
    assert code == 2
    assert "rectangle union: not covered" in out
    assert "scaling search: not found" in out


def test_analyze_zero_probs_trivially_member(capsys):
    code, out, _ = run_cli(["analyze", EXAMPLE, "--probs", "0,0"], capsys)
    assert code == 0
    assert "scaling search: member" in out


def test_analyze_malformed_probs(capsys):
    code, _, err = run_cli(["analyze", EXAMPLE, "--probs", "0.1;0.2"], capsys)
    assert code == 1
    assert "error:" in err
    code, _, err = run_cli(["analyze", EXAMPLE, "--probs", "0.1"], capsys)
    assert code == 1
    assert "expected 2 values" in err


# ---------------------------------------------------------------------------
# region


def test_region_rows_and_determinism(capsys):
    argv = ["region", EXAMPLE, "--grid", "7x5", "--pmax", "0.2,0.03"]
    code, out1, _ = run_cli(argv, capsys)
    assert code == 0
    lines = out1.strip().split("\n")
    assert lines[0] == "p1,p2,member"
    assert len(lines) == 7 * 5 + 1
    # p1-major ordering: the first block shares p1 = 0
    assert all(line.startswith("0,") for line in lines[1:6])
    code, out2, _ = run_cli(argv, capsys)
    assert out2 == out1


def test_region_degenerate_box(capsys):
    code, out, _ = run_cli(
        ["region", EXAMPLE, "--grid", "4x4", "--pmax", "0,0"], capsys)
    assert code == 0
    assert out == "p1,p2,member\n0,0,1\n"


def test_region_marks_rectangle_interior(capsys):
    code, out, _ = run_cli(
        ["region", EXAMPLE, "--grid", "12x9", "--pmax", "0.2,0.03"], capsys)
    assert code == 0
    rows = np.array([[float(tok) for tok in line.split(",")]
                     for line in out.strip().split("\n")[1:]])
    v1 = (16.0 / 91.0, 9216.0 / 651245.0)
    v2 = (1.0 / 21.0, 64.0 / 2605.0)
    p1, p2, member = rows[:, 0], rows[:, 1], rows[:, 2].astype(bool)
    inside = (((p1 < v1[0]) & (p2 < v1[1])) | ((p1 < v2[0]) & (p2 < v2[1])))
    assert member[inside].all()
    assert not member[p1 > v1[0]].any()


def test_region_needs_two_channels(scalar_mp, capsys):
    code, _, err = run_cli(
        ["region", scalar_mp, "--grid", "3x3", "--pmax", "0.1,0.1"], capsys)
    assert code == 1
    assert "two channels" in err


def test_region_bad_grid(capsys):
    code, _, err = run_cli(
        ["region", EXAMPLE, "--grid", "10", "--pmax", "0.1,0.1"], capsys)
    assert code == 1
    assert "--grid" in err


# ---------------------------------------------------------------------------
# synthesize


def test_synthesize_benchmark(tmp_path, capsys):
    code, out, err = run_cli(
        ["synthesize", EXAMPLE, "--probs", "0.158,0.0128"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["ms_radius"] < 1.0
    assert payload["second_moment_radius"] < 1.0
    assert payload["certified_value"] < 1.0
    # stdout carries the JSON in stable alphabetical key order
    assert out.strip() == json.dumps(payload, sort_keys=True, indent=2)
    path = tmp_path / "ctrl.json"
    path.write_text(out, encoding="utf-8")
    K = _load_controller(str(path))
    assert K.order == payload["controller"]["state_count"]
    assert "controller order" in err


def test_synthesize_non_member_exits_2(capsys):
    code, _, err = run_cli(
        ["synthesize", EXAMPLE, "--probs", "0.5,0.5"], capsys)
    assert code == 2
    assert "not certified" in err


def test_synthesize_supplied_gamma(capsys):
    code, out, _ = run_cli(
        ["synthesize", EXAMPLE, "--probs", "0.158,0.0128",
         "--gamma", "1,1"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["gamma"] == [1.0, 1.0]
    assert payload["ms_radius"] < 1.0


def test_synthesize_supplied_gamma_must_certify(capsys):
    # member point, but only under a less balanced scaling than 1,1
    argv = ["synthesize", EXAMPLE, "--probs", "0.175,0.012"]
    code, out, _ = run_cli(argv, capsys)
    assert code == 0
    code, _, err = run_cli(argv + ["--gamma", "1,1"], capsys)
    assert code == 2
    assert "does not certify" in err


def test_synthesize_gamma_reference_entry(capsys):
    code, _, err = run_cli(
        ["synthesize", EXAMPLE, "--probs", "0.1,0.01",
         "--gamma", "2,1"], capsys)
    assert code == 1
    assert "must be scaled by 1" in err


def test_synthesize_stable_plant(stable2, capsys):
    code, out, _ = run_cli(
        ["synthesize", stable2, "--probs", "0.5,0.5"], capsys)
    assert code == 0
    payload = json.loads(out)
    assert payload["controller"]["state_count"] == 0
    assert payload["ms_radius"] < 1.0
    assert payload["second_moment_radius"] < 1.0


# ---------------------------------------------------------------------------
# simulate


def _synthesized_controller(tmp_path, capsys, model, probs):
    code, out, _ = run_cli(["synthesize", model, "--probs", probs], capsys)
    assert code == 0
    path = tmp_path / "ctrl.json"
    path.write_text(out, encoding="utf-8")
    return str(path)


def test_simulate_header_and_length(tmp_path, scalar_mp, capsys):
    ctrl = _synthesized_controller(tmp_path, capsys, scalar_mp, "0.2")
    code, out, _ = run_cli(
        ["simulate", scalar_mp, "--probs", "0.2", "--controller", ctrl,
         "--steps", "5", "--trials", "3"], capsys)
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "step,exact_trace,mc_trace"
    assert len(lines) == 7
    assert lines[1].startswith("0,")


def test_simulate_zero_drop_matches_exactly(tmp_path, scalar_mp, capsys):
    ctrl = _synthesized_controller(tmp_path, capsys, scalar_mp, "0.2")
    code, out, _ = run_cli(
        ["simulate", scalar_mp, "--probs", "0", "--controller", ctrl,
         "--steps", "12", "--trials", "4"], capsys)
    assert code == 0
    for line in out.strip().split("\n")[1:]:
        _, exact, mc = line.split(",")
        assert exact == mc


def test_simulate_member_point_decays(tmp_path, capsys):
    ctrl = _synthesized_controller(tmp_path, capsys, EXAMPLE, "0.158,0.0128")
    code, out, _ = run_cli(
        ["simulate", EXAMPLE, "--probs", "0.158,0.0128",
         "--controller", ctrl, "--steps", "2000", "--trials", "20"], capsys)
    assert code == 0
    rows = np.array([[float(tok) for tok in line.split(",")]
                     for line in out.strip().split("\n")[1:]])
    exact = rows[:, 1]
    assert exact[-1] < 1e-3 * exact.max()


def test_simulate_requires_controller(scalar_mp, capsys):
    code, _, err = run_cli(
        ["simulate", scalar_mp, "--probs", "0.2"], capsys)
    assert code == 1
    assert "--controller" in err


def test_simulate_deterministic_seed(tmp_path, scalar_mp, capsys):
    ctrl = _synthesized_controller(tmp_path, capsys, scalar_mp, "0.2")
    argv = ["simulate", scalar_mp, "--probs", "0.2", "--controller", ctrl,
            "--steps", "40", "--trials", "8", "--seed", "3"]
    _, out1, _ = run_cli(argv, capsys)
    _, out2, _ = run_cli(argv, capsys)
    assert out1 == out2


# ---------------------------------------------------------------------------
# supremum


def test_supremum_scalar(scalar_mp, capsys):
    code, out, _ = run_cli(["supremum", scalar_mp], capsys)
    assert code == 0
    assert "unstable poles: 2" in out
    assert "squared-product rule (used for verdicts): 0.25" in out
    assert "linear-product rule (for comparison): 0.5" in out
    assert "per-channel thresholds 0.25" in out


def test_supremum_stable(stable2, capsys):
    code, out, _ = run_cli(["supremum", stable2], capsys)
    assert code == 0
    assert "squared-product rule (used for verdicts): 1" in out
    assert "linear-product rule (for comparison): 1" in out


def test_supremum_nmp_redirects(capsys):
    code, _, err = run_cli(["supremum", EXAMPLE], capsys)
    assert code == 1
    assert "rects" in err


# ---------------------------------------------------------------------------
# entry point


def test_no_command_prints_help(capsys):
    code, _, err = run_cli([], capsys)
    assert code == 1
    assert "usage" in err.lower()


def test_unknown_command(capsys):
    code, _, err = run_cli(["frobnicate"], capsys)
    assert code == 1
    assert "error" in err.lower()


def test_missing_model_file(capsys):
    code, _, err = run_cli(["rects", "/nonexistent/model.json"], capsys)
    assert code == 1
    assert "error:" in err
