import csv
import json
import re

import pytest

from fedbal.errors import ConfigError, InvalidArgumentError
from fedbal.federation import DataConfig, FedConfig, run_experiment
from fedbal.harness.chart import emit_chart, padded_range, render_chart
from fedbal.harness.cli import run_cli
from fedbal.harness.config import build_config, parse_config
from fedbal.harness.presets import run_preset
from fedbal.harness.results import ROUNDS_HEADER, WORKERS_HEADER, read_rounds, read_workers, write_results

TINY = {
    "rounds": 2,
    "n_workers": 4,
    "train": {"epochs": 1},
    "data": {"n_samples": 12, "height": 8, "width": 8, "n_aux_samples": 4, "n_test_samples": 4},
}


def write_config(tmp_path, doc, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def tiny_history():
    fed, data, _ = build_config({**TINY, "n_workers": 3, "rounds": 1})
    history, _ = run_experiment(fed, data)
    return history


# -- config ------------------------------------------------------------------


def test_empty_config_gives_defaults(tmp_path):
    fed, data, preset = parse_config(write_config(tmp_path, {}))
    assert fed == FedConfig()
    assert data == DataConfig()
    assert preset is None
    assert fed.initial_threshold == 0.5 and fed.threshold_step == 0.01 and fed.priority_class == 1
    assert (fed.train.loss.tversky.alpha, fed.train.loss.tversky.beta) == (0.7, 0.3)


def test_paper_mode_derives_beta():
    fed, _, _ = build_config({"loss": {"alpha": 0.8}})
    assert fed.train.loss.tversky.beta == pytest.approx(0.2, abs=1e-15)
    fed, _, _ = build_config({"loss": {"beta": 0.4}})
    assert fed.train.loss.tversky.alpha == pytest.approx(0.6, abs=1e-15)


def test_paper_mode_rejects_inconsistent_pair():
    with pytest.raises(ConfigError) as err:
        build_config({"loss": {"alpha": 0.8, "beta": 0.3}})
    assert err.value.key == "loss.beta"
    fed, _, _ = build_config({"paper_mode": False, "loss": {"alpha": 0.8, "beta": 0.3}})
    assert fed.train.loss.tversky.beta == 0.3


@pytest.mark.parametrize(
    "doc,key",
    [
        ({"rounds": 0}, "rounds"),
        ({"colour": "red"}, "colour"),
        ({"train": {"lr": 1}}, "train.lr"),
        ({"data": {"partition": "dirichlet"}}, "data.partition"),
        ({"train": {"learning_rate": 0}}, "train.learning_rate"),
        ({"bal": "yes"}, "bal"),
        ({"train": 3}, "train"),
    ],
)
def test_config_errors_name_the_key(doc, key):
    with pytest.raises(ConfigError) as err:
        build_config(doc)
    assert err.value.key == key
    assert key in str(err.value)


def test_priority_by_name_and_knobs():
    fed, _, _ = build_config({"priority_class": "ship", "threshold_bands": "exact", "theta_strict": True})
    assert fed.priority_class == 3
    assert fed.threshold_bands == "exact" and fed.theta_strict


def test_preset_overrides_sit_below_document():
    _, data, preset = build_config({"preset": "noniid", "data": {"classes_per_worker": 3}})
    assert preset == "noniid"
    assert data.partition == "noniid" and data.classes_per_worker == 3


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_config(tmp_path / "nope.json")


# -- results -----------------------------------------------------------------


def test_headers_byte_exact(tmp_path, tiny_history):
    rounds, workers = write_results(tiny_history, tmp_path)
    assert rounds.read_bytes().split(b"\n")[0] == (
        b"round,algorithm,bal,global_miou,iou_sea,iou_oil,iou_lookalike,iou_ship,iou_land,"
        b"threshold_before,threshold_after,n_relevant,n_rejected"
    )
    assert workers.read_bytes().split(b"\n")[0] == b"round,worker_id,local_miou,theta,selected"
    assert tuple(rounds.read_text().splitlines()[0].split(",")) == ROUNDS_HEADER
    assert tuple(workers.read_text().splitlines()[0].split(",")) == WORKERS_HEADER


def test_workers_rows_one_round_three_workers(tmp_path, tiny_history):
    _, workers = write_results(tiny_history, tmp_path)
    rows = read_workers(workers)
    assert len(rows) == 3
    assert [r["worker_id"] for r in rows] == [0, 1, 2]


def test_rounds_round_trip(tmp_path):
    fed, data, _ = build_config(TINY)
    history, _ = run_experiment(fed, data)
    rounds, workers = write_results(history, tmp_path)
    parsed = read_rounds(rounds)
    assert [r["round"] for r in parsed] == [1, 2]
    for row, rec in zip(parsed, history):
        assert row["algorithm"] == rec.algorithm and row["bal"] == rec.bal_enabled
        assert row["global_miou"] == pytest.approx(rec.global_miou, abs=5e-7)
        for key, value in zip(ROUNDS_HEADER[4:9], rec.global_per_class_iou):
            if value is None:
                assert row[key] is None
            else:
                assert row[key] == pytest.approx(value, abs=5e-7)
        assert row["threshold_before"] == pytest.approx(rec.threshold_before, abs=5e-7)
        assert row["threshold_after"] == pytest.approx(rec.threshold_after, abs=5e-7)
        assert (row["n_relevant"], row["n_rejected"]) == (len(rec.relevant_ids), len(rec.rejected_ids))
    for line in rounds.read_text().splitlines()[1:]:
        for field in line.split(",")[3:11]:
            assert field == "" or re.fullmatch(r"-?\d+\.\d{6}", field)


# -- charts ------------------------------------------------------------------


def _axes(svg):
    attrs = dict(re.findall(r'data-([xy]-(?:min|max))="([^"]+)"', svg))
    return {k: float(v) for k, v in attrs.items()}


def test_chart_padding_parsed_from_svg():
    series = {"a": [(1, 0.2), (2, 0.6)], "b": [(1, 0.4), (3, 0.3)]}
    axes = _axes(render_chart(series))
    assert axes["x-min"] == pytest.approx(1 - 0.1) and axes["x-max"] == pytest.approx(3 + 0.1)
    assert axes["y-min"] == pytest.approx(0.2 - 0.02) and axes["y-max"] == pytest.approx(0.6 + 0.02)


def test_chart_points_land_inside_plot_area():
    svg = render_chart({"a": [(1, 0.2), (2, 0.6)], "b": [(1, 0.4), (3, 0.3)]})
    for points in re.findall(r'points="([^"]+)"', svg):
        for pair in points.split():
            x, y = map(float, pair.split(","))
            assert 70 < x < 620 and 40 < y < 420


def test_constant_series_are_horizontal():
    svg = render_chart({"lo": [(1, 0.5), (2, 0.5), (3, 0.5)], "hi": [(1, 0.7), (2, 0.7), (3, 0.7)]})
    lines = re.findall(r'<polyline data-series="([^"]+)"[^>]*points="([^"]+)"', svg)
    assert [name for name, _ in lines] == ["lo", "hi"]
    for _, points in lines:
        ys = {pair.split(",")[1] for pair in points.split()}
        assert len(ys) == 1


def test_chart_viewport_and_degenerate_range():
    svg = render_chart({"one": [(1, 0.0)]})
    assert 'width="800" height="480"' in svg and 'viewBox="0 0 800 480"' in svg
    assert padded_range([0.0]) == (-0.05, 0.05)
    assert padded_range([2.0]) == (1.9, 2.1)


def test_chart_deterministic_bytes(tmp_path):
    series = {"x": [(i, i * 0.1) for i in range(5)]}
    a = emit_chart(series, tmp_path / "a.svg").read_bytes()
    b = emit_chart(series, tmp_path / "b.svg").read_bytes()
    assert a == b


def test_chart_rejects_empty(tmp_path):
    with pytest.raises(InvalidArgumentError):
        emit_chart({}, tmp_path / "x.svg")
    with pytest.raises(InvalidArgumentError):
        emit_chart({"a": []}, tmp_path / "x.svg")


# -- CLI ---------------------------------------------------------------------


def test_cli_single_run(tmp_path, capsys):
    cfg = write_config(tmp_path, TINY)
    out = tmp_path / "out"
    code = run_cli(["--config", str(cfg), "--out-dir", str(out), "--algorithm", "fedavg", "--bal", "off"])
    assert code == 0
    with open(out / "rounds.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["algorithm"] for r in rows] == ["fedavg", "fedavg"]
    assert [r["bal"] for r in rows] == ["off", "off"]
    assert {p.name for p in out.iterdir()} == {"rounds.csv", "workers.csv", "miou.svg", "final_params.json"}


def test_cli_flags_override_file(tmp_path):
    cfg = write_config(tmp_path, {**TINY, "algorithm": "fedprox"})
    out = tmp_path / "out"
    assert run_cli(["--config", str(cfg), "--out-dir", str(out), "--rounds", "1", "--algorithm", "fedsgd"]) == 0
    rows = read_rounds(out / "rounds.csv")
    assert len(rows) == 1 and rows[0]["algorithm"] == "fedsgd" and rows[0]["bal"]


def test_cli_env_out_dir(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, TINY)
    monkeypatch.setenv("FEDBAL_OUT_DIR", str(tmp_path / "env"))
    assert run_cli(["--config", str(cfg), "--rounds", "1"]) == 0
    assert (tmp_path / "env" / "rounds.csv").exists()


def test_cli_exit_codes(tmp_path, capsys):
    assert run_cli(["--config", str(tmp_path / "c.json"), "--bogus"]) == 2
    assert run_cli([]) == 2
    assert run_cli(["--config", str(tmp_path / "missing.json")]) == 1
    bad = write_config(tmp_path, {"rounds": 0}, "bad.json")
    assert run_cli(["--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 1
    assert "rounds" in capsys.readouterr().err


def test_cli_preset_twice_identical(tmp_path):
    cfg = write_config(tmp_path, TINY)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run_cli(["--config", str(cfg), "--preset", "noniid", "--seed", "1", "--out-dir", str(out)]) == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


# -- presets -----------------------------------------------------------------


def _preset(name, tmp_path, seeds=(0,)):
    fed, data, _ = build_config({**TINY, "preset": name})
    return run_preset(name, fed, data, tmp_path / name, seeds=list(seeds))


def test_intensity_sweep_preset(tmp_path):
    result = _preset("intensity_sweep", tmp_path)
    variants = {r.variant for r in result.runs}
    assert variants == {f"fedavg{b}_{k}class" for b in ("", "_bal") for k in (1, 2, 3)}
    with open(result.tables["intensity_diff"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert set(rows[0]) == {"round", "seed", "diff_1class", "diff_2class", "diff_3class"}


def test_noniid_unbalanced_preset(tmp_path):
    result = _preset("noniid_unbalanced", tmp_path)
    assert [r.variant for r in result.runs] == ["fedavg", "fedavg_bal", "fedprox", "fedprox_bal", "fedsgd", "fedsgd_bal"]
    assert (tmp_path / "noniid_unbalanced" / "miou.svg").exists()


def test_alpha_sweep_preset(tmp_path):
    result = _preset("alpha_sweep", tmp_path, seeds=(0, 1))
    with open(result.tables["alpha_ordering"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["alpha"] for r in rows] == ["0.6", "0.7", "0.8"]
    assert sorted(int(r["rank"]) for r in rows) == [1, 2, 3]
    assert all(r["seeds"] == "0 1" for r in rows)


def test_central_vs_fed_preset(tmp_path):
    result = _preset("central_vs_fed", tmp_path)
    with open(result.tables["central_vs_fed"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["setup"] for r in rows] == ["centralized", "federated"]
    assert all(float(r["min_train_loss"]) <= float(r["final_train_loss"]) for r in rows)
