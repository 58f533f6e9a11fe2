import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from decoyqkd import cli, scenario
from decoyqkd.cascade import ReconciliationResult
from decoyqkd.scenario import (
    ConfigError,
    ScenarioConfig,
    emit_figure_data,
    load_scenario,
    run_pipeline,
)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def preset_file(tmp_path):
    path = tmp_path / "ds2.json"
    path.write_text(json.dumps(ScenarioConfig.from_preset("ds2-100km", seed=1).to_dict()))
    return path


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipeline")
    assert cli.main(["pipeline", "--preset", "ds2-100km", "--seed", "1", "--out", str(out)]) == 0
    return out


# ---------------------------------------------------------------- scenario documents


def test_round_trip_and_digest(preset_file):
    sc = load_scenario(preset_file)
    assert ScenarioConfig.from_dict(json.loads(json.dumps(sc.to_dict()))) == sc
    assert sc.digest() == ScenarioConfig.from_preset("ds2-100km", seed=1).digest()
    assert sc.digest() != ScenarioConfig.from_preset("ds2-100km", seed=2).digest()
    assert len(sc.digest()) == 64


def test_presets_carry_data_set_parameters():
    one = ScenarioConfig.from_preset("ds1-85km")
    assert one.decoy.intensities == (0.487, 0.0639, 1.05e-3) and one.decoy.duration == 351.0
    assert one.channel.background_yield == pytest.approx(3.0 * 120e-9)
    two = ScenarioConfig.from_preset("ds2-100km")
    assert two.decoy.intensities == (0.297, 0.099, 2.75e-3) and two.decoy.duration == 828.0
    with pytest.raises(ConfigError):
        ScenarioConfig.from_preset("nope")


def test_minimal_document_gets_defaults():
    full = ScenarioConfig.from_preset("ds2-100km", seed=4).to_dict()
    sc = ScenarioConfig.from_dict({"schema_version": 1, "seed": 4, "decoy": full["decoy"], "channel": full["channel"]})
    assert sc.reconcile and sc.amplify and sc.f_ec == 1.1 and sc.simulation == "aggregate"
    assert sc.distances == () and sc.sweep_base_distance == 100.0


@pytest.mark.parametrize(
    "patch",
    [
        {"schema_version": 2},
        {"bogus": 1},
        {"decoy": None},
        {"decoy": {"intensities": [0.1, 0.5, 0.0]}},
        {"channel": {"fiber_length": -5}},
        {"stages": {"reconcile": False, "amplify": True}},
        {"f_ec": 0.9},
        {"simulation": "quantum"},
        {"seed": -1},
        {"sweeps": {"time_factors": [0.0]}},
    ],
)
def test_invalid_documents_rejected(patch):
    doc = ScenarioConfig.from_preset("ds2-100km", seed=1).to_dict()
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(doc.get(k), dict) and k not in ("stages",):
            doc[k] = {**doc[k], **v}
        else:
            doc[k] = v
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(doc)


# ---------------------------------------------------------------- pipeline


def test_pipeline_keys_agree_and_match_key_length():
    sc = ScenarioConfig.from_preset("ds2-100km", seed=2)
    res = run_pipeline(sc)
    assert res.verified
    assert res.report.key.n_sec > 0
    assert len(res.alice_key) == res.report.key.n_sec
    assert np.array_equal(res.alice_key, res.bob_key)
    assert res.report.key.f_ec == pytest.approx(
        res.leaked_bits / (res.tallies.sifted_detections[0] * _h2(res.tallies.qber(0)))
    )
    summary = res.summary()
    assert summary["n_sec"] == summary["final_key_length"] == res.report.key.n_sec
    assert summary["reconciliation_verified"] is True


def _h2(p):
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def test_pipeline_outputs(pipeline_run):
    names = sorted(p.name for p in pipeline_run.iterdir())
    assert names == ["final_key.hex", "report.json", "sweep_distance.csv", "sweep_time.csv"]
    report = json.loads((pipeline_run / "report.json").read_text())
    lines = (pipeline_run / "final_key.hex").read_text().splitlines()
    header = dict(item.split("=") for item in lines[0][2:].split())
    assert lines[0].startswith("# ")
    assert int(header["n_sec"]) == report["n_sec"]
    assert float(header["epsilon_budget"]) == pytest.approx(6e-7)
    assert header["config_sha256"] == ScenarioConfig.from_preset("ds2-100km", seed=1).digest()
    body = "".join(lines[1:])
    assert all(len(line) <= 64 for line in lines[1:])
    assert body == body.lower() and len(body) == 2 * -(-report["n_sec"] // 8)
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(body), dtype=np.uint8))
    assert not bits[report["n_sec"]:].any()


def test_key_file_matches_pipeline_key(pipeline_run):
    res = run_pipeline(ScenarioConfig.from_preset("ds2-100km", seed=1))
    body = "".join((pipeline_run / "final_key.hex").read_text().splitlines()[1:])
    bits = np.unpackbits(np.frombuffer(bytes.fromhex(body), dtype=np.uint8))[: len(res.alice_key)]
    assert np.array_equal(bits, res.alice_key)


def test_reconciliation_failure_exit_code(tmp_path, monkeypatch):
    def broken(alice, bob, est, seed, **kw):
        return ReconciliationResult(np.asarray(bob), 100, 4, verified=False)

    monkeypatch.setattr(scenario, "cascade_reconcile", broken)
    out = tmp_path / "out"
    assert cli.main(["pipeline", "--preset", "ds2-100km", "--seed", "1", "--out", str(out)]) == 4
    assert not out.exists()


# ---------------------------------------------------------------- exit codes and outputs


def test_malformed_config_exit_2_and_no_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    out = tmp_path / "out"
    assert cli.main(["analyze", "--config", str(bad), "--out", str(out)]) == 2
    assert "not valid JSON" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--preset", "ds2-100km"],  # no seed
        ["simulate", "--preset", "nope", "--seed", "1"],
        ["simulate", "--seed", "1"],
        ["teleport"],
        ["simulate", "--preset", "ds2-100km", "--seed", "x"],
        ["analyze", "--config", "/nonexistent.json", "--seed", "1"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path):
    out = tmp_path / "out"
    assert cli.main(argv + ["--out", str(out)]) == 2
    assert not out.exists()


def test_both_sources_rejected(preset_file, tmp_path):
    argv = ["simulate", "--config", str(preset_file), "--preset", "ds2-100km", "--out", str(tmp_path / "o")]
    assert cli.main(argv) == 2


def test_inconsistent_tallies_exit_3(tmp_path, preset_file):
    tallies = {
        "pulses_sent": [10**7, 10**6, 10**6],
        "sifted_detections": [1000, 100, 500_000],
        "sifted_errors": [10, 1, 250_000],
        "sifted_zeros": [500, 50, 250_000],
        "clock_cycles": 12 * 10**6,
    }
    path = tmp_path / "t.json"
    path.write_text(json.dumps(tallies))
    out = tmp_path / "out"
    assert cli.main(["analyze", "--config", str(preset_file), "--tallies", str(path), "--out", str(out)]) == 3
    assert not out.exists()


def test_unreadable_tallies_exit_2(tmp_path, preset_file):
    path = tmp_path / "t.json"
    path.write_text('{"pulses_sent": [1]}')
    assert cli.main(["analyze", "--config", str(preset_file), "--tallies", str(path), "--out", str(tmp_path / "o")]) == 2


def test_simulate_then_analyze(tmp_path, preset_file):
    assert cli.main(["simulate", "--config", str(preset_file), "--out", str(tmp_path)]) == 0
    t = tmp_path / "tallies.json"
    assert cli.main(["analyze", "--config", str(preset_file), "--tallies", str(t), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["analyze", "--config", str(preset_file), "--out", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert a == b
    assert a["security_failure_probability"] == pytest.approx(6e-7)


def test_csv_formats(tmp_path):
    base = ["--preset", "ds1-85km", "--seed", "3", "--format", "csv"]
    assert cli.main(["simulate", *base, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "tallies.csv")
    assert [r["level"] for r in rows] == ["0", "1", "2"]
    assert cli.main(["analyze", *base, "--out", str(tmp_path)]) == 0
    (row,) = read_csv(tmp_path / "report.csv")
    assert int(row["n_sec"]) > 0 and float(row["mu0"]) == 0.487


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("DECOYQKD_OUT", str(target))
    assert cli.main(["simulate", "--preset", "ds2-100km", "--seed", "1"]) == 0
    assert (target / "tallies.json").exists()


def test_sweep_csv_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["sweep-distance", "--preset", "ds2-100km", "--seed", "5", "--out", str(tmp_path / d)]) == 0
    for name in ("fig2.csv", "sweep_distance.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_csv(tmp_path / "a" / "fig2.csv")
    assert list(rows[0]) == ["distance_km", "rate_bps"]
    at = {float(r["distance_km"]): float(r["rate_bps"]) for r in rows}
    assert at[107.0] > 0


def test_fig3_identity_row_equals_report(tmp_path):
    argv = ["--preset", "ds2-100km", "--seed", "6", "--out", str(tmp_path)]
    assert cli.main(["sweep-time", *argv]) == 0
    assert cli.main(["analyze", *argv]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    rows = read_csv(tmp_path / "fig3.csv")
    assert list(rows[0]) == ["time_s", "y1_lower", "b1_upper", "rate_bps"]
    (row,) = [r for r in rows if float(r["time_s"]) == 828.0]
    assert float(row["y1_lower"]) == report["y1_lower"]
    assert float(row["b1_upper"]) == report["b1_upper"]
    assert float(row["rate_bps"]) == report["secret_bit_rate"]


def test_emit_figure_data_matches_cli(tmp_path):
    sc = ScenarioConfig.from_preset("ds2-100km", seed=5)
    path = emit_figure_data(sc, "fig2", tmp_path / "lib")
    assert cli.main(["sweep-distance", "--preset", "ds2-100km", "--seed", "5", "--out", str(tmp_path / "cli")]) == 0
    assert path.read_bytes() == (tmp_path / "cli" / "fig2.csv").read_bytes()
    with pytest.raises(ValueError):
        emit_figure_data(sc, "fig9", tmp_path)


def test_preset_verb(tmp_path, capsys):
    assert cli.main(["preset"]) == 0
    assert capsys.readouterr().out.split() == ["ds1-85km", "ds2-100km"]
    assert cli.main(["preset", "ds1-85km", "--seed", "9"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert ScenarioConfig.from_dict(doc) == ScenarioConfig.from_preset("ds1-85km", seed=9)
    assert cli.main(["preset", "ds1-85km", "--out", str(tmp_path)]) == 0
    assert load_scenario(tmp_path / "ds1-85km.json") == ScenarioConfig.from_preset("ds1-85km")
    assert cli.main(["preset", "nope"]) == 2


def test_optimize_verb(tmp_path):
    assert cli.main(["optimize", "--preset", "ds2-100km", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "optimization.json").read_text())
    assert summary["predicted_rate"] >= summary["configured_rate"] > 0
    assert len(read_csv(tmp_path / "search_trace.csv")) == summary["evaluations"]


def test_module_entry_point(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[]")
    proc = subprocess.run(
        [sys.executable, "-m", "decoyqkd.cli", "simulate", "--config", str(bad), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2 and "config error" in proc.stderr
    help_text = subprocess.run([sys.executable, "-m", "decoyqkd.cli", "--help"], capture_output=True, text=True).stdout
    for verb in ("simulate", "analyze", "pipeline", "sweep-distance", "sweep-time", "optimize", "preset"):
        assert verb in help_text
