import csv
import json
from pathlib import Path

import numpy as np
import pytest

from covlaw.cli import ConfigError, load_config, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SMALL_LOCAL_LAW = {
    "schema_version": 1,
    "model": {"phi": 0.5, "atoms": [{"s": 1, "weight": 1}], "dims": {"M": 100, "N": 200}},
    "grid": {"n_points": 12, "eta_exponent": -0.3, "kinds": ["bulk"]},
    "trials": 1,
    "seed": 3,
    "n_vectors": 8,
}


def test_edges_prints_marchenko_pastur(capsys, tmp_path):
    rc = run(["edges", "--config", str(CONFIGS / "marchenko-pastur-quarter.json"), "--out", str(tmp_path)])
    assert rc == 0
    lines = capsys.readouterr().out.split()
    assert [float(x) for x in lines[:2]] == pytest.approx([2.25, 0.25], abs=1e-12)


def test_density_on_three_component_model(tmp_path):
    rc = run(["density", "--config", str(CONFIGS / "four-atom-three-components.json"), "--out", str(tmp_path)])
    assert rc == 0
    with open(tmp_path / "density.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    E = np.array([float(r[0]) for r in rows])
    rho = np.array([float(r[1]) for r in rows])
    assert np.all(np.diff(E) > 0)
    # count maximal runs of positive density: one per component
    pos = rho > 1e-8
    runs = int(pos[0]) + int(np.sum(pos[1:] & ~pos[:-1]))
    assert runs == 3
    prof = json.loads((tmp_path / "profile.json").read_text())
    assert prof["p"] == 3 and prof["counts"] == [10, 10, 80]
    assert (tmp_path / "density.svg").stat().st_size > 0


def test_density_single_component(tmp_path):
    assert run(["density", "--config", str(CONFIGS / "four-atom-single-component.json"),
                "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "profile.json").read_text())["p"] == 1


def test_gamma_count(tmp_path):
    assert run(["gamma", "--config", str(CONFIGS / "four-atom-three-components.json"), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "gamma.csv") as fh:
        assert len(list(csv.reader(fh))) == 101


def test_verify_local_law_clean_and_corrupted(tmp_path):
    cfg = _write(tmp_path, SMALL_LOCAL_LAW)
    assert run(["verify-local-law", "--config", cfg, "--out", str(tmp_path / "a"), "--assert"]) == 0
    assert run(["verify-local-law", "--config", cfg, "--out", str(tmp_path / "b"), "--assert",
                "--corrupt-m", "0.5"]) == 2
    # without --assert a threshold failure is reported but not fatal
    assert run(["verify-local-law", "--config", cfg, "--out", str(tmp_path / "c"), "--corrupt-m", "0.5"]) == 0
    with open(tmp_path / "a" / "scan.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["z_re", "z_im", "psi", "max_aniso", "aniso_ratio", "avg_err", "avg_ratio", "n_vec", "seed"]
    svg = (tmp_path / "a" / "scan.svg").read_text()
    assert "Psi" in svg or "<path" in svg


def test_outputs_are_byte_deterministic(tmp_path):
    cfg = _write(tmp_path, SMALL_LOCAL_LAW)
    run(["verify-local-law", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["verify-local-law", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "2"])
    for name in ("scan.csv", "scan.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_manifest_replays_bit_exactly(tmp_path):
    cfg = _write(tmp_path, SMALL_LOCAL_LAW)
    run(["verify-local-law", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "9"])
    manifest = tmp_path / "a" / "manifest-verify-local-law.json"
    first = json.loads(manifest.read_text())
    assert first["seed"] == 9 and first["config"]["seed"] == 9
    run(["verify-local-law", "--config", str(manifest), "--out", str(tmp_path / "b")])
    second = json.loads((tmp_path / "b" / "manifest-verify-local-law.json").read_text())
    assert first["outputs"] == second["outputs"]


def test_unknown_keys_rejected(tmp_path):
    cfg = dict(SMALL_LOCAL_LAW, colour="blue")
    with pytest.raises(ConfigError, match="colour"):
        load_config(_write(tmp_path, cfg))
    bad_model = dict(SMALL_LOCAL_LAW, model={"phi": 0.5, "atoms": [{"s": 1, "weight": 1, "x": 0}]})
    with pytest.raises(ConfigError, match="model/atoms/0"):
        load_config(_write(tmp_path, bad_model))


def test_schema_version_required(tmp_path):
    cfg = {k: v for k, v in SMALL_LOCAL_LAW.items() if k != "schema_version"}
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, cfg))


def test_bad_config_exits_one(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{ not json")
    assert run(["edges", "--config", str(p), "--out", str(tmp_path)]) == 1
    assert "broken.json:1" in capsys.readouterr().err


def test_missing_section_exits_one(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1})
    assert run(["kcoeffs", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert run(["density", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_kcoeffs(capsys, tmp_path):
    assert run(["kcoeffs", "--config", str(CONFIGS / "kcoeffs-third-moment.json"), "--out", str(tmp_path)]) == 0
    K = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert K[:2] == pytest.approx([0.0, 0.0], abs=1e-18)
    assert K[2] == pytest.approx(1000 ** -1.5 / 3, rel=1e-9)


def test_rigidity_and_gap_check_small(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "trials": 2, "seed": 1,
                            "model": {"phi": 0.5, "atoms": [{"s": 1, "weight": 1}], "dims": {"M": 100, "N": 200}}})
    assert run(["rigidity", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert run(["gap-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest-rigidity.json").read_text())
    assert man["checks"][0]["name"] == "rigidity_p99"
    assert "rigidity.csv" in man["outputs"]


def test_edge_stats_small(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1, "trials": 20, "seed": 1,
                            "model": {"phi": 0.5, "atoms": [{"s": 1, "weight": 1}], "dims": {"M": 50, "N": 100}},
                            "compare_distribution": {"kind": "rademacher"}, "edge": {"depth": 2}})
    assert run(["edge-stats", "--config", cfg, "--out", str(tmp_path)]) == 0
    with open(tmp_path / "edge_samples.csv") as fh:
        assert next(csv.reader(fh)) == ["trial", "q1", "q2"]


def test_wigner_small(tmp_path, capsys):
    cfg = _write(tmp_path, {"schema_version": 1, "trials": 2, "seed": 1,
                            "wigner": {"N": 60, "two_atom": [1, -1], "rotate_seed": 2}})
    assert run(["wigner", "--config", cfg, "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest-wigner.json").read_text())
    assert man["summary"]["edges"][1] == pytest.approx(1.5 * 3 ** 0.5, abs=1e-12)


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("COVLAW_OUT", str(tmp_path / "env-out"))
    assert run(["edges", "--config", str(CONFIGS / "marchenko-pastur-quarter.json")]) == 0
    assert (tmp_path / "env-out" / "edges.json").exists()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_validate(name):
    load_config(CONFIGS / name)
