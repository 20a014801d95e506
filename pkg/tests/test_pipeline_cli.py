import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from salbci.cli import main
from salbci.errors import ConfigError
from salbci.pipeline import load_config


def _digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(root), "--seed", "3", "--n-videos", "40"]) == 0
    return root


def test_run_writes_all_artifacts(sim, tmp_path):
    before = _digest(sim)
    out = tmp_path / "out"
    assert main(["run", "--manifest", str(sim / "manifest.json"), "--out", str(out), "--plot"]) == 0
    names = {p.name for p in out.iterdir()}
    for task in ("valence", "basic_emotion"):
        for stem in (f"fused_bci_{task}.json", f"fused_salience_{task}.json", f"report_bci_{task}.json",
                     f"report_salience_{task}.json", f"report_face_only_{task}.json", f"report_{task}.txt",
                     f"salience_analysis_{task}.csv", f"salience_analysis_{task}.png"):
            assert stem in names
    assert {"expressivity.csv", "summary.json", "summary.txt", "human_validation.json"} <= names
    summary = json.loads((out / "summary.json").read_text())
    fp = summary["config_fingerprint"]
    assert len(fp) == 16
    assert (out / "expressivity.csv").read_text().startswith(f"# config_fingerprint={fp}")
    assert json.loads((out / "report_salience_valence.json").read_text())["config_fingerprint"] == fp
    assert _digest(sim) == before


def test_run_is_byte_deterministic(sim, tmp_path):
    digests = []
    for name in ("a", "b"):
        assert main(["run", "--manifest", str(sim / "manifest.json"), "--out", str(tmp_path / name), "--plot"]) == 0
        digests.append(_digest(tmp_path / name))
    assert digests[0] == digests[1]


def test_corrupt_feature_file_exits_3(sim, tmp_path, capsys):
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(sim, copy)
    victim = sorted((copy).rglob("*.csv"))[0]
    lines = victim.read_text().splitlines()
    lines[3] = lines[3].replace(",", ";", 2)
    victim.write_text("\n".join(lines) + "\n")
    assert main(["validate", "--manifest", str(copy / "manifest.json")]) == 3
    assert victim.name in capsys.readouterr().err


def test_missing_manifest_is_config_error(tmp_path):
    assert main(["run", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--out", str(tmp_path / "o")]) == 2


def test_ini_config_with_flag_override(sim, tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text(
        f"[pipeline]\nmanifest = {sim / 'manifest.json'}\nout = results\ntasks = valence\n"
        "[fusion]\nepsilon = 1e-5\n[metrics]\ncloseness = l1\npearson_mode = per_video\n"
    )
    cfg = load_config(ini, {"fusion.epsilon": "1e-4", "pipeline.out": None})
    assert cfg.fusion.epsilon == 1e-4
    assert cfg.tasks == ("valence",)
    assert cfg.out_dir == tmp_path / "results"
    assert cfg.pearson_mode == "per_video"
    assert cfg.closeness_metric == "l1"
    ini.write_text(f"[pipeline]\nmanifest = {sim / 'manifest.json'}\nout = r\n[metrics]\nclosesness = l1\n")
    with pytest.raises(ConfigError, match="closesness"):
        load_config(ini)
    ini.write_text(f"[pipeline]\nmanifest = {sim / 'manifest.json'}\nout = r\n[metrics]\npearson_mode = sideways\n")
    with pytest.raises(ConfigError):
        load_config(ini)
    assert main(["run", "--config", str(ini)]) == 2
    assert main(["run", "--config", str(tmp_path / "absent.ini")]) == 2


def test_fingerprint_tracks_config(sim, tmp_path):
    a = load_config(None, {"pipeline.manifest": sim / "manifest.json", "pipeline.out": tmp_path / "x"})
    b = load_config(None, {"pipeline.manifest": sim / "manifest.json", "pipeline.out": tmp_path / "y"})
    c = load_config(None, {"pipeline.manifest": sim / "manifest.json", "pipeline.out": tmp_path / "x", "fusion.epsilon": 1e-3})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_subcommands_chain(sim, tmp_path):
    m = str(sim / "manifest.json")
    expr = tmp_path / "expr.csv"
    assert main(["expressivity", "--manifest", m, "--out", str(expr), "--jobs", "2"]) == 0
    header = expr.read_text().splitlines()
    assert header[0].startswith("# config_fingerprint=")

    from salbci.ingest import load_dataset

    records = load_dataset(m)
    face = {r.video_id: r.distribution("context_free", "valence").to_dict() for r in records}
    ctx = {r.video_id: r.distribution("context_only", "valence").to_dict() for r in records}
    (tmp_path / "face.json").write_text(json.dumps(face))
    (tmp_path / "ctx.json").write_text(json.dumps(ctx))
    common = ["--face", str(tmp_path / "face.json"), "--context", str(tmp_path / "ctx.json")]
    assert main(["fuse", *common, "--weights", str(expr), "--out", str(tmp_path / "sal.json")]) == 0
    assert main(["fuse", *common, "--no-salience", "--out", str(tmp_path / "bci.json")]) == 0
    assert main(["fuse", *common, "--out", str(tmp_path / "x.json")]) == 2
    assert main(["fuse", *common, "--no-salience", "--prior", "empirical", "--out", str(tmp_path / "x.json")]) == 2
    assert main(["fuse", *common, "--no-salience", "--prior", "empirical", "--manifest", m,
                 "--out", str(tmp_path / "emp.json")]) == 0
    sal = json.loads((tmp_path / "sal.json").read_text())
    assert sal["variant"] == "salience" and set(sal["distributions"]) == set(face)
    for d in sal["distributions"].values():
        assert abs(sum(d["probs"]) - 1.0) < 1e-9

    for variant in ("sal", "bci"):
        assert main(["evaluate", "--predictions", str(tmp_path / f"{variant}.json"), "--manifest", m,
                     "--task", "valence", "--out", str(tmp_path / f"rep_{variant}.json"),
                     "--table", str(tmp_path / f"rep_{variant}.txt")]) == 0
    rs = json.loads((tmp_path / "rep_sal.json").read_text())
    rb = json.loads((tmp_path / "rep_bci.json").read_text())
    assert rs["aggregate"]["mse"] < rb["aggregate"]["mse"]
    assert "RMSE" in (tmp_path / "rep_sal.txt").read_text().upper()

    assert main(["analyze-salience", "--manifest", m, "--task", "basic_emotion", "--expressivity", str(expr),
                 "--out", str(tmp_path / "an.csv"), "--plot", str(tmp_path / "an.png")]) == 0
    assert (tmp_path / "an.png").read_bytes()[:4] == b"\x89PNG"
    rows = (tmp_path / "an.csv").read_text().splitlines()
    assert rows[0].startswith("# config_fingerprint=") and len(rows) >= 5


def test_query_context_mock_and_cache(tmp_path):
    table = tmp_path / "mock.json"
    table.write_text(json.dumps({"DD": {"valence": ["v1", "v2"]}}))
    cache = tmp_path / "cache"
    args = ["query-context", "--outcome", "DD", "--task", "valence", "--mock", str(table),
            "--cache-dir", str(cache)]
    assert main([*args, "--out", str(tmp_path / "a.json")]) == 0
    a = json.loads((tmp_path / "a.json").read_text())
    assert a["space"] == ["v1", "v2", "v3", "v4", "v5"]
    assert a["probs"] == pytest.approx([0.5, 0.5, 0.0, 0.0, 0.0])
    cached = sorted(p.name for p in cache.rglob("*") if p.is_file())
    assert len(cached) == 20
    assert main([*args, "--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert sorted(p.name for p in cache.rglob("*") if p.is_file()) == cached
    # a different table is a different backend, so it must not reuse the cache
    table.write_text(json.dumps({"DD": {"valence": ["v5"]}}))
    assert main([*args, "--out", str(tmp_path / "c.json")]) == 0
    assert json.loads((tmp_path / "c.json").read_text())["probs"] == [0.0, 0.0, 0.0, 0.0, 1.0]
    assert main(["query-context", "--outcome", "CC", "--task", "valence", "--mock", str(table)]) == 4
    assert main(["query-context", "--outcome", "CC", "--task", "valence"]) == 2


def test_run_with_llm_context(sim, tmp_path):
    table = tmp_path / "mock.json"
    table.write_text(json.dumps({"distribution": {"v2": 0.5, "v4": 0.5}, "seed": 1}))
    out = tmp_path / "o"
    assert main(["run", "--manifest", str(sim / "manifest.json"), "--out", str(out), "--task", "valence",
                 "--context-source", "llm", "--mock", str(table), "--cache-dir", str(tmp_path / "c")]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["context_source"] == "llm"
    assert np.isfinite(summary["tasks"]["valence"]["variants"]["salience"]["mse"])


def test_console_script_logs_key_value():
    proc = subprocess.run([sys.executable, "-m", "salbci.cli", "run", "--out", "/nonexistent/x"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "level=ERROR" in proc.stderr and "msg=" in proc.stderr
    assert proc.stdout == ""
