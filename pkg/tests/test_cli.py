"""End-to-end command-line behavior: reports, determinism, exit codes."""

import csv
import json

import jsonschema
import numpy as np
import pytest

from ifsl.cli import REPORT_SCHEMA, main
from ifsl.knowledge import save_features, save_features_csv, save_kb, load_features, load_kb
from ifsl.meta import load_meta

from conftest import make_blob_dataset, make_kb


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-data")
    ds = make_blob_dataset(n_classes=6, per_class=30, dim=16, seed=51)
    kb = make_kb(m=4, dim=16, seed=52)
    save_features(ds, root / "novel.features")
    save_features_csv(ds, root / "novel.csv")
    save_kb(kb, root / "kb.bin")
    return root


EPISODE_ARGS = [
    "--way", "3", "--shot", "1", "--query", "4", "--episodes", "5",
    "--iterations", "10", "--seed", "9",
]


def _episodes(data_dir, out, extra=()):
    return main(
        ["episodes", "--features", str(data_dir / "novel.features"),
         "--kb", str(data_dir / "kb.bin"), "--out", str(out), *EPISODE_ARGS, *extra]
    )


def _doc_sans_meta(path):
    doc = json.loads(path.read_text())
    doc.pop("meta")
    return doc


# --- reports -----------------------------------------------------------------------


def test_episodes_report_validates_against_schema(data_dir, tmp_path):
    out = tmp_path / "report.json"
    assert _episodes(data_dir, out) == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["episodes"] == 5
    assert doc["config"]["command"] == "episodes"
    assert doc["hardness_bins"] == []
    assert 0.0 <= doc["mean_acc"] <= 100.0


def test_hardness_report_validates_and_bins(data_dir, tmp_path):
    out = tmp_path / "report.json"
    code = main(
        ["hardness", "--features", str(data_dir / "novel.features"),
         "--kb", str(data_dir / "kb.bin"), "--out", str(out), "--bins", "4", *EPISODE_ARGS]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert len(doc["hardness_bins"]) == 4
    assert sum(b["count"] for b in doc["hardness_bins"]) == 5 * 3 * 4
    assert doc["config"]["command"] == "hardness"


def test_rerun_is_byte_identical_outside_meta(data_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _episodes(data_dir, a) == 0
    assert _episodes(data_dir, b) == 0
    da, db = _doc_sans_meta(a), _doc_sans_meta(b)
    assert json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)


def test_thread_count_does_not_change_results(data_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _episodes(data_dir, a, ["--threads", "1"]) == 0
    assert _episodes(data_dir, b, ["--threads", "8"]) == 0
    assert _doc_sans_meta(a) == _doc_sans_meta(b)


def test_env_thread_fallback(data_dir, tmp_path, monkeypatch):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    monkeypatch.delenv("IFSL_THREADS", raising=False)
    assert _episodes(data_dir, a) == 0
    monkeypatch.setenv("IFSL_THREADS", "4")
    assert _episodes(data_dir, b) == 0
    assert _doc_sans_meta(a) == _doc_sans_meta(b)
    monkeypatch.setenv("IFSL_THREADS", "lots")
    assert _episodes(data_dir, tmp_path / "c.json") == 2


def test_csv_feature_input(data_dir, tmp_path):
    out_bin, out_csv = tmp_path / "bin.json", tmp_path / "csv.json"
    assert _episodes(data_dir, out_bin) == 0
    code = main(
        ["episodes", "--features", str(data_dir / "novel.csv"),
         "--kb", str(data_dir / "kb.bin"), "--out", str(out_csv), *EPISODE_ARGS]
    )
    assert code == 0
    da, db = _doc_sans_meta(out_bin), _doc_sans_meta(out_csv)
    # same data, same results; only the recorded input path differs
    da["config"].pop("features")
    db["config"].pop("features")
    assert da == db


def test_query_and_bin_csv_dumps(data_dir, tmp_path):
    out = tmp_path / "report.json"
    qcsv = tmp_path / "queries.csv"
    bcsv = tmp_path / "bins.csv"
    code = main(
        ["hardness", "--features", str(data_dir / "novel.features"),
         "--kb", str(data_dir / "kb.bin"), "--out", str(out), "--bins", "4",
         "--query-csv", str(qcsv), "--bins-csv", str(bcsv), *EPISODE_ARGS]
    )
    assert code == 0
    with open(qcsv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["episode", "query", "true", "predicted", "correct", "hardness"]
    assert len(rows) == 1 + 5 * 3 * 4
    with open(bcsv) as fh:
        brows = list(csv.reader(fh))
    assert brows[0] == ["lo", "hi", "count", "acc"]
    assert len(brows) == 1 + 4


def test_adjusted_run_defaults_to_lower_lr(data_dir, tmp_path):
    out = tmp_path / "adj.json"
    assert _episodes(data_dir, out, ["--adjust", "feature", "--strata", "4"]) == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["lr"] == 5e-3
    assert doc["config"]["adjust"] == "feature"
    plain = tmp_path / "plain.json"
    assert _episodes(data_dir, plain) == 0
    assert json.loads(plain.read_text())["config"]["lr"] == 1e-2


def test_stdout_report_when_no_out(data_dir, capsys):
    code = main(
        ["episodes", "--features", str(data_dir / "novel.features"),
         "--kb", str(data_dir / "kb.bin"), *EPISODE_ARGS]
    )
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    jsonschema.validate(doc, REPORT_SCHEMA)


# --- exit codes ---------------------------------------------------------------------


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "0.1.0" in capsys.readouterr().out


def test_config_errors_exit_2(data_dir, tmp_path):
    # stratum count that does not divide the feature dimension
    assert _episodes(data_dir, tmp_path / "x.json", ["--adjust", "feature", "--n", "7"]) == 2
    # degenerate episode shape
    assert _episodes(data_dir, tmp_path / "y.json", ["--way", "1"]) == 2
    # unknown built-in graph
    assert main(["scm", "dsep", "--graph", "loopy", "--x", "X", "--y", "Y"]) == 2


def test_format_errors_exit_3(data_dir, tmp_path):
    bad = tmp_path / "bad.features"
    bad.write_bytes(b"junkjunkjunkjunk")
    code = main(["episodes", "--features", str(bad), "--kb", str(data_dir / "kb.bin"),
                 *EPISODE_ARGS])
    assert code == 3
    badkb = tmp_path / "bad.kb"
    badkb.write_bytes(b"\x00" * 24)
    code = main(["episodes", "--features", str(data_dir / "novel.features"),
                 "--kb", str(badkb), *EPISODE_ARGS])
    assert code == 3


def test_missing_file_exits_1(data_dir, tmp_path):
    code = main(["episodes", "--features", str(tmp_path / "nope.features"),
                 "--kb", str(data_dir / "kb.bin"), *EPISODE_ARGS])
    assert code == 1


def test_argparse_rejection_exits_2(data_dir):
    assert main(["episodes", "--features", "x"]) == 2  # --kb missing
    assert main(["definitely-not-a-command"]) == 2


# --- scm queries -------------------------------------------------------------------


def test_scm_dsep_verdicts(tmp_path, capsys):
    out = tmp_path / "q.json"
    assert main(["scm", "dsep", "--x", "X", "--y", "Y", "--out", str(out)]) == 0
    assert "NOT d-separated" in capsys.readouterr().out
    doc = json.loads(out.read_text())
    assert doc["result"] is False
    assert doc["query"] == {"graph": "fsl", "check": "dsep", "x": ["X"], "y": ["Y"], "z": []}

    assert main(["scm", "dsep", "--x", "D", "--y", "Y", "--z", "X,C", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["result"] is True
    assert "are d-separated" in capsys.readouterr().out


def test_scm_iv_verdicts(tmp_path, capsys):
    out = tmp_path / "q.json"
    args = ["--instrument", "I", "--treatment", "X", "--outcome", "Y", "--out", str(out)]
    assert main(["scm", "iv", "--graph", "msl-sampling", *args]) == 0
    assert json.loads(out.read_text())["result"] is True
    assert "is an instrument" in capsys.readouterr().out

    assert main(["scm", "iv", "--graph", "fsl-sampling", *args]) == 0
    assert json.loads(out.read_text())["result"] is False
    assert "is NOT an instrument" in capsys.readouterr().out


def test_scm_rule_verdicts(tmp_path, capsys):
    out = tmp_path / "q.json"
    assert main(["scm", "rule", "--rule", "2", "--y", "Y", "--z", "X", "--w", "D",
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["result"] is True
    assert "condition holds" in capsys.readouterr().out

    assert main(["scm", "rule", "--rule", "1", "--y", "Y", "--z", "X", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["result"] is False
    assert "does NOT hold" in capsys.readouterr().out


def test_scm_backdoor_verdicts(tmp_path, capsys):
    out = tmp_path / "q.json"
    common = ["--treatment", "X", "--outcome", "Y", "--out", str(out)]
    assert main(["scm", "backdoor", "--z", "D", *common]) == 0
    assert json.loads(out.read_text())["result"] is True
    assert "is backdoor-admissible" in capsys.readouterr().out

    assert main(["scm", "backdoor", *common]) == 0
    assert json.loads(out.read_text())["result"] is False


def test_scm_graph_file_override(tmp_path, capsys):
    gpath = tmp_path / "chain.json"
    gpath.write_text(json.dumps({"nodes": ["A", "B", "C"], "edges": [["A", "B"], ["B", "C"]]}))
    out = tmp_path / "q.json"
    assert main(["scm", "dsep", "--graph-file", str(gpath), "--x", "A", "--y", "C",
                 "--z", "B", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["result"] is True
    assert doc["query"]["graph"] == str(gpath)
    capsys.readouterr()


# --- synth -------------------------------------------------------------------------


SYNTH_ARGS = [
    "--dim", "16", "--pretrain-classes", "3", "--novel-classes", "4",
    "--conf-strata", "2", "--samples-per-class", "40", "--episodes", "6",
    "--way", "3", "--shot", "1", "--query", "5", "--iterations", "5",
    "--strata", "4", "--bins", "3", "--seed", "3",
]


def test_synth_writes_artifacts_and_report(tmp_path, capsys):
    outdir = tmp_path / "gen"
    report = tmp_path / "synth-report.json"
    code = main(["synth", "--out-dir", str(outdir), "--out", str(report), *SYNTH_ARGS])
    assert code == 0
    pretrain = load_features(outdir / "pretrain.features")
    novel = load_features(outdir / "novel.features")
    kb = load_kb(outdir / "kb.bin")
    assert pretrain.n_classes == 3 and pretrain.dim == 16
    assert novel.n_classes == 4 and novel.n_samples == 4 * 40
    assert kb.m == 3 and kb.dim == 16

    sidecar = json.loads((outdir / "synth.json").read_text())
    assert sidecar["config"]["strata"] == 2
    assert np.asarray(sidecar["class_dirs"]).shape == (7, 16)
    assert sidecar["novel_strata"] == (list(np.arange(40) % 2) * 4)

    doc = json.loads(report.read_text())
    assert set(doc) == {"adjusted", "baseline", "config", "gap", "gap_ci95", "meta"}
    for arm in ("baseline", "adjusted"):
        assert "meta" not in doc[arm]
        assert len(doc[arm]["hardness_bins"]) == 3
        assert doc[arm]["episodes"] == 6
    assert doc["baseline"]["config"]["adjust"] == "none"
    assert doc["adjusted"]["config"]["adjust"] == "combined"
    summary = capsys.readouterr().out
    assert "baseline=" in summary and "gap=" in summary


def test_synth_rerun_identical_outside_meta(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["synth", "--out-dir", str(tmp_path / "g1"), "--out", str(a), *SYNTH_ARGS]) == 0
    assert main(["synth", "--out-dir", str(tmp_path / "g2"), "--out", str(b), *SYNTH_ARGS]) == 0
    da, db = _doc_sans_meta(a), _doc_sans_meta(b)
    assert json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)
    # the generated binaries are byte-identical too
    for name in ("pretrain.features", "novel.features", "kb.bin", "synth.json"):
        assert (tmp_path / "g1" / name).read_bytes() == (tmp_path / "g2" / name).read_bytes()


# --- meta --------------------------------------------------------------------------


def test_meta_command_trains_and_serializes(data_dir, tmp_path):
    report = tmp_path / "meta.json"
    blob = tmp_path / "init.meta"
    code = main(
        ["meta", "--features", str(data_dir / "novel.features"), "--out", str(report),
         "--out-init", str(blob), "--way", "3", "--shot", "1", "--query", "4",
         "--tasks", "30", "--eval-tasks", "20", "--inner-steps", "5", "--seed", "4"]
    )
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["episodes"] == 20
    assert set(doc) >= {"mean_acc", "zero_mean_acc", "gap", "ci95", "zero_ci95"}
    assert doc["gap"] == pytest.approx(doc["mean_acc"] - doc["zero_mean_acc"], abs=1e-9)
    mi = load_meta(blob)
    assert mi.theta0[0].W.shape == (3, 16)
    assert mi.tasks == 30 and mi.inner_steps == 5


def test_meta_requires_kb_for_class_adjustment(data_dir, tmp_path):
    code = main(
        ["meta", "--features", str(data_dir / "novel.features"),
         "--adjust", "class", "--tasks", "1", "--eval-tasks", "1"]
    )
    assert code == 2
