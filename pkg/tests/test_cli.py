import json

import pytest

from mempredict import cli
from mempredict.pipeline import PipelineConfig, build_model_set, persist_model_set
from mempredict.workload import read_trace_file

from test_pipeline import quick_trainer

PREDICT = ["-q", "normal", "-n", "4", "-W", "60", "-u", "user001", "-g", "grp00",
           "--submit-time", "1500000000", "--", "./app01", "-i", "input.dat"]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def models_dir(small_trace, tmp_path_factory):
    jobs = sorted(small_trace[:600], key=lambda j: j.finish_time)
    cfg = PipelineConfig(window_size=600, train_size=540, valid_size=60, grid_profile="fast")
    ms = build_model_set(jobs, cfg, as_of=jobs[-1].finish_time + 1, trainer=quick_trainer)
    path = tmp_path_factory.mktemp("models")
    persist_model_set(ms, path)
    return path


def test_generate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run(["generate", "--jobs", "50", "--seed", "7", "--out", str(a),
                "--planted-out", str(tmp_path / "p.json")], capsys)[0] == 0
    assert run(["generate", "--jobs", "50", "--seed", "7", "--out", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_trace_file(a)) == 50
    assert len(json.loads((tmp_path / "p.json").read_text())["base_bins"]) == 20


def test_predict_with_model_store(models_dir, capsys):
    code, out, _ = run(["predict", "--models", str(models_dir), *PREDICT], capsys)
    assert code == 0
    line = out.strip()
    assert line.startswith("predicted_bin=") and line.endswith("tier=model")
    k = int(line.split()[0].split("=")[1])
    assert f"predicted_mem_mib={(k + 1) * 512}" in line


def test_predict_env_and_explain(models_dir, capsys, monkeypatch):
    monkeypatch.setenv(cli.MODELS_ENV, str(models_dir))
    before = sorted(p.name for p in models_dir.rglob("*"))
    code, out, _ = run(["predict", "--explain", *PREDICT], capsys)
    assert code == 0
    assert out.count("rank=") == 4
    assert sorted(p.name for p in models_dir.rglob("*")) == before


def test_predict_usage_errors(capsys, models_dir):
    code, _, err = run(["predict", "--models", str(models_dir), "-q", "normal", "./sim"], capsys)
    assert code == 2 and "usage" in err
    code, _, _ = run(["predict", "--models", str(models_dir), "-n", "many", "--", "./sim"], capsys)
    assert code == 2


def test_predict_help_lists_flags(capsys):
    code, out, _ = run(["predict", "--help"], capsys)
    assert code == 0
    for flag in ("-q", "-n", "-W", "-P", "-cwd", "-R", "-u", "-g", "--submit-time", "--models",
                 "--explain", "--allow-cold"):
        assert flag in out


def test_predict_cold_and_unreadable_store(tmp_path, capsys):
    code, out, _ = run(["predict", "--models", str(tmp_path), "--allow-cold", *PREDICT], capsys)
    assert code == 0
    assert out.strip() == "predicted_bin=1 predicted_mem_mib=1024 tier=default"
    assert run(["predict", "--models", str(tmp_path), *PREDICT], capsys)[0] == 3
    (tmp_path / "snapshots").mkdir()
    (tmp_path / "snapshots" / "s").mkdir()
    (tmp_path / "current").symlink_to("snapshots/s")
    assert run(["predict", "--models", str(tmp_path), *PREDICT], capsys)[0] == 3


def test_cold_mode_tier_from_job_store(tmp_path, small_trace, capsys):
    trace = tmp_path / "t.jsonl"
    from mempredict.workload import write_trace_file

    write_trace_file(small_trace[:30], trace)
    store = tmp_path / "store"
    assert run(["ingest", "--trace", str(trace), "--store", str(store)], capsys)[0] == 0
    code, out, _ = run(["predict", "--models", str(tmp_path / "none"), "--store", str(store),
                        "--allow-cold", *PREDICT], capsys)
    assert code == 0 and out.strip().endswith("tier=mode")


def test_ingest_merges_and_train_needs_history(tmp_path, small_trace, capsys):
    from mempredict.workload import write_trace_file

    write_trace_file(small_trace[:20], tmp_path / "a.jsonl")
    write_trace_file(small_trace[10:40], tmp_path / "b.jsonl")
    store = tmp_path / "store"
    for name in ("a.jsonl", "b.jsonl"):
        assert run(["ingest", "--trace", str(tmp_path / name), "--store", str(store)], capsys)[0] == 0
    assert len(read_trace_file(store / "jobs.jsonl")) == 40
    code = run(["train", "--store", str(store), "--models", str(tmp_path / "m")], capsys)[0]
    assert code == 4


def test_ingest_conflict_is_a_data_error(tmp_path, small_trace, capsys):
    import dataclasses

    from mempredict.workload import write_trace_file

    write_trace_file(small_trace[:5], tmp_path / "a.jsonl")
    changed = [dataclasses.replace(small_trace[0], queue="other")]
    write_trace_file(changed, tmp_path / "b.jsonl")
    store = tmp_path / "store"
    run(["ingest", "--trace", str(tmp_path / "a.jsonl"), "--store", str(store)], capsys)
    assert run(["ingest", "--trace", str(tmp_path / "b.jsonl"), "--store", str(store)], capsys)[0] == 5


def test_train_and_predict_end_to_end(tmp_path, small_trace, capsys):
    from mempredict.workload import write_trace_file

    write_trace_file(small_trace[:700], tmp_path / "t.jsonl")
    cfg = PipelineConfig(window_size=600, train_size=540, valid_size=60, grid_profile="fast").to_dict()
    cfg["retrain_every"] = 100
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    store, models = tmp_path / "store", tmp_path / "models"
    run(["ingest", "--trace", str(tmp_path / "t.jsonl"), "--store", str(store)], capsys)
    code, out, _ = run(["train", "--store", str(store), "--models", str(models),
                        "--config", str(tmp_path / "c.json")], capsys)
    assert code == 0 and len(out.strip().splitlines()) == 7
    assert run(["predict", "--models", str(models), *PREDICT], capsys)[0] == 0


def test_evaluate_short_trace_and_bad_input(tmp_path, small_trace, capsys):
    from mempredict.workload import write_trace_file

    write_trace_file(small_trace[:100], tmp_path / "t.jsonl")
    assert run(["evaluate", "--trace", str(tmp_path / "t.jsonl"), "--out", str(tmp_path / "r")],
               capsys)[0] == 4
    (tmp_path / "bad.jsonl").write_text("{nope\n")
    assert run(["evaluate", "--trace", str(tmp_path / "bad.jsonl"), "--out", str(tmp_path / "r")],
               capsys)[0] == 5
    assert run(["evaluate", "--trace", str(tmp_path / "t.jsonl")], capsys)[0] == 2
    assert run(["evaluate", "--trace", str(tmp_path / "t.jsonl"), "--out", "x", "--profile", "huge"],
               capsys)[0] == 2
    assert run([], capsys)[0] == 2


def test_evaluate_small_run(tmp_path, small_trace, capsys, monkeypatch):
    from mempredict import pipeline
    from mempredict.workload import write_trace_file

    monkeypatch.setattr(pipeline, "default_trainer", quick_trainer)
    write_trace_file(small_trace[:1300], tmp_path / "t.jsonl")
    cfg = PipelineConfig(window_size=400, train_size=360, valid_size=40, grid_profile="fast")
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    code, out, _ = run(["evaluate", "--trace", str(tmp_path / "t.jsonl"), "--out", str(tmp_path / "r"),
                        "--config", str(tmp_path / "c.json"), "--segments", "3", "--segment-size", "300",
                        "--warmup", "400", "--top-n", "3"], capsys)
    assert code == 0
    for name in ("validation.csv", "test.csv", "topn.csv", "poll.csv"):
        assert (tmp_path / "r" / name).exists()
    assert out.startswith("segment,mode,poll_validation,poll_perfect")
