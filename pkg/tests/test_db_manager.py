import pytest

from utils.db_manager import DBManager


def _run(**overrides):
    run = {
        "experiment": "rps4",
        "algorithm": "aggfp2t",
        "seed": 0,
        "steps": 1000,
        "delta": 0.1,
        "final_ne_distance": 0.5,
        "final_q_error": 3.0,
        "manifest_path": "results/manifest.txt",
    }
    run.update(overrides)
    return run


def test_upsert_and_list(tmp_path):
    db = DBManager(str(tmp_path / "runs.db"))
    db.upsert_run(_run(seed=1))
    db.upsert_run(_run(seed=0))
    db.upsert_run(_run(algorithm="indq", final_q_error=None))
    runs = db.list_runs()
    assert [(r["algorithm"], r["seed"]) for r in runs] == [("aggfp2t", 0), ("aggfp2t", 1), ("indq", 0)]
    assert runs[2]["final_q_error"] is None
    assert runs[0]["updated_at"] is not None


def test_upsert_replaces_existing_run(tmp_path):
    db = DBManager(str(tmp_path / "runs.db"))
    db.upsert_run(_run(final_ne_distance=0.5))
    db.upsert_run(_run(final_ne_distance=0.25, steps=2000))
    runs = db.list_runs()
    assert len(runs) == 1
    assert runs[0]["final_ne_distance"] == 0.25
    assert runs[0]["steps"] == 2000


def test_filter_and_delete_by_experiment(tmp_path):
    db = DBManager(str(tmp_path / "runs.db"))
    db.upsert_run(_run())
    db.upsert_run(_run(experiment="other"))
    assert len(db.list_runs("other")) == 1
    assert db.delete_experiment("other") == 1
    assert [r["experiment"] for r in db.list_runs()] == ["rps4"]


def test_reopen_keeps_records(tmp_path):
    path = str(tmp_path / "runs.db")
    DBManager(path).upsert_run(_run())
    assert len(DBManager(path).list_runs()) == 1


def test_missing_key_fields(tmp_path):
    db = DBManager(str(tmp_path / "runs.db"))
    with pytest.raises(ValueError):
        db.upsert_run(_run(seed=None))
