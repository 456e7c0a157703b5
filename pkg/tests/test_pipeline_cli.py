import json

import pytest

from siamcluster import cli
from siamcluster.clustering import read_assignment_csv, read_dendrogram_json
from siamcluster.errors import ConfigurationError, EvaluationError
from siamcluster.features import SynthConfig, load_dataset, synth_generate, write_dataset
from siamcluster.metrics import MetricReport, read_histogram_csv
from siamcluster.mining import MiningConfig, read_pairs_csv
from siamcluster.model import TrainConfig, load_checkpoint, load_sidecar
from siamcluster.pipeline import PipelineConfig, read_report, run_pipeline

from conftest import make_dataset

FAST = ["--max-epochs", "2", "--hidden-dim", "8", "--subset-size", "40", "--pairs-per-label", "8"]


@pytest.fixture
def files(tmp_path):
    ds = synth_generate(SynthConfig(num_identities=3, tracks_per_identity=5, dim=12, noise_sigma=0.1, seed=2))
    write_dataset(ds, tmp_path / "f.tcf", tmp_path / "t.json")
    return ds, str(tmp_path / "f.tcf"), str(tmp_path / "t.json")


def _run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def _error(err):
    return json.loads(err.strip().splitlines()[-1])


# -- pipeline -----------------------------------------------------------------


def test_base_on_zero_noise_is_perfect(tmp_path):
    ds = synth_generate(SynthConfig(noise_sigma=0.0, seed=1))
    cfg = PipelineConfig("", "", seed=0, method="base", output_dir=str(tmp_path / "out"))
    rep = run_pipeline(cfg, ds)
    assert rep.metric("base").acc == 1.0 and rep.k == 5
    assert "refined" not in rep.metrics and rep.loss_history == []


def test_refined_metrics_present(tmp_path, files):
    ds, f, t = files
    cfg = PipelineConfig(f, t, seed=3, method="tsiam", output_dir=str(tmp_path / "o"),
                         train=TrainConfig(max_epochs=2, hidden_dim=8))
    rep = run_pipeline(cfg)
    assert set(rep.metrics) == {"base", "refined"}
    assert set(rep.metrics["refined"]) == {"track", "frame"}
    assert len(rep.loss_history) == 2
    assert rep.config["train"]["seed"] == 3 and rep.config["mining"]["seed"] == 3
    assert read_report(tmp_path / "o" / "report.json").to_json() == json.loads(json.dumps(rep.to_json()))


def test_report_deterministic_excluding_timings(tmp_path, files):
    ds, f, t = files
    reps = []
    for name in ("a", "b"):
        cfg = PipelineConfig(f, t, seed=5, method="ssiam", output_dir=str(tmp_path / name),
                             mining=MiningConfig(B=40, K=8), train=TrainConfig(max_epochs=2, hidden_dim=8))
        reps.append(run_pipeline(cfg).without_timings())
    reps[0]["config"].pop("output_dir")
    reps[1]["config"].pop("output_dir")
    assert reps[0] == reps[1]


def test_pipeline_errors(tmp_path, files):
    ds, f, t = files
    with pytest.raises(ConfigurationError):
        run_pipeline(PipelineConfig(f, t, seed=0, method="base", k=99, output_dir=str(tmp_path)))
    with pytest.raises(ConfigurationError):
        PipelineConfig(f, t, seed=0, k=1)
    with pytest.raises(ConfigurationError):
        PipelineConfig(f, t, seed=0, method="triplet")
    unlabeled = make_dataset([(0, [0], None), (1, [1], None)])
    with pytest.raises(EvaluationError):
        run_pipeline(PipelineConfig("", "", seed=0, method="base", output_dir=str(tmp_path)), unlabeled)


def test_config_json_round_trip(files):
    _, f, t = files
    cfg = PipelineConfig(f, t, seed=9, method="pseudo_rf", k=3, mining=MiningConfig(B=50, K=5))
    assert PipelineConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_json({**cfg.to_json(), "bogus": 1})


# -- CLI ----------------------------------------------------------------------


def test_cli_run_smoke(tmp_path, files, capsys):
    _, f, t = files
    out = tmp_path / "run"
    code, stdout, _ = _run(capsys, "run", "--method", "ssiam", "--k", 5, "--seed", 7, "--features", f, "--tracks", t,
                           "--output-dir", out, *FAST)
    assert code == 0
    rep = read_report(out / "report.json")
    assert rep.k == 5 and rep.config["method"] == "ssiam"
    assert json.loads(stdout)["output_dir"] == str(out)


def test_cli_run_requires_seed(tmp_path, files, capsys):
    _, f, t = files
    code, _, err = _run(capsys, "run", "--features", f, "--tracks", t, "--output-dir", tmp_path)
    assert code == 2 and _error(err)["error"] == "usage"


def test_cli_run_from_config_file(tmp_path, files, capsys):
    _, f, t = files
    cfg = {"features": f, "tracks": t, "seed": 4, "method": "tsiam", "output_dir": str(tmp_path / "c"),
           "train": {"max_epochs": 2, "hidden_dim": 8}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    code, _, _ = _run(capsys, "run", "--config", tmp_path / "cfg.json", "--max-epochs", 1)
    assert code == 0
    rep = read_report(tmp_path / "c" / "report.json")
    assert rep.config["seed"] == 4 and rep.config["train"]["max_epochs"] == 1 and rep.config["train"]["hidden_dim"] == 8


def test_cli_malformed_config(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    code, _, err = _run(capsys, "run", "--config", tmp_path / "bad.json", "--seed", 1)
    assert code == 2 and _error(err)["error"] == "usage"
    (tmp_path / "bad2.json").write_text(json.dumps({"features": "a", "tracks": "b", "seed": 1, "nope": 2}))
    code, _, err = _run(capsys, "run", "--config", tmp_path / "bad2.json")
    assert code == 2 and _error(err)["error"] == "configuration"


def test_cli_usage_errors(capsys):
    for argv in (["bogus"], ["cluster", "--features", "f", "--tracks", "t", "--out", "o", "--k", "0"],
                 ["train", "--features", "f", "--tracks", "t", "--method", "ssiam", "--out", "m"],
                 ["evaluate", "--tracks", "t", "--assignments", "a", "--unknown-flag"]):
        code, _, err = _run(capsys, *argv)
        assert code == 2
        assert _error(err)["error"] == "usage"


def test_cli_data_errors(tmp_path, capsys):
    (tmp_path / "f.csv").write_text("frame_id,track_id,timestamp,v0\n0,0,0,1.0\n")
    (tmp_path / "t.json").write_text(json.dumps([{"track_id": 0, "frame_ids": [0, 5], "label": "a"}]))
    code, _, err = _run(capsys, "cluster", "--features", tmp_path / "f.csv", "--tracks", tmp_path / "t.json",
                        "--out", tmp_path / "a.csv", "--k", 2)
    assert code == 3 and _error(err)["error"] == "referential_integrity"
    code, _, err = _run(capsys, "cluster", "--features", tmp_path / "missing.tcf", "--tracks", tmp_path / "t.json",
                        "--out", tmp_path / "a.csv")
    assert code == 3


def test_cli_evaluate_fixture(tmp_path, capsys):
    tracks = [{"track_id": i, "frame_ids": [i], "label": lab} for i, lab in enumerate("AABB")]
    (tmp_path / "t.json").write_text(json.dumps(tracks))
    (tmp_path / "a.csv").write_text("track_id,cluster\n0,0\n1,0\n2,0\n3,1\n")
    code, out, _ = _run(capsys, "evaluate", "--tracks", tmp_path / "t.json", "--assignments", tmp_path / "a.csv")
    assert code == 0
    rep = MetricReport.from_json(json.loads(out))
    assert rep.acc == 0.75 and rep.level == "track"


def test_cli_base_run_then_evaluate(tmp_path, files, capsys):
    _, f, t = files
    out = tmp_path / "b"
    assert _run(capsys, "run", "--method", "base", "--seed", 1, "--features", f, "--tracks", t, "--output-dir", out)[0] == 0
    rep = read_report(out / "report.json")
    for level in ("track", "frame"):
        code, stdout, _ = _run(capsys, "evaluate", "--tracks", t, "--assignments", out / "assignment_base.csv",
                               "--level", level, "--out", tmp_path / f"{level}.json")
        assert code == 0
        assert json.loads((tmp_path / f"{level}.json").read_text()) == rep.metrics["base"][level]


def test_cli_every_artifact_round_trips(tmp_path, files, capsys):
    ds, f, t = files
    d = tmp_path
    assert _run(capsys, "synth", "--out-dir", d / "syn", "--seed", 3, "--num-identities", 2, "--tracks-per-identity", 3,
                "--dim", 6)[0] == 0
    syn = load_dataset(d / "syn" / "features.tcf", d / "syn" / "tracks.json")
    assert syn.num_tracks == 6 and syn.dim == 6

    for method in ("tsiam", "ssiam", "pseudo-rf"):
        assert _run(capsys, "mine-pairs", "--features", f, "--tracks", t, "--method", method, "--seed", 1,
                    "--out", d / f"{method}.csv", "--subset-size", 30, "--pairs-per-label", 5)[0] == 0
        pairs = read_pairs_csv(d / f"{method}.csv")
        assert len(pairs) > 0 and set(pairs.y) <= {0, 1}
        assert set(pairs.anchors) <= set(ds.frame_ids.tolist())

    assert _run(capsys, "train", "--features", f, "--tracks", t, "--method", "tsiam", "--seed", 2,
                "--out", d / "m.tcm", *FAST)[0] == 0
    params = load_checkpoint(d / "m.tcm")
    side = load_sidecar(d / "m.tcm")
    assert params.d1 == 8 and side["method"] == "tsiam" and len(side["loss_history"]) == 2

    assert _run(capsys, "cluster", "--features", f, "--tracks", t, "--checkpoint", d / "m.tcm", "--k", 3,
                "--out", d / "a.csv", "--dendrogram", d / "dd.json")[0] == 0
    a = read_assignment_csv(d / "a.csv")
    assert a.k == 3 and len(a.item_ids) == ds.num_tracks
    assert read_dendrogram_json(d / "dd.json").n == ds.num_tracks

    assert _run(capsys, "histogram", "--features", f, "--tracks", t, "--bins", 20, "--out", d / "h.csv")[0] == 0
    pos, neg, edges = read_histogram_csv(d / "h.csv")
    n = ds.num_tracks
    assert len(edges) == 21 and pos.sum() + neg.sum() == n * (n - 1) // 2


def test_cli_run_deterministic(tmp_path, files, capsys):
    _, f, t = files
    for name in ("x", "y"):
        assert _run(capsys, "run", "--method", "pseudo-rf", "--seed", 11, "--features", f, "--tracks", t,
                    "--output-dir", tmp_path / name, *FAST)[0] == 0
    for art in ("model.tcm", "model.tcm.json", "assignment_refined.csv", "assignment_base.csv", "histogram_refined.csv"):
        assert (tmp_path / "x" / art).read_bytes() == (tmp_path / "y" / art).read_bytes()
    a = read_report(tmp_path / "x" / "report.json")
    b = read_report(tmp_path / "y" / "report.json")
    assert a.metrics == b.metrics and a.loss_history == b.loss_history
