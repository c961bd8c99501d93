import glob
import json
import os

import pytest

from nextpoi.cli import ABLATION_AXES, MissingArtifactError, ablation_configs, RunConfig, StaleArtifactError, Workspace, build_parser, main
from nextpoi.metrics import EvalReport

from conftest import run_pipeline, write_log


@pytest.fixture
def log_file(tmp_path):
    return write_log(tmp_path / "checkins.tsv")


def only(pattern):
    (path,) = glob.glob(pattern)
    return path


def test_full_pipeline(tmp_path, log_file, capsys):
    ws = tmp_path / "ws"
    assert run_pipeline(log_file, ws) == [0] * 5
    manifest = json.loads((ws / "manifest.json").read_text())
    assert sorted(manifest["stages"]) == ["graphs", "preprocess", "train", "walks"]
    for stage, entry in manifest["stages"].items():
        assert entry["dir"] == f"{stage}-{entry['hash']}"
        assert (ws / entry["dir"] / "DONE").exists()
    assert manifest["stages"]["preprocess"]["users"] == 15
    gdir = ws / manifest["stages"]["graphs"]["dir"]
    assert sorted(os.listdir(gdir)) == ["DONE", "P.txt", "S.txt", "T.txt", "user.txt"]
    tdir = ws / manifest["stages"]["train"]["dir"]
    report = EvalReport.from_text((tdir / "report.json").read_text())
    assert report.n_samples > 0
    assert (tdir / "loss.csv").read_text().startswith("epoch,mean_loss,learning_rate\n")
    assert "Acc@1=" in capsys.readouterr().out

    assert main(["export-attention", "--workspace", str(ws), "--dim", "6", "--epochs", "2", "--seed", "5",
                 "--limit", "3"]) == 0
    rows = (tdir / "attention.tsv").read_text().splitlines()
    assert rows[0] == "sample_id\tlayer_name\tneighbor_id\tcoefficient"
    assert {r.split("\t")[0] for r in rows[1:]} == {"0", "1", "2"}
    assert all(r.split("\t")[2].startswith(("poi", "user")) for r in rows[1:])

    assert main(["baselines", "--workspace", str(ws)]) == 0
    assert "U-TOP:" in capsys.readouterr().out


def test_rerun_is_idempotent_and_reproducible(tmp_path, log_file):
    a, b = tmp_path / "a", tmp_path / "b"
    run_pipeline(log_file, a)
    before = (a / "manifest.json").read_bytes()
    assert run_pipeline(log_file, a) == [0] * 5
    assert (a / "manifest.json").read_bytes() == before
    run_pipeline(log_file, b)
    assert (b / "manifest.json").read_bytes() == before
    for name in ("report.json", "loss.csv", "checkpoint.bin"):
        assert open(only(f"{a}/train-*/{name}"), "rb").read() == open(only(f"{b}/train-*/{name}"), "rb").read()


def test_missing_upstream_stage(tmp_path, log_file, capsys):
    ws = tmp_path / "ws"
    assert run_pipeline(log_file, ws, commands=("preprocess",)) == [0]
    assert run_pipeline(log_file, ws, commands=("train",)) == [2]
    err = capsys.readouterr().err
    assert "nextpoi build-graphs" in err and "missing graphs" in err
    with pytest.raises(MissingArtifactError):
        Workspace(RunConfig(input=None, workspace=str(tmp_path / "empty"))).require("graphs")


def test_stale_artifacts_detected(tmp_path, log_file, capsys):
    ws = tmp_path / "ws"
    run_pipeline(log_file, ws, commands=("preprocess", "build-graphs"))
    assert run_pipeline(log_file, ws, "--sigma", "3", commands=("walk",)) == [2]
    assert "different configuration" in capsys.readouterr().err
    with pytest.raises(StaleArtifactError):
        Workspace(RunConfig(input=None, workspace=str(ws), sigma=3)).require("graphs")


def test_changed_input_gets_new_preprocess_dir(tmp_path, log_file):
    ws = tmp_path / "ws"
    run_pipeline(log_file, ws, commands=("preprocess",))
    other = write_log(tmp_path / "other.tsv", seed=1)
    run_pipeline(other, ws, commands=("preprocess",))
    assert len(glob.glob(f"{ws}/preprocess-*")) == 2


def test_ablate_graphs_axis(tmp_path, log_file):
    ws = tmp_path / "ws"
    run_pipeline(log_file, ws, commands=("preprocess", "build-graphs", "walk"))
    assert main(["ablate", "--workspace", str(ws), "--dim", "4", "--epochs", "1", "--seed", "5",
                 "--axis", "graphs"]) == 0
    out = only(f"{ws}/ablate-*")
    reports = sorted(f for f in os.listdir(out) if f.endswith(".json"))
    assert reports == ["graphs__graphs=P.json", "graphs__graphs=S.json", "graphs__graphs=STP.json",
                       "graphs__graphs=T.json"]
    assert len(open(os.path.join(out, "summary.tsv")).read().splitlines()) == 5


def test_ablation_grid_sizes():
    assert len(ablation_configs(["graphs", "options"])) == 4 + 3
    grid = ablation_configs(["graphs", "options"], full_grid=True)
    assert len(grid) == 4 * 3 and grid[0][2] == {"graphs": ("S",), "options": ("A",)}
    full = ablation_configs(list(ABLATION_AXES), full_grid=True)
    assert len(full) == 3 * 4 * 3 * 2 * 3


def test_parser_flags():
    args = build_parser().parse_args(["train", "--workspace", "w", "--options", "A+RW", "--graphs", "ST",
                                      "--no-explore", "--user", "embed", "--attention", "scalar"])
    assert args.options == ("A", "RW") and args.graphs == ("S", "T") and args.explore is False
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--workspace", "w", "--graphs", "X"])


def test_preprocess_requires_input(tmp_path, capsys):
    assert main(["preprocess", "--workspace", str(tmp_path)]) == 2
    assert "--input" in capsys.readouterr().err
