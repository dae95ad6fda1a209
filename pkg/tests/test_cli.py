import json
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import four_structure_spec
from srgseg import __version__
from srgseg.cli import main
from srgseg.graph import load_graph
from srgseg.phantom import write_phantom_spec
from srgseg.volume import load_volume


@pytest.fixture
def work(tmp_path):
    """Spec file, one training phantom, one shifted test phantom and a model."""
    spec = four_structure_spec((16, 16, 16), stddev=2.0, background_stddev=2.0, seed=4)
    write_phantom_spec(spec, tmp_path / "ph.ini")
    d = str(tmp_path)
    assert main(["phantom", "generate", "--spec", f"{d}/ph.ini", "--out-prefix", f"{d}/train"]) == 0
    assert main(["phantom", "generate", "--spec", f"{d}/ph.ini", "--out-prefix", f"{d}/test",
                 "--seed", "11", "--shift", "1:1,0,0"]) == 0
    assert main(["build-model", "--scalar", f"{d}/train_scalar.srgvol", "--labels", f"{d}/train_labels.srgvol",
                 "--out", f"{d}/model.srg"]) == 0
    return tmp_path


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "srgseg", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout


def test_phantom_outputs(work):
    s = load_volume(work / "test_scalar.srgvol", "scalar")
    t = load_volume(work / "test_labels.srgvol", "label")
    assert s.dims == t.dims == (16, 16, 16)
    assert set(np.unique(t.data)) == {0, 1, 2, 3, 4}


def test_phantom_nifti(work):
    d = str(work)
    assert main(["phantom", "generate", "--spec", f"{d}/ph.ini", "--out-prefix", f"{d}/n", "--format", "nifti"]) == 0
    a = load_volume(work / "n_labels.nii", "label")
    b = load_volume(work / "train_labels.srgvol", "label")
    assert np.array_equal(a.data, b.data)


def test_build_model(work, capsys):
    stats = load_graph(work / "model.srg")
    assert stats.mean.labels == (0, 1, 2, 3, 4)
    assert stats.k == 1
    d = str(work)
    assert main(["build-model", "--scalar", f"{d}/train_scalar.srgvol", "--labels", f"{d}/train_labels.srgvol",
                 "--no-background", "--out", f"{d}/m2.srg"]) == 0
    assert load_graph(work / "m2.srg").mean.labels == (1, 2, 3, 4)


def test_superseg_and_match(work, capsys):
    d = str(work)
    assert main(["superseg", "--in", f"{d}/test_scalar.srgvol", "--min-depth", "8", "--out", f"{d}/sup.srgvol"]) == 0
    n = int(capsys.readouterr().out.strip().split("=")[1])
    assert load_volume(work / "sup.srgvol", "label").data.max() == n
    assert main(["match", "--model", f"{d}/model.srg", "--scalar", f"{d}/test_scalar.srgvol",
                 "--super", f"{d}/sup.srgvol", "--out", f"{d}/seg.srgvol", "--report", f"{d}/rep.txt"]) == 0
    assert capsys.readouterr().out.startswith("cost=")
    assert (work / "rep.txt").read_text().strip()
    assert main(["eval", "--pred", f"{d}/seg.srgvol", "--truth", f"{d}/test_labels.srgvol", "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert 0.0 <= rep["macro_dice"] <= 1.0
    assert [s["label"] for s in rep["structures"]] == [1, 2, 3, 4]


def test_match_exhaustive_cap(work):
    d = str(work)
    main(["superseg", "--in", f"{d}/test_scalar.srgvol", "--out", f"{d}/sup.srgvol"])
    code = main(["match", "--model", f"{d}/model.srg", "--scalar", f"{d}/test_scalar.srgvol",
                 "--super", f"{d}/sup.srgvol", "--out", f"{d}/seg.srgvol", "--exhaustive", "--cap", "10"])
    assert code == 5
    assert not (work / "seg.srgvol").exists()


def test_sweep_table_and_json(work, capsys):
    d = str(work)
    main(["superseg", "--in", f"{d}/test_scalar.srgvol", "--min-depth", "8", "--out", f"{d}/sup.srgvol"])
    capsys.readouterr()
    args = ["sweep", "--model", f"{d}/model.srg", "--scalar", f"{d}/test_scalar.srgvol", "--super", f"{d}/sup.srgvol"]
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 11 and lines[-1].startswith("plateau")
    assert main(args + ["--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert len(data["rows"]) == 9
    (work / "p.txt").write_text("# centroid intensity\n0.2 0.8\n0.9, 0.1\n")
    assert main(args + ["--profiles", f"{d}/p.txt", "--out", f"{d}/sw.tsv"]) == 0
    assert len((work / "sw.tsv").read_text().splitlines()) == 4


def test_render(work):
    d = str(work)
    assert main(["render", "--scalar", f"{d}/test_scalar.srgvol", "--labels", f"{d}/test_labels.srgvol",
                 "--index", "8", "--out", f"{d}/o.png"]) == 0
    assert (work / "o.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_missing_input_exit_2(tmp_path, capsys):
    d = str(tmp_path)
    assert main(["superseg", "--in", f"{d}/nope.srgvol", "--out", f"{d}/o.srgvol"]) == 2
    assert main(["pipeline", "--model", f"{d}/m.srg", "--scalar", f"{d}/nope.srgvol", "--output", f"{d}/run"]) == 2
    assert "not found" in capsys.readouterr().err
    assert sorted(os.listdir(tmp_path)) == []


def test_corrupt_input_exit_3(tmp_path):
    (tmp_path / "bad.srgvol").write_bytes(b"garbage")
    assert main(["superseg", "--in", str(tmp_path / "bad.srgvol"), "--out", str(tmp_path / "o.srgvol")]) == 3


def test_geometry_mismatch_exit_4(work):
    d = str(work)
    spec = four_structure_spec((8, 8, 8))
    write_phantom_spec(spec, work / "small.ini")
    main(["phantom", "generate", "--spec", f"{d}/small.ini", "--out-prefix", f"{d}/small"])
    assert main(["eval", "--pred", f"{d}/small_labels.srgvol", "--truth", f"{d}/test_labels.srgvol"]) == 4


def test_pipeline_equals_chained_commands(work, capsys):
    d = str(work)
    (work / "run.ini").write_text(
        "[pipeline]\n"
        f"model = {d}/model.srg\nscalar = {d}/test_scalar.srgvol\ntruth = {d}/test_labels.srgvol\n"
        f"output = {d}/run\n[superseg]\nmin_depth = 8\n"
    )
    assert main(["pipeline", "--config", f"{d}/run.ini"]) == 0
    capsys.readouterr()
    main(["superseg", "--in", f"{d}/test_scalar.srgvol", "--min-depth", "8", "--out", f"{d}/sup.srgvol"])
    main(["match", "--model", f"{d}/model.srg", "--scalar", f"{d}/test_scalar.srgvol",
          "--super", f"{d}/sup.srgvol", "--out", f"{d}/seg.srgvol", "--report", f"{d}/rep.txt"])
    main(["eval", "--pred", f"{d}/seg.srgvol", "--truth", f"{d}/test_labels.srgvol", "--out", f"{d}/eval.txt"])
    run = work / "run"
    assert (run / "super.srgvol").read_bytes() == (work / "sup.srgvol").read_bytes()
    assert (run / "seg.srgvol").read_bytes() == (work / "seg.srgvol").read_bytes()
    assert (run / "report.txt").read_text() == (work / "rep.txt").read_text()
    assert (run / "eval.txt").read_text() == (work / "eval.txt").read_text()
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["outputs"] == ["eval.txt", "manifest.json", "report.txt", "seg.srgvol", "super.srgvol"]
    assert manifest["parameters"]["min_depth"] == 8.0


def test_pipeline_rerun_byte_identical(work):
    d = str(work)
    args = ["pipeline", "--model", f"{d}/model.srg", "--scalar", f"{d}/test_scalar.srgvol",
            "--truth", f"{d}/test_labels.srgvol", "--min-depth", "8"]
    assert main(args + ["--output", f"{d}/a"]) == 0
    first = {f: (work / "a" / f).read_bytes() for f in os.listdir(work / "a")}
    assert main(args + ["--output", f"{d}/a"]) == 0
    second = {f: (work / "a" / f).read_bytes() for f in os.listdir(work / "a")}
    assert first == second


def test_pipeline_flag_overrides_config(work):
    d = str(work)
    (work / "run.ini").write_text(
        f"[pipeline]\nmodel = {d}/model.srg\nscalar = {d}/test_scalar.srgvol\noutput = {d}/run\n"
        "[weights]\nalpha = 0.1\n"
    )
    assert main(["pipeline", "--config", f"{d}/run.ini", "--alpha", "0.75"]) == 0
    manifest = json.loads((work / "run" / "manifest.json").read_text())
    assert manifest["parameters"]["alpha"] == 0.75
    assert "eval.txt" not in manifest["outputs"]
