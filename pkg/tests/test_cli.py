import numpy as np
import pytest

from appgraph.cli import main
from appgraph.model import import_text, load_embeddings


def cos_matrix(users, apps):
    u = users / np.linalg.norm(users, axis=1, keepdims=True)
    a = apps / np.linalg.norm(apps, axis=1, keepdims=True)
    return u @ a.T


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    cfg = d / "train.cfg"
    cfg.write_text("# short run\nsteps = 3000\nd = 16\nseed = 7\nlog_every = 0\n")
    paths = dict(dir=d, edges=d / "edges.tsv", emb=d / "emb.bin", cfg=cfg)
    assert main(["generate", "--out", str(paths["edges"])]) == 0
    assert main(["train", "--edges", str(paths["edges"]), "--config", str(cfg), "--out", str(paths["emb"])]) == 0
    return paths


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 1


def test_train_without_edges_is_usage_error(capsys):
    assert main(["train"]) == 1
    assert "usage:" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["train", "--edges", "e", "--out", "o", "--steps", "many"], ["eval-memory", "--bogus"]])
def test_bad_flags_rejected_before_work(argv, capsys):
    assert main(argv) == 1


def test_full_pipeline_writes_every_artifact(pipeline, capsys):
    d = pipeline["dir"]
    assert (d / "edges.tsv.truth").exists()
    assert (d / "emb.bin.users.tsv").exists() and (d / "emb.bin.apps.tsv").exists()
    common = ["--edges", str(pipeline["edges"]), "--emb", str(pipeline["emb"])]
    assert main(["eval-memory", *common, "--out", str(d / "mem.txt"), "--json", str(d / "mem.json")]) == 0
    assert main(["eval-inference", *common, "--out", str(d / "inf.txt")]) == 0
    assert main(["export", "--emb", str(pipeline["emb"]), "--out", str(d / "emb.txt")]) == 0
    mem = dict(line.split("\t") for line in (d / "mem.txt").read_text().splitlines())
    assert {"precision", "auc"} <= mem.keys()
    inf = dict(line.split("\t") for line in (d / "inf.txt").read_text().splitlines())
    assert {"user_side.auc", "user_side.auc_plus", "user_side.auc_star", "app_side.auc"} <= inf.keys()


def test_export_reimport_preserves_cosines(pipeline):
    out = pipeline["dir"] / "export2.txt"
    assert main(["export", "--emb", str(pipeline["emb"]), "--out", str(out)]) == 0
    binary = load_embeddings(pipeline["emb"])
    text = import_text(out)
    np.testing.assert_array_equal(text.user_ids, binary.user_ids)
    np.testing.assert_array_equal(text.app_ids, binary.app_ids)
    diff = cos_matrix(text.user_emb.astype(np.float64), text.app_emb.astype(np.float64)) - cos_matrix(
        binary.user_emb.astype(np.float64), binary.app_emb.astype(np.float64)
    )
    assert np.abs(diff).max() <= 1e-6


def test_identical_invocations_identical_outputs(pipeline, tmp_path):
    again = tmp_path / "emb.bin"
    assert main(["train", "--edges", str(pipeline["edges"]), "--config", str(pipeline["cfg"]), "--out", str(again)]) == 0
    assert again.read_bytes() == pipeline["emb"].read_bytes()
    e1, e2 = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert main(["generate", "--out", str(e1), "--num-users", "100", "--seed", "3"]) == 0
    assert main(["generate", "--out", str(e2), "--num_users", "100", "--seed", "3"]) == 0
    assert e1.read_bytes() == e2.read_bytes()


def test_flags_override_config(pipeline, tmp_path):
    out = tmp_path / "emb.bin"
    args = ["train", "--edges", str(pipeline["edges"]), "--config", str(pipeline["cfg"]), "--out", str(out)]
    assert main([*args, "--d", "5", "--steps", "10"]) == 0
    assert load_embeddings(out).dim == 5


def test_mismatched_embeddings_exit_2(pipeline, tmp_path, capsys):
    other = tmp_path / "other.tsv"
    assert main(["generate", "--out", str(other), "--num-users", "500", "--seed", "1"]) == 0
    capsys.readouterr()
    assert main(["eval-memory", "--edges", str(other), "--emb", str(pipeline["emb"])]) == 2
    assert "mismatch" in capsys.readouterr().err


def test_distinct_data_errors(pipeline, tmp_path, capsys):
    messages = []
    assert main(["eval-memory", "--edges", str(tmp_path / "nope.tsv"), "--emb", str(pipeline["emb"])]) == 2
    messages.append(capsys.readouterr().err)
    bad = tmp_path / "bad.cfg"
    bad.write_text("steps = lots\n")
    assert main(["train", "--edges", str(pipeline["edges"]), "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    messages.append(capsys.readouterr().err)
    unknown = tmp_path / "unknown.cfg"
    unknown.write_text("stepz = 3\n")
    assert main(["train", "--edges", str(pipeline["edges"]), "--config", str(unknown), "--out", str(tmp_path / "x")]) == 2
    messages.append(capsys.readouterr().err)
    garbage = tmp_path / "garbage.bin"
    garbage.write_bytes(b"NOPE" + bytes(40))
    assert main(["export", "--emb", str(garbage), "--out", str(tmp_path / "g.txt")]) == 2
    messages.append(capsys.readouterr().err)
    malformed = tmp_path / "malformed.tsv"
    malformed.write_text("1\tx\t0\n")
    assert main(["eval-memory", "--edges", str(malformed), "--emb", str(pipeline["emb"])]) == 2
    messages.append(capsys.readouterr().err)
    assert len(set(messages)) == len(messages)
    assert "not found" in messages[0] and "line 1" in messages[-1]
