import filecmp
import subprocess
import sys

import numpy as np
import pytest

from memseg.cli import main, parse_config_file
from memseg.corpus.storage import read_masks

TINY_TRAIN = """\
# a very small model
dim = 8
heads = 2
n_modules = 1
height = 32
width = 32
steps = 2
batch = 2
log_every = 0
"""


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.diff_files or cmp.left_only or cmp.right_only:
        return False
    # dircmp compares shallowly; check file bytes too
    for sub in cmp.common_dirs:
        if not same_tree(a / sub, b / sub):
            return False
    return all((a / f).read_bytes() == (b / f).read_bytes() for f in cmp.common_files)


def test_gen_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "gen", tmp_path / name, "--count", 8, "--seed", 7, "--frames", 4)
        assert code == 0
        assert "# seed = 7" in out and "# count = 8" in out
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert len(list((tmp_path / "a").glob("sample_*"))) == 8


@pytest.mark.parametrize("mode", ["spatial", "temporal"])
def test_gen_contrast(tmp_path, capsys, mode):
    code, out, _ = run(capsys, "gen", tmp_path / "d", "--count", 12, "--contrast", mode, "--frames", 4)
    assert code == 0
    dirs = sorted((tmp_path / "d").glob("sample_*"))
    assert dirs
    masks = read_masks(dirs[0] / "masks.bin")
    assert masks.shape[0] == (8 if mode == "temporal" else 4)
    assert masks.shape[2] == (128 if mode == "spatial" else 64)


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("count = 3\nn_frames = 2\nseed = 4\n")
    code, out, _ = run(capsys, "gen", tmp_path / "d", "--config", cfg, "--count", 2)
    assert code == 0
    assert "# count = 2" in out and "# n_frames = 2" in out and "# seed = 4" in out
    assert len(list((tmp_path / "d").glob("sample_*"))) == 2
    code, out, _ = run(capsys, "gen", tmp_path / "e", "--config", cfg, "--set", "count=1")
    assert "# count = 1" in out


def test_unknown_config_key_is_an_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    with pytest.raises(ValueError):
        parse_config_file(cfg)
    code, out, err = run(capsys, "gen", tmp_path / "d", "--config", cfg)
    assert code == 1
    assert err.count("\n") == 1 and "colour" in err


def test_bad_flag_is_a_one_line_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--count", "many"])
    assert exc.value.code == 2
    assert capsys.readouterr().err.count("\n") == 1


def test_missing_corpus(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--corpus", tmp_path / "nothing", "--set", "steps=1")
    assert code == 1 and err.count("\n") == 1


def test_train_infer_eval_round_trip(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(capsys, "gen", data, "--count", 3, "--frames", 3)[0] == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text(TINY_TRAIN)
    ckpt = tmp_path / "m.lctr"
    code, out, _ = run(capsys, "train", "--config", cfg, "--corpus", data, "--checkpoint", ckpt)
    assert code == 0 and ckpt.exists()
    assert "# dim = 8" in out and "# steps = 2" in out

    preds = tmp_path / "pred"
    code, out, _ = run(capsys, "infer", ckpt, data, "--output", preds)
    assert code == 0
    pbms = sorted((preds / "sample_00000").glob("frame_*.pbm"))
    assert [p.name for p in pbms] == ["frame_00000.pbm", "frame_00001.pbm", "frame_00002.pbm"]
    assert len(list((preds / "sample_00000").glob("frame_*.pgm"))) == 3

    code, out, _ = run(capsys, "eval", preds, data, "--csv", tmp_path / "m.csv")
    assert code == 0 and "mean_iou" in out
    assert (tmp_path / "m.csv").read_text().startswith("metric,value\n")

    code, out, _ = run(capsys, "eval", data, data)
    assert code == 0
    line = next(l for l in out.splitlines() if l.startswith("overall_iou"))
    assert float(line.split()[-1]) == 1.0


def test_infer_single_sample_directory(tmp_path, capsys):
    data = tmp_path / "data"
    run(capsys, "gen", data, "--count", 2, "--frames", 2)
    cfg = tmp_path / "t.cfg"
    cfg.write_text(TINY_TRAIN)
    run(capsys, "train", "--config", cfg, "--corpus", data, "--checkpoint", tmp_path / "m.lctr")
    code, _, _ = run(capsys, "infer", tmp_path / "m.lctr", data / "sample_00001", "-o", tmp_path / "one",
                     "--threshold", 0.7)
    assert code == 0
    assert len(list((tmp_path / "one").glob("frame_*.pbm"))) == 2


def test_eval_shape_mismatch(tmp_path, capsys):
    run(capsys, "gen", tmp_path / "a", "--count", 1, "--frames", 2)
    run(capsys, "gen", tmp_path / "b", "--count", 1, "--frames", 3)
    code, _, err = run(capsys, "eval", tmp_path / "a", tmp_path / "b")
    assert code == 1 and "shape" in err


def test_bench_csv(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", "--frames-list", "1,2", "--tokens", 16, "--dim", 16, "--trials", 3,
                       "--warmup", 0, "--csv", tmp_path / "b.csv")
    assert code == 0
    csv_lines = [l for l in out.splitlines() if not l.startswith("#")]
    assert csv_lines[0] == "variant,n_frames,ms_per_frame,peak_context_vectors"
    assert [l.split(",")[:2] for l in csv_lines[1:]] == [["full", "1"], ["full", "2"], ["memory", "1"], ["memory", "2"]]
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == csv_lines[0]


def test_bench_rejects_bad_frames(capsys):
    code, _, err = run(capsys, "bench", "--frames-list", "0,5")
    assert code == 1 and err.count("\n") == 1


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "memseg.cli", "gen", str(tmp_path / "x"), "--count", "1",
                           "--frames", "2"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("# memseg gen")
