import csv
import shutil
import subprocess
import sys

import numpy as np
import pytest

from adrd.blocks import ADRD, NetworkConfig
from adrd.checkpoint import read_checkpoint, save_checkpoint
from adrd.cli import main
from adrd.imageio import read_png, write_png

TINY = ["--preset", "tiny", "--net-set", "dense_layers_per_group=2"]
QUICK = ["--set", "hr_patch_size=16", "--set", "batch_size=2", "--set", "patches_per_image=2",
         "--set", "max_steps=3", "--set", "epochs=100"]


@pytest.fixture(scope="module")
def hr_dir(tmp_path_factory, data_dir):
    d = tmp_path_factory.mktemp("hr")
    for name in ("astronaut", "coffee", "rocket"):
        shutil.copy(data_dir / f"{name}.png", d / f"{name}.png")
    return d


@pytest.fixture(scope="module")
def tiny_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "tiny.adrd"
    save_checkpoint(path, ADRD(NetworkConfig.tiny(dense_layers_per_group=(2,))))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_train_writes_log_and_checkpoint(tmp_path, hr_dir, capsys):
    assert main(["train", "--data", str(hr_dir), "--out", str(tmp_path), *TINY, *QUICK]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# adrd train: resolved configuration")
    assert "growth_rate=8" in out and "max_steps=3" in out
    rows = _rows(tmp_path / "train_log.csv")
    assert rows[0] == ["epoch", "step", "lr", "loss", "val_psnr"]
    assert rows[-1][1] == "3"
    ckpt = read_checkpoint(tmp_path / "checkpoint_step0000003.adrd")
    assert ckpt.step == 3 and ckpt.config.dense_layers_per_group == (2,)


def test_train_resume_matches_uninterrupted(tmp_path, hr_dir):
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["train", "--data", str(hr_dir), "--out", str(full), *TINY, *QUICK, "--set", "max_steps=4"]) == 0
    assert main(["train", "--data", str(hr_dir), "--out", str(part), *TINY, *QUICK, "--set", "max_steps=2"]) == 0
    assert main(["train", "--data", str(hr_dir), "--out", str(part), "--resume",
                 str(part / "checkpoint_step0000002.adrd"), "--set", "max_steps=4"]) == 0
    a = (full / "checkpoint_step0000004.adrd").read_bytes()
    b = (part / "checkpoint_step0000004.adrd").read_bytes()
    assert a == b


def test_sr_geometry_with_full_checkpoint(tmp_path):
    ckpt = tmp_path / "full.adrd"
    save_checkpoint(ckpt, ADRD(NetworkConfig.full()))
    lr = np.random.default_rng(0).integers(0, 256, (50, 50, 3), dtype=np.uint8)
    write_png(tmp_path / "lr.png", lr)
    assert main(["sr", "--checkpoint", str(ckpt), "--input", str(tmp_path / "lr.png"), "--out", str(tmp_path)]) == 0
    assert read_png(tmp_path / "lr_x4.png").shape == (200, 200, 3)


def test_sr_directory_and_tiling(tmp_path, tiny_ckpt, hr_dir):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sr", "--checkpoint", str(tiny_ckpt), "--input", str(hr_dir), "--out", str(a)]) == 0
    assert main(["sr", "--checkpoint", str(tiny_ckpt), "--input", str(hr_dir), "--out", str(b),
                 "--tile", "40", "--overlap", "30"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["astronaut_x4.png", "coffee_x4.png", "rocket_x4.png"]
    for n in names:
        assert read_png(a / n).shape == (384, 384, 3)
        assert np.abs(read_png(a / n) - read_png(b / n)).max() <= 1 / 255


def test_eval_bicubic_rcir_is_zero(tmp_path, hr_dir, capsys):
    out = tmp_path / "eval.csv"
    assert main(["eval", "--hr-dir", str(hr_dir), "--out", str(out)]) == 0
    assert "method=bicubic" in capsys.readouterr().out
    rows = _rows(out)
    assert rows[0] == ["image", "psnr_db", "ssim", "rcir"]
    assert [r[0] for r in rows[1:]] == ["astronaut", "coffee", "rocket"]
    for r in rows[1:]:
        assert abs(float(r[3])) < 1e-9
        assert 10 < float(r[1]) < 60 and 0 < float(r[2]) <= 1


def test_eval_with_checkpoint(tmp_path, hr_dir, tiny_ckpt):
    out = tmp_path / "eval.csv"
    assert main(["eval", "--hr-dir", str(hr_dir), "--out", str(out), "--checkpoint", str(tiny_ckpt),
                 "--noise-variance", "1e-4"]) == 0
    assert len(_rows(out)) == 4


def test_noise_eval(tmp_path, hr_dir, capsys):
    out = tmp_path / "noise.csv"
    assert main(["noise-eval", "--hr-dir", str(hr_dir), "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0] == ["variance", "image", "method", "psnr_db", "ssim"]
    assert len(rows) == 1 + 4 * 3
    assert {r[0] for r in rows[1:]} == {repr(v) for v in (5e-5, 1e-4, 2e-4, 5e-4)}
    assert "Level" in capsys.readouterr().out


def test_ablate_table_layout(tmp_path, hr_dir):
    args = ["ablate", "--data", str(hr_dir), "--out", str(tmp_path), "--study", "wdb", "--growth-rates", "4,8",
            "--steps", "2", "--patch", "16", "--net-set", "dense_layers_per_group=2"]
    assert main(args) == 0
    table = (tmp_path / "ablation_table.txt").read_text().splitlines()
    assert table[0].split() == ["Index", "DB-4", "WDB-4", "DB-8", "WDB-8"]
    assert [line.split()[0] for line in table[1:4]] == ["PSNR", "SSIM", "Params"]
    rows = _rows(tmp_path / "ablation.csv")
    assert [r[1] for r in rows[1:]] == ["DB-4", "WDB-4", "DB-8", "WDB-8"]
    # the weighted variant adds exactly one scalar per dense edge: 1 + 2 = 3
    params = [int(r[2]) for r in rows[1:]]
    assert params[1] - params[0] == 3 and params[3] - params[2] == 3


def test_ablate_sa_and_rd_rows(tmp_path, hr_dir):
    args = ["ablate", "--data", str(hr_dir), "--out", str(tmp_path), "--study", "all", "--growth-rates", "4",
            "--steps", "1", "--patch", "16", "--net-set", "dense_layers_per_group=1"]
    assert main(args) == 0
    text = (tmp_path / "ablation_table.txt").read_text()
    assert "noSA-4" in text and "SA-4" in text and "RCIR" in text
    assert "D-C16" in text and "RD-C16" in text


def test_export_weights(tmp_path, tiny_ckpt, capsys):
    assert main(["export-weights", "--checkpoint", str(tiny_ckpt)]) == 0
    out = capsys.readouterr().out
    assert "# block 1: 2 dense layers" in out
    assert "layer   2: 1 1" in out
    assert main(["export-weights", "--checkpoint", str(tiny_ckpt), "--out", str(tmp_path / "w.txt")]) == 0
    assert (tmp_path / "w.txt").read_text().startswith("# block 1")


def test_repeated_runs_are_byte_identical(tmp_path, hr_dir):
    for run in ("r1", "r2"):
        assert main(["train", "--data", str(hr_dir), "--out", str(tmp_path / run), *TINY, *QUICK]) == 0
        assert main(["eval", "--hr-dir", str(hr_dir), "--out", str(tmp_path / run / "eval.csv"),
                     "--checkpoint", str(tmp_path / run / "checkpoint_step0000003.adrd"),
                     "--noise-variance", "2e-4", "--seed", "7"]) == 0
    for name in ("train_log.csv", "checkpoint_step0000003.adrd", "eval.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


# --- exit codes ------------------------------------------------------------------------


def test_usage_errors_exit_1(tmp_path, hr_dir, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["eval", "--hr-dir", str(hr_dir), "--out", "x.csv", "--bogus"]) == 1
    assert main(["train", "--data", str(hr_dir), "--out", str(tmp_path), "--set", "nokey"]) == 1
    assert main(["train", "--data", str(hr_dir), "--out", str(tmp_path), "--set", "batch_size=0"]) == 1
    capsys.readouterr()


def test_data_errors_exit_2(tmp_path, hr_dir, capsys):
    assert main(["sr", "--checkpoint", str(tmp_path / "none.adrd"), "--input", str(hr_dir), "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.adrd").write_bytes(b"garbage")
    assert main(["export-weights", "--checkpoint", str(tmp_path / "bad.adrd")]) == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["eval", "--hr-dir", str(empty), "--out", str(tmp_path / "e.csv")]) == 2
    (empty / "x.png").write_bytes(b"not png")
    assert main(["eval", "--hr-dir", str(empty), "--out", str(tmp_path / "e.csv")]) == 2
    assert "data error" in capsys.readouterr().err


def test_topology_mismatch_exit_2(tmp_path, hr_dir, tiny_ckpt):
    args = ["train", "--data", str(hr_dir), "--out", str(tmp_path), "--resume", str(tiny_ckpt),
            *TINY, "--net-set", "growth_rate=5"]
    assert main(args) == 2


def test_numeric_failure_exit_3(tmp_path, hr_dir, capsys):
    net = ADRD(NetworkConfig.tiny(dense_layers_per_group=(2,)))
    net.reconstruct.bias.data[...] = np.nan
    save_checkpoint(tmp_path / "nan.adrd", net)
    args = ["train", "--data", str(hr_dir), "--out", str(tmp_path / "o"), "--resume", str(tmp_path / "nan.adrd"),
            *QUICK]
    assert main(args) == 3
    assert "non-finite" in capsys.readouterr().err


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "adrd.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "sr", "eval", "noise-eval", "ablate", "export-weights"):
        assert cmd in proc.stdout
