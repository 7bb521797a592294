import shutil
import subprocess

import numpy as np
import pytest

from skyseg import cli
from skyseg.data import netpbm
from skyseg.data.dataset import write_dataset
from skyseg.data.synthetic import LabeledImage
from skyseg.network import read_weights

MICRO = """\
task = dense20
sl_profile = 1,1,1,1,1,1,1,1,1,1,1
growth_rate = 2
stem_channels = 4
craspp_rates = 1
lkbr_k = 3
tile_size = 32
epochs = 1
checkpoint_every = 1
plots = false
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "micro.cfg").write_text(MICRO)
    assert cli.main(["gen-data", "--seed", "1", "--count", "2", "--size", "32", "--out", str(tmp_path / "data")]) == 0
    return tmp_path


def run(ws, *argv):
    return cli.main([argv[0], "--config", str(ws / "micro.cfg"), *argv[1:]])


def test_gen_data_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--seed", "1", "--count", "4", "--size", "64", "--out", str(tmp_path / name)]) == 0
    lines = (tmp_path / "a" / "manifest.txt").read_text().splitlines()
    assert len(lines) == 4 and all(line.endswith(",64,64,dense20") for line in lines)
    for sub in ("images/0003.ppm", "masks/0000.pgm", "manifest.txt"):
        assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()
    assert netpbm.read_ppm(tmp_path / "a" / "images" / "0002.ppm").shape == (64, 64, 3)


def test_train_zero_epochs_saves_initialisation(workspace):
    from skyseg.config import load
    from skyseg.network import build

    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / "r0"),
               "--epochs", "0") == 0
    saved = read_weights(workspace / "r0" / "weights.ssnw")
    fresh = build(load(workspace / "micro.cfg", env={}).network())
    assert all(saved[n].tobytes() == p.data.tobytes() for n, p in fresh.named_parameters())


def test_train_is_deterministic_over_ten_steps(workspace):
    for name in ("r1", "r2"):
        assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / name),
                   "--epochs", "5", "--max-steps", "10", "--quiet") == 0
    for f in ("weights.ssnw", "train_log.csv", "weights_e0001.ssnw"):
        assert (workspace / "r1" / f).read_bytes() == (workspace / "r2" / f).read_bytes()
    cfgs = [[line for line in (workspace / r / "run.cfg").read_text().splitlines() if not line.startswith("out_dir")]
            for r in ("r1", "r2")]
    assert cfgs[0] == cfgs[1]
    log = (workspace / "r1" / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("epoch,step,loss,") and "train_pa" in log[0]
    assert len(log) == 11


def test_seed_env_changes_the_run(workspace, monkeypatch):
    monkeypatch.setenv("SKYSEG_SEED", "9")
    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / "s9"),
               "--epochs", "0") == 0
    monkeypatch.delenv("SKYSEG_SEED")
    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / "s0"),
               "--epochs", "0") == 0
    assert (workspace / "s9" / "weights.ssnw").read_bytes() != (workspace / "s0" / "weights.ssnw").read_bytes()
    assert "seed = 9" in (workspace / "s9" / "run.cfg").read_text()


def test_exit_codes(workspace, monkeypatch, capsys):
    bad = workspace / "bad.cfg"
    bad.write_text("nonsense = 1\n")
    assert cli.main(["train", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert run(workspace, "train", "--data", str(workspace / "nowhere")) == cli.EXIT_DATA
    assert run(workspace, "eval", "--data", str(workspace / "data"), "--weights",
               str(workspace / "missing.ssnw")) == cli.EXIT_DATA
    import skyseg.train as tr

    def nan_loss(*args, **kw):
        from skyseg import tensor as T
        return T.Tensor(np.array(np.nan, np.float32), requires_grad=True), {}

    monkeypatch.setattr(tr, "total_loss", nan_loss)
    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / "nan")) \
        == cli.EXIT_DIVERGED
    assert "non-finite" in capsys.readouterr().err


def test_verify_failure_exits_4(monkeypatch):
    from skyseg import verify

    def failing(seed=0):
        res = verify.SuiteResult("loss-oracle")
        res.add("forced", 1.0, 1e-6)
        return res

    monkeypatch.setitem(verify.SUITES, "loss-oracle", failing)
    assert cli.main(["verify", "--suite", "loss-oracle"]) == cli.EXIT_VERIFY


@pytest.mark.parametrize("suite", ["loss-oracle", "metric-oracle", "tile-roundtrip"])
def test_verify_suites_pass(suite, capsys):
    assert cli.main(["verify", "--suite", suite]) == 0
    assert "PASS" in capsys.readouterr().out


def test_eval_oracle_and_report_files(workspace, capsys):
    out = workspace / "ev"
    assert run(workspace, "eval", "--data", str(workspace / "data"), "--out", str(out), "--oracle") == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["metrics_edge_binary.csv", "metrics_edge_multi.csv", "metrics_semantic.csv"]
    text = (out / "metrics_semantic.csv").read_text()
    assert text.startswith("class,tp,fp,fn,iou,precision,recall\n") and "miou,1.0\n" in text
    assert "semantic: miou 1.0000" in capsys.readouterr().out


def test_eval_untrained_uniform_net_scores_chance(tmp_path):
    # two classes, half of every image each; a uniform softmax picks class 0
    mask = np.zeros((32, 32), np.uint8)
    mask[:, 16:] = 1
    rgb = np.zeros((32, 32, 3), np.uint8)
    write_dataset(tmp_path / "data", [LabeledImage(rgb, mask), LabeledImage(rgb, mask.T.copy())])
    (tmp_path / "u.cfg").write_text(MICRO + "head_init = zero\n")
    args = ["--config", str(tmp_path / "u.cfg"), "--data", str(tmp_path / "data")]
    assert cli.main(["train", *args, "--out", str(tmp_path / "r"), "--epochs", "0"]) == 0
    assert cli.main(["eval", *args, "--out", str(tmp_path / "e"), "--weights", str(tmp_path / "r" / "weights.ssnw")]) == 0
    summary = dict(line.split(",") for line in (tmp_path / "e" / "metrics_semantic.csv").read_text().splitlines()
                   if line.startswith("pixel_accuracy"))
    assert float(summary["pixel_accuracy"]) == 0.5


def test_eval_class_count_mismatch(workspace):
    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / "r"),
               "--epochs", "0") == 0
    lane = workspace / "lane.cfg"
    lane.write_text(MICRO.replace("dense20", "lane13"))
    code = cli.main(["eval", "--config", str(lane), "--data", str(workspace / "data"),
                     "--weights", str(workspace / "r" / "weights.ssnw")])
    assert code == cli.EXIT_DATA


def test_infer_shapes_and_gsd(workspace):
    assert run(workspace, "train", "--data", str(workspace / "data"), "--out", str(workspace / "r"),
               "--epochs", "0") == 0
    weights = str(workspace / "r" / "weights.ssnw")
    img = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    netpbm.write(workspace / "in.ppm", img)
    assert run(workspace, "infer", str(workspace / "in.ppm"), "--weights", weights,
               "--out", str(workspace / "m.pgm"), "--edges", str(workspace / "e.pgm")) == 0
    m = netpbm.read_pgm(workspace / "m.pgm")
    assert m.shape == (64, 64) and m.max() < 20
    assert set(np.unique(netpbm.read_pgm(workspace / "e.pgm"))) <= {0, 255}
    small = np.random.default_rng(1).integers(0, 256, (100, 100, 3), dtype=np.uint8)
    netpbm.write(workspace / "s.ppm", small)
    assert run(workspace, "infer", str(workspace / "s.ppm"), "--weights", weights,
               "--out", str(workspace / "g.pgm"), "--gsd", "30:13") == 0
    assert netpbm.read_pgm(workspace / "g.pgm").shape == (231, 231)
    (workspace / "broken.ppm").write_bytes(b"P6\n4 4\n255\n\x00")
    assert run(workspace, "infer", str(workspace / "broken.ppm"), "--weights", weights,
               "--out", str(workspace / "x.pgm")) == cli.EXIT_DATA
    assert not (workspace / "x.pgm").exists()
    assert run(workspace, "infer", str(workspace / "s.ppm"), "--weights", weights,
               "--out", str(workspace / "x.pgm"), "--gsd", "30") == cli.EXIT_CONFIG


@pytest.mark.skipif(shutil.which("skyseg") is None, reason="console script not installed")
def test_console_script(tmp_path):
    done = subprocess.run(["skyseg", "gen-data", "--count", "1", "--size", "32", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert done.returncode == 0 and (tmp_path / "manifest.txt").exists()
