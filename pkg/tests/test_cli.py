import json
from pathlib import Path

import numpy as np
import pytest

from bergomi_pinn.cli import main
from bergomi_pinn.config import Config, dump_config, load_config
from bergomi_pinn.evaluation import read_rows_csv
from bergomi_pinn.networks import load_checkpoint
from bergomi_pinn.sampler import read_points_csv
from bergomi_pinn.trainer import ConfigurationError

ROOT = Path(__file__).resolve().parents[1]
FAST = ["--set", "train.samples=200", "--set", "train.batch_size=100", "--set", "network.width=8",
        "--set", "train.log_every=1", "--set", "mc.paths=400", "--set", "mc.steps_per_year=50",
        "--set", "evaluate.count=3"]


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg == Config()
        assert cfg.train.samples == 2_000_000 and cfg.network.width == 64 and cfg.loss.lambda2 == 25.0

    def test_overrides_and_types(self):
        cfg = load_config(None, ["train.lr_start=0.002", "mc.antithetic=true", "run.kind=up-in-put",
                                 "mc.paths=1e4"])
        assert cfg.train.lr_start == 0.002 and cfg.mc.antithetic is True and cfg.mc.paths == 10_000
        assert cfg.kind.value == "up-in-put"

    def test_dump_round_trip(self, tmp_path):
        cfg = load_config(None, ["run.curve_mode=nine-segment", "mc.target_se=0.05"])
        (tmp_path / "c.ini").write_text(dump_config(cfg))
        again = load_config(tmp_path / "c.ini")
        assert again == cfg and again.digest() == cfg.digest()
        assert cfg.digest() != Config().digest()

    @pytest.mark.parametrize("override", ["train.nope=1", "bogus.key=1", "train.samples=abc", "noequals",
                                          "run.kind=sideways", "run.curve_mode=linear", "mc.antithetic=maybe",
                                          "train.lr_end=1"])
    def test_bad_values(self, override):
        with pytest.raises(ValueError):
            load_config(None, [override])

    @pytest.mark.parametrize("name", ["constant.ini", "nine_segment.ini"])
    def test_committed_examples_load(self, name):
        cfg = load_config(ROOT / "configs" / name)
        assert cfg.run.curve_mode == ("constant" if name == "constant.ini" else "nine-segment")

    def test_unknown_section(self, tmp_path):
        (tmp_path / "c.ini").write_text("[extra]\na = 1\n")
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "c.ini")


def _run(*argv):
    return main([str(a) for a in argv])


def test_train_writes_checkpoint_log_and_manifest(tmp_path, capsys):
    out = tmp_path / "call.ckpt"
    assert _run("train", "--kind", "call", "--output", out, *FAST) == 0
    net, extra = load_checkpoint(out)
    assert net.kind.value == "call" and extra["steps_done"] == 2
    man = json.loads(Path(f"{out}.manifest.json").read_text())
    assert man["command"] == "train" and man["seeds"] == {"train": 0, "init": 0}
    assert set(man["outputs"]) == {str(out), f"{out}.log.csv"}
    assert "versions" in man and len(man["config_sha256"]) == 64


def test_train_knock_in_needs_vanilla(tmp_path, capsys):
    assert _run("train", "--kind", "up-in-call", "--output", tmp_path / "x.ckpt", *FAST) == 2
    assert "vanilla" in capsys.readouterr().err


def test_full_pipeline_is_reproducible(tmp_path):
    def pipeline(d):
        d.mkdir()
        assert _run("train", "--kind", "put", "--output", d / "put.ckpt", *FAST) == 0
        assert _run("train", "--kind", "up-in-put", "--vanilla", d / "put.ckpt", "--output", d / "uip.ckpt",
                    *FAST) == 0
        assert _run("sample", "--kind", "up-out-put", "--output", d / "pts.csv", *FAST) == 0
        assert _run("price", "--kind", "up-out-put", "--points", d / "pts.csv", "--vanilla", d / "put.ckpt",
                    "--knock-in", d / "uip.ckpt", "--output", d / "prices.csv", *FAST) == 0
        assert _run("benchmark", "--kind", "up-out-put", "--points", d / "pts.csv", "--output", d / "bench.csv",
                    *FAST) == 0
        assert _run("evaluate", "--kind", "up-in-put", "--knock-in", d / "uip.ckpt", "--output", d / "eval",
                    *FAST) == 0
        assert _run("curve", "--kind", "up-in-put", "--knock-in", d / "uip.ckpt", "--maturity", "0.5",
                    "--points", "4", "--output", d / "curve", *FAST) == 0

    pipeline(tmp_path / "a")
    pipeline(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file()
                   and not p.name.endswith(".manifest.json"))
    assert len(files) >= 12
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    man = json.loads((tmp_path / "a" / "eval" / "evaluate.manifest.json").read_text())
    assert man["seeds"] == {"evaluate": 9_000_001, "mc": 7_000_001}
    report = json.loads((tmp_path / "a" / "eval" / "up-in-put_report.json").read_text())
    assert report["count"] == 3
    batch, extra = read_points_csv(tmp_path / "a" / "bench.csv")
    assert list(extra) == ["kind", "price", "se", "scheme", "paths", "steps"] and len(batch) == 3
    rows = read_rows_csv(tmp_path / "a" / "curve" / "up-in-put_T0.500000.csv")
    assert len(rows) == 4 and set(rows[0]) == {"S", "network", "benchmark", "se", "relative_error"}
    _, priced = read_points_csv(tmp_path / "a" / "prices.csv")
    assert np.all(np.isfinite(priced["price"]))


def test_evaluate_refuses_training_seed(tmp_path, capsys):
    ck = tmp_path / "call.ckpt"
    assert _run("train", "--kind", "call", "--output", ck, *FAST) == 0
    code = _run("evaluate", "--kind", "call", "--vanilla", ck, "--output", tmp_path / "e", *FAST,
                "--set", "evaluate.seed=0")
    assert code == 2 and "seed" in capsys.readouterr().err


def test_price_rejects_wrong_checkpoint(tmp_path, capsys):
    ck = tmp_path / "call.ckpt"
    assert _run("train", "--kind", "call", "--output", ck, *FAST) == 0
    assert _run("sample", "--kind", "put", "--output", tmp_path / "p.csv", *FAST) == 0
    assert _run("price", "--kind", "put", "--points", tmp_path / "p.csv", "--vanilla", ck,
                "--output", tmp_path / "o.csv") == 2
    assert not (tmp_path / "o.csv").exists()


def test_missing_files_are_usage_errors(tmp_path):
    assert _run("benchmark", "--points", tmp_path / "none.csv", "--output", tmp_path / "o.csv") == 2
    assert _run("config", "--config", tmp_path / "none.ini") == 2


def test_config_command_prints_resolved(capsys):
    assert _run("config", "--set", "train.seed=12") == 0
    assert "seed = 12" in capsys.readouterr().out
