import csv
import os

import numpy as np
import pytest

from conftest import needs_mnist
from flnn import cli, verify
from flnn.cli import METRICS_HEADER, RunConfig, config_from_sources, parse_config_text
from flnn.network import load_checkpoint


def run_cli(*argv):
    return cli.main(list(argv))


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(mode="baseline", lam=3.5, rho=None, lr=None, subset=100,
                        center=True, out_dir="x/y")
        path = tmp_path / "run.cfg"
        path.write_text(cfg.to_text())
        again = config_from_sources(str(path), {})
        assert again == cfg

    def test_flag_overrides_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(RunConfig(lam=1.0).to_text())
        cfg = config_from_sources(str(path), {"lam": 42.0})
        assert cfg.lam == 42.0

    def test_comments_and_blanks(self):
        raw = parse_config_text("# comment\n\nlam=2.5\nmode=baseline\n")
        assert raw == {"lam": "2.5", "mode": "baseline"}

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("nonsense=1\n")
        with pytest.raises(cli.ConfigError):
            config_from_sources(str(path), {})

    def test_bad_mode_rejected(self):
        with pytest.raises(cli.ConfigError):
            config_from_sources(None, {"mode": "warp"})


def read_metrics(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


@needs_mnist
class TestTrainEval:
    ARGS = [
        "train", "--mode", "lifted-batched", "--arch", "784-16-10", "--loss", "ce",
        "--batch", "100", "--epochs", "1", "--subset", "400", "--inner-iters", "30",
        "--w-steps", "8", "--metrics-every", "2", "--seed", "7",
    ]

    def test_train_writes_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_cli(*self.ARGS, "--out", str(out)) == 0
        rows = read_metrics(out / "metrics.csv")
        assert len(rows) == 4  # ceil(400 / 100) batches, one epoch
        with open(out / "metrics.csv") as fh:
            assert fh.readline().strip() == METRICS_HEADER
        for r in rows:
            float(r["lifted_obj"]); float(r["std_obj"])
            float(r["train_acc"]); float(r["test_acc"]); float(r["seconds"])
        assert (out / "model.flnn").exists()
        assert "final test accuracy" in capsys.readouterr().out

    def test_determinism_modulo_wall_time(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli(*self.ARGS, "--out", str(out1)) == 0
        assert run_cli(*self.ARGS, "--out", str(out2)) == 0

        def strip_seconds(p):
            return [line.rsplit(",", 1)[0] for line in open(p)]

        assert strip_seconds(out1 / "metrics.csv") == strip_seconds(out2 / "metrics.csv")
        assert (out1 / "model.flnn").read_bytes() == (out2 / "model.flnn").read_bytes()

    def test_eval_consistent_with_final_row(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert run_cli(*self.ARGS, "--out", str(out)) == 0
        final = float(read_metrics(out / "metrics.csv")[-1]["test_acc"])
        capsys.readouterr()
        assert run_cli("eval", str(out / "model.flnn")) == 0
        printed = capsys.readouterr().out
        assert f"{final:.4f}" in printed

    def test_eval_random_weights_near_chance(self, tmp_path, capsys):
        from flnn.network import NetworkSpec, Weights, save_checkpoint
        from flnn.divergence import ActivationKind
        from flnn.network import Loss

        spec = NetworkSpec((784, 16, 10), (ActivationKind.RELU,), Loss.CROSS_ENTROPY)
        w = Weights.init_gaussian(spec, 123)
        path = tmp_path / "random.flnn"
        save_checkpoint(path, spec, w)
        assert run_cli("eval", str(path)) == 0
        acc = float(capsys.readouterr().out.split("test accuracy:")[1].split()[0])
        assert 0.07 <= acc <= 0.13

    def test_corrupt_checkpoint_exit_3(self, tmp_path):
        p = tmp_path / "bad.flnn"
        p.write_bytes(b"FLNN1" + b"\x01\x00\x00\x00" + b"\xff" * 7)
        assert run_cli("eval", str(p)) == 3

    def test_missing_data_dir_exit_2(self, tmp_path, capsys):
        missing = tmp_path / "nowhere"
        code = run_cli(*self.ARGS, "--out", str(tmp_path / "r"), "--data-dir", str(missing))
        assert code == 2
        assert str(missing) in capsys.readouterr().err


@needs_mnist
class TestCompare:
    def _write_cfg(self, tmp_path, name, **kw):
        base = dict(arch="784-16-10", loss="ce", batch="100", epochs="1",
                    subset="300", inner_iters="20", w_steps="5", metrics_every="2")
        base.update(kw)
        path = tmp_path / name
        path.write_text("\n".join(f"{k}={v}" for k, v in base.items()) + "\n")
        return str(path)

    def test_merged_csv(self, tmp_path):
        a = self._write_cfg(tmp_path, "a.cfg", mode="lifted-batched")
        b = self._write_cfg(tmp_path, "b.cfg", mode="baseline", optimizer="sgd")
        merged = tmp_path / "cmp.csv"
        assert run_cli("compare", a, b, "--merged", str(merged)) == 0
        text = merged.read_text().splitlines()
        refs = [ln for ln in text if ln.startswith("# reference")]
        assert len(refs) == 3
        header_i = next(i for i, ln in enumerate(text) if not ln.startswith("#"))
        assert text[header_i] == "method,epoch_fraction,test_acc"
        data = text[header_i + 1:]
        assert len(data) == 3 + 3  # ceil(300/100) rows per run
        methods = {ln.split(",")[0] for ln in data}
        assert methods == {"lifted-batched", "sgd"}

    def test_mismatched_specs_rejected(self, tmp_path, capsys):
        a = self._write_cfg(tmp_path, "a.cfg", mode="lifted-batched")
        b = self._write_cfg(tmp_path, "b.cfg", mode="baseline", arch="784-32-10")
        assert run_cli("compare", a, b) == 2
        assert "disagree" in capsys.readouterr().err


class TestVerifyCommand:
    def test_fast_suite_passes(self, capsys):
        assert run_cli("verify", "--fast") == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_mutation_is_caught(self, monkeypatch):
        # injected sign error in the ReLU penalty gradient must trip the check
        import flnn.verify as V

        real = V.divergence_grad_u

        def broken(kind, v, u):
            g = real(kind, v, u)
            return -g if kind.value == "relu" else g

        monkeypatch.setattr(V, "divergence_grad_u", broken)
        r = V.check_divergence_gradients(samples=400)
        assert not r.passed
