"""Command line entry points: train, eval, compare, verify.

Configuration is a flat ``key=value`` text file; explicit command line flags
override file values. Training writes a metrics CSV (one row per batch, or
per alternation in full mode) plus a binary weight checkpoint. ``compare``
runs several configurations on identical data and merges their test-accuracy
curves into one CSV for side-by-side plots.

Exit codes: 0 success, 1 verification failure, 2 configuration or data
problems, 3 unreadable checkpoint.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass

from . import data as data_mod
from .baseline import Optimizer, SgdConfig, train_baseline
from .bcd import TrainReport, train_batched, train_full
from .divergence import ActivationKind
from .network import (
    CheckpointError,
    Hyperparams,
    Loss,
    NetworkSpec,
    accuracy,
    feed_forward,
    load_checkpoint,
    loss_value,
    save_checkpoint,
)

METRICS_HEADER = "method,epoch,batch,lifted_obj,std_obj,train_acc,test_acc,seconds"

MODES = ("lifted-full", "lifted-batched", "baseline")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    mode: str = "lifted-batched"
    arch: str = "784-300-10"
    activation: str = "relu"
    loss: str = "ce"
    lam: float = 10.0
    rho: float | None = None        # None: 1e-4 in full mode, 0 otherwise
    gamma: float = 1.0
    batch: int = 500
    epochs: int = 10
    outer_iters: int = 30
    alternations: int = 1
    inner_tol: float = 1e-4
    inner_iters: int = 200
    w_steps: int = 0                # 0: solve weight subproblems to tolerance
    optimizer: str = "adam"
    lr: float | None = None         # None: per-optimizer default
    seed: int = 0
    data_dir: str = ""              # "": FLNN_DATA_DIR or data/mnist
    subset: int = 0                 # 0: full training split
    center: bool = False
    out_dir: str = "runs/out"
    metrics_every: int = 10

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        try:
            widths = [int(x) for x in self.arch.split("-")]
        except ValueError:
            raise ConfigError(f"bad arch {self.arch!r}; expected e.g. 784-300-10") from None
        if len(widths) < 3:
            raise ConfigError("arch needs at least one hidden layer")
        if self.loss not in ("mse", "ce"):
            raise ConfigError(f"loss must be mse or ce, got {self.loss!r}")
        if self.activation not in {k.value for k in ActivationKind}:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = ""
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


_OPTIONAL_FLOATS = {"rho", "lr"}


def parse_config_text(text: str) -> dict:
    """Parse flat key=value lines into a raw dict (comments and blanks skipped)."""
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, _, val = line.partition("=")
        out[key.strip()] = val.strip()
    return out


def config_from_sources(file_path: str | None, overrides: dict) -> RunConfig:
    """Defaults, then config file values, then explicit flag overrides."""
    raw: dict = {}
    if file_path:
        if not os.path.exists(file_path):
            raise ConfigError(f"config file not found: {file_path}")
        with open(file_path) as fh:
            raw.update(parse_config_text(fh.read()))
    raw.update({k: v for k, v in overrides.items() if v is not None})

    field_types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for key, val in raw.items():
        if key not in field_types:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(val, str):
            kwargs[key] = _coerce(key, val)
        else:
            kwargs[key] = val
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def _coerce(key: str, val: str):
    if key in _OPTIONAL_FLOATS:
        return None if val == "" else float(val)
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        if val.lower() in ("true", "1", "yes"):
            return True
        if val.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {val!r}")
    if isinstance(default, int):
        return int(val)
    if isinstance(default, float):
        return float(val)
    return val


def make_spec(cfg: RunConfig) -> NetworkSpec:
    widths = tuple(int(x) for x in cfg.arch.split("-"))
    kind = ActivationKind(cfg.activation)
    loss = Loss.MSE if cfg.loss == "mse" else Loss.CROSS_ENTROPY
    return NetworkSpec(widths, (kind,) * (len(widths) - 2), loss)


def make_hyperparams(cfg: RunConfig) -> Hyperparams:
    full = cfg.mode == "lifted-full"
    rho = cfg.rho if cfg.rho is not None else (1e-4 if full else 0.0)
    return Hyperparams(
        lam=cfg.lam,
        rho=[rho],
        gamma=[cfg.gamma],
        batch_size=cfg.batch,
        alternations_K=cfg.alternations,
        inner_tol=cfg.inner_tol,
        inner_max_iters=cfg.inner_iters,
        outer_max_iters=cfg.outer_iters if full else cfg.epochs,
        seed=cfg.seed,
        w_steps=cfg.w_steps or None,
    )


def load_datasets(cfg: RunConfig):
    data_dir = cfg.data_dir or data_mod.default_data_dir()
    try:
        train = data_mod.load_mnist(data_dir, "train", center=cfg.center)
        test = data_mod.load_mnist(data_dir, "test", center=cfg.center)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.subset:
        train = data_mod.subset(train, cfg.subset, cfg.seed)
    return train, test


def run_training(cfg: RunConfig):
    """Train per the config; returns (spec, weights, report)."""
    spec = make_spec(cfg)
    train, test = load_datasets(cfg)
    if spec.input_dim != train.num_features or spec.output_dim != train.num_classes:
        raise ConfigError(
            f"arch {cfg.arch} does not match data "
            f"({train.num_features} features, {train.num_classes} classes)"
        )
    if cfg.mode == "baseline":
        sgd = SgdConfig(
            optimizer=Optimizer(cfg.optimizer),
            learning_rate=cfg.lr,
            epochs=cfg.epochs,
            batch_size=cfg.batch,
            seed=cfg.seed,
            rho=cfg.rho or 0.0,
        )
        w, report = train_baseline(spec, train, sgd, test_data=test,
                                   metrics_every=cfg.metrics_every)
    elif cfg.mode == "lifted-full":
        h = make_hyperparams(cfg)
        w, report = train_full(spec, train, h, test_data=test,
                               metrics_every=1, track_blocks=False)
    else:
        h = make_hyperparams(cfg)
        w, report = train_batched(spec, train, h, test_data=test,
                                  metrics_every=cfg.metrics_every, track_blocks=False)
    return spec, w, report


def write_metrics_csv(path: str, report: TrainReport):
    with open(path, "w") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in report.rows:
            fh.write(
                f"{report.method},{r.epoch},{r.batch},{float(r.lifted_obj)!r},"
                f"{float(r.std_obj)!r},{float(r.train_acc)!r},{float(r.test_acc)!r},"
                f"{r.seconds:.3f}\n"
            )


def cmd_train(args) -> int:
    try:
        cfg = config_from_sources(args.config, _overrides_from_args(args))
        spec, w, report = run_training(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(cfg.out_dir, "metrics.csv"), report)
    save_checkpoint(os.path.join(cfg.out_dir, "model.flnn"), spec, w)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
        fh.write(cfg.to_text())
    for warning in report.warnings[:5]:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"final test accuracy: {report.final_test_accuracy:.4f}")
    return 0


def cmd_eval(args) -> int:
    try:
        spec, w = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        print(f"error: cannot read checkpoint: {exc}", file=sys.stderr)
        return 3
    try:
        cfg = config_from_sources(args.config, _overrides_from_args(args))
        data_dir = cfg.data_dir or data_mod.default_data_dir()
        test = data_mod.load_mnist(data_dir, "test", center=cfg.center)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    acc = accuracy(spec, w, test.inputs, test.label_indices)
    _, pred = feed_forward(spec, w, test.inputs)
    mean_loss = loss_value(spec, pred, test.labels) / test.num_cols
    print(f"test accuracy: {acc:.4f}")
    print(f"mean loss: {mean_loss:.6f}")
    return 0


#: reference final accuracies for the batched comparison, annotated into the
#: merged CSV so plots can show them as horizontal guide lines
REFERENCE_ACCURACIES = {"sgd": 0.943, "adam": 0.976, "lifted": 0.976}


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        print("error: compare needs at least two config files", file=sys.stderr)
        return 2
    cfgs = []
    try:
        for path in args.configs:
            cfgs.append(config_from_sources(path, _overrides_from_args(args)))
        key = (cfgs[0].arch, cfgs[0].activation, cfgs[0].loss, cfgs[0].data_dir,
               cfgs[0].subset, cfgs[0].center)
        for c in cfgs[1:]:
            if (c.arch, c.activation, c.loss, c.data_dir, c.subset, c.center) != key:
                raise ConfigError("configs disagree on architecture, loss or data")
        runs = []
        for c in cfgs:
            _, _, report = run_training(c)
            runs.append((c, report))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.merged or "compare.csv"
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w") as fh:
        for name, acc in REFERENCE_ACCURACIES.items():
            fh.write(f"# reference,{name},{acc}\n")
        fh.write("method,epoch_fraction,test_acc\n")
        for c, report in runs:
            per_epoch = max(1, max(r.batch for r in report.rows) + 1)
            for r in report.rows:
                frac = r.epoch if c.mode == "lifted-full" else (r.epoch - 1) + (r.batch + 1) / per_epoch
                fh.write(f"{report.method},{frac:.6f},{float(r.test_acc)!r}\n")
    for c, report in runs:
        print(f"{report.method}: final test accuracy {report.final_test_accuracy:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(fast=args.fast)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.detail}")
        failures += not r.passed
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


_FLAG_FIELDS = [f.name for f in dataclasses.fields(RunConfig)]


def _overrides_from_args(args) -> dict:
    return {name: getattr(args, name, None) for name in _FLAG_FIELDS}


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--arch", help="layer widths, e.g. 784-300-10")
    p.add_argument("--activation", choices=[k.value for k in ActivationKind])
    p.add_argument("--loss", choices=["mse", "ce"])
    p.add_argument("--lambda", dest="lam", type=float, help="divergence penalty weight")
    p.add_argument("--rho", type=float, help="weight decay")
    p.add_argument("--gamma", type=float, help="proximal pull toward previous batch weights")
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--outer-iters", dest="outer_iters", type=int)
    p.add_argument("--alternations", type=int, help="X/W sweeps per batch")
    p.add_argument("--inner-tol", dest="inner_tol", type=float)
    p.add_argument("--inner-iters", dest="inner_iters", type=int)
    p.add_argument("--w-steps", dest="w_steps", type=int,
                   help="cap weight-subproblem iterations (0 = to tolerance)")
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--subset", type=int, help="train on a seeded subset of this size")
    p.add_argument("--center", action="store_const", const=True, default=None,
                   help="subtract per-feature means")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--metrics-every", dest="metrics_every", type=int,
                   help="batches between test-accuracy evaluations")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="flnn",
        description="Train and evaluate lifted networks (block-coordinate descent) "
        "and matched SGD/Adam baselines on MNIST-format data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model, write metrics + checkpoint")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p_eval.add_argument("checkpoint")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="run several configs, merge their curves")
    p_cmp.add_argument("configs", nargs="+", help="config files to run")
    p_cmp.add_argument("--merged", help="merged CSV path (default compare.csv)")
    _add_config_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_ver = sub.add_parser("verify", help="run the invariant/property suite")
    p_ver.add_argument("--fast", action="store_true", help="smaller sample counts")
    p_ver.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
