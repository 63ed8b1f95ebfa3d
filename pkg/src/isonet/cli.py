"""Command-line entry point: ``isonet train|eval|ablate|diagnose|gradcheck``.

Configuration is a flat ``key=value`` file with dotted keys, e.g.::

    net.variant=isonet
    net.stages=2x16,2x32
    train.lr=0.02

Presets supply defaults, a ``--config`` file overrides them, and
``--set key=value`` (repeatable) or the convenience flags override both.

Exit codes: 0 success, 1 invalid input (bad key, missing data, unreadable
checkpoint), 2 training diverged, 3 gradient check failed.
"""

import argparse
import csv
import hashlib
import itertools
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .data import (
    SYNTH_VERSION,
    DataFormatError,
    load_cifar10_binary,
    normalize,
    synth_dataset,
)
from .isometry import extreme_singular_values, isometry_residual
from .network import (
    CheckpointError,
    Init,
    NetworkSpec,
    load_checkpoint,
    save_checkpoint,
)
from .optim import METRIC_COLUMNS, TrainConfig, TrainingDiverged, accuracy, grad_check, train

log = logging.getLogger("isonet")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 1, 2, 3

LR_GRID = (0.1, 0.02, 0.004)

DEFAULTS = {
    "net.variant": "isonet",
    "net.stages": "2x16",
    "net.kernel_size": "3",
    "net.dropout": "0.1",
    "net.residual_scale": "per_channel",
    "train.lr": "0.02",
    "train.momentum": "0.9",
    "train.weight_decay": "1e-4",
    "train.gamma": "1e-4",
    "train.epochs": "30",
    "train.warmup_epochs": "5",
    "train.decay_epochs": "",
    "train.decay_factor": "0.1",
    "train.batch_size": "64",
    "train.seed": "0",
    "train.srelu": "true",
    "train.delta_init": "true",
    "train.ortho_reg": "true",
    "train.augment": "false",
    "data.source": "synth",
    "data.path": "",
    "data.eval_path": "",
    "data.seed": "7",
    "data.classes": "4",
    "data.size": "16",
    "data.channels": "3",
    "data.sigma": "0.5",
    "data.train_size": "2048",
    "data.eval_size": "512",
}

_ISONET = {"net.variant": "isonet", "train.lr": "0.02", "net.dropout": "0.1",
           "train.gamma": "1e-4", "train.srelu": "true", "train.delta_init": "true",
           "train.ortho_reg": "true"}
_RISONET = dict(_ISONET, **{"net.variant": "r-isonet", "train.lr": "0.1", "net.dropout": "0.4"})
_VANILLA = {"net.variant": "vanilla", "train.lr": "0.02", "net.dropout": "0.0",
            "train.gamma": "0", "train.srelu": "false", "train.delta_init": "false",
            "train.ortho_reg": "false"}
_RVANILLA = dict(_VANILLA, **{"net.variant": "r-vanilla"})
_SMALL = {"net.stages": "2x16", "data.train_size": "256", "data.eval_size": "128", "train.epochs": "5",
          "train.warmup_epochs": "1"}
_DEEP = {"net.stages": "12x16", "train.decay_epochs": "20,25"}

PRESETS = {
    "isonet-s": dict(_ISONET, **_SMALL),
    "r-isonet-s": dict(_RISONET, **_SMALL),
    "vanilla-s": dict(_VANILLA, **_SMALL),
    "r-vanilla-s": dict(_RVANILLA, **_SMALL),
    "isonet-deep": dict(_ISONET, **_DEEP),
    "r-isonet-deep": dict(_RISONET, **_DEEP),
    "vanilla-deep": dict(_VANILLA, **_DEEP),
    "r-vanilla-deep": dict(_RVANILLA, **_DEEP),
}


class ConfigError(ValueError):
    pass


def parse_config_text(text):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def check_keys(cfg):
    for key in cfg:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key}")


def _bool(key, v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def _num(key, v, kind=float):
    try:
        return kind(v)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {v!r}") from None


def parse_stages(text):
    """``"2x16,2x32"`` -> ``((2, 16), (2, 32))``."""
    stages = []
    for part in text.split(","):
        try:
            n, c = part.lower().split("x")
            stages.append((int(n), int(c)))
        except ValueError:
            raise ConfigError(f"net.stages: cannot parse {part!r}; expected BLOCKSxWIDTH") from None
    return tuple(stages)


def make_spec(cfg, input_channels, classes):
    try:
        return NetworkSpec(
            variant=cfg["net.variant"],
            stages=parse_stages(cfg["net.stages"]),
            input_channels=input_channels,
            classes=classes,
            kernel_size=_num("net.kernel_size", cfg["net.kernel_size"], int),
            dropout_p=_num("net.dropout", cfg["net.dropout"]),
            residual_scale=cfg["net.residual_scale"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def make_train_config(cfg):
    decay = cfg["train.decay_epochs"].strip()
    try:
        return TrainConfig(
            lr=_num("train.lr", cfg["train.lr"]),
            momentum=_num("train.momentum", cfg["train.momentum"]),
            weight_decay=_num("train.weight_decay", cfg["train.weight_decay"]),
            gamma=_num("train.gamma", cfg["train.gamma"]),
            epochs=_num("train.epochs", cfg["train.epochs"], int),
            warmup_epochs=_num("train.warmup_epochs", cfg["train.warmup_epochs"], int),
            decay_epochs=tuple(_num("train.decay_epochs", e, int) for e in decay.split(",")) if decay else (),
            decay_factor=_num("train.decay_factor", cfg["train.decay_factor"]),
            batch_size=_num("train.batch_size", cfg["train.batch_size"], int),
            seed=_num("train.seed", cfg["train.seed"], int),
            srelu=_bool("train.srelu", cfg["train.srelu"]),
            delta_init=_bool("train.delta_init", cfg["train.delta_init"]),
            ortho_reg=_bool("train.ortho_reg", cfg["train.ortho_reg"]),
            augment=_bool("train.augment", cfg["train.augment"]),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_data(cfg):
    """Return normalized ``(train, eval)`` datasets for a config."""
    source = cfg["data.source"]
    if source == "synth":
        kw = dict(
            seed=_num("data.seed", cfg["data.seed"], int),
            classes=_num("data.classes", cfg["data.classes"], int),
            size=_num("data.size", cfg["data.size"], int),
            channels=_num("data.channels", cfg["data.channels"], int),
            sigma=_num("data.sigma", cfg["data.sigma"]),
        )
        tr = synth_dataset(n=_num("data.train_size", cfg["data.train_size"], int), split="train", **kw)
        ev = synth_dataset(n=_num("data.eval_size", cfg["data.eval_size"], int), split="eval", **kw)
    elif source == "cifar10":
        paths = [p for p in cfg["data.path"].split(",") if p]
        if not paths:
            raise ConfigError("data.path is required for data.source=cifar10")
        for p in paths + [q for q in cfg["data.eval_path"].split(",") if q]:
            if not os.path.exists(p):
                raise ConfigError(f"data file not found: {p}")
        tr = load_cifar10_binary(paths)
        eval_paths = [p for p in cfg["data.eval_path"].split(",") if p]
        ev = load_cifar10_binary(eval_paths) if eval_paths else None
    else:
        raise ConfigError(f"data.source must be 'synth' or 'cifar10', got {source!r}")
    if len(tr) == 0:
        raise ConfigError("training data is empty")
    if ev is None:
        _, trn = normalize(tr)
        return trn, None
    _, trn, evn = normalize(tr, ev)
    return trn, evn


def config_hash(cfg):
    text = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        cfg.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        try:
            with open(args.config) as f:
                file_cfg = parse_config_text(f.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        check_keys(file_cfg)
        cfg.update(file_cfg)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    flag_keys = {"data": "data.source", "data_path": "data.path", "eval_path": "data.eval_path",
                 "epochs": "train.epochs", "lr": "train.lr", "seed": "train.seed"}
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = str(v)
    check_keys(overrides)
    cfg.update(overrides)
    return cfg


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path, history, cfg, extra=None):
    """Metric CSV with provenance comments ahead of the header row."""
    with open(path, "w", newline="") as f:
        f.write(f"# isonet {__version__}\n")
        f.write(f"# config_hash={config_hash(cfg)}\n")
        f.write(f"# seed={cfg['train.seed']}\n")
        f.write(f"# data={cfg['data.source']} generator={SYNTH_VERSION if cfg['data.source'] == 'synth' else 'cifar10-binary'}\n")
        for k, v in (extra or {}).items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in history:
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])


def run_training(cfg):
    """Build everything from a resolved config and train. Returns ``(result, spec)``."""
    trn, evn = load_data(cfg)
    tcfg = make_train_config(cfg)
    spec = make_spec(cfg, trn.images.shape[1], trn.classes)
    return train(spec, tcfg, trn, evn), spec


def cmd_train(args):
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    metrics = os.path.join(args.out, "metrics.csv")
    try:
        result, _ = run_training(cfg)
    except TrainingDiverged as exc:
        write_metrics(metrics, exc.history, cfg, {"status": "diverged", "diverged_at": f"epoch {exc.epoch} step {exc.step}"})
        print(f"diverged: {exc} (epoch {exc.epoch}, step {exc.step}, loss {exc.loss})", file=sys.stderr)
        return EXIT_DIVERGED
    write_metrics(metrics, result.history, cfg)
    save_checkpoint(result.params, os.path.join(args.out, "checkpoint.ison"))
    print(f"wrote {metrics} and {os.path.join(args.out, 'checkpoint.ison')}")
    return EXIT_OK


def cmd_eval(args):
    cfg = resolve_config(args)
    params = load_checkpoint(args.checkpoint)
    trn, evn = load_data(cfg)
    ds = evn if evn is not None else trn
    acc = accuracy(params, ds)
    print(f"accuracy={acc:.6f} examples={len(ds)}")
    return EXIT_OK


ABLATION_COLUMNS = ("variant", "srelu", "delta_init", "ortho_reg", "lr", "status", "epochs_completed",
                    "final_train_loss", "final_train_acc", "final_eval_acc", "final_mean_iso_residual")


def ablation_cells(switch_grid=None):
    """All on/off combinations of ``(srelu, delta_init, ortho_reg)``."""
    return list(itertools.product((False, True), repeat=3)) if switch_grid is None else switch_grid


def cmd_ablate(args):
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    trn, evn = load_data(cfg)
    base = make_train_config(cfg)
    spec = make_spec(cfg, trn.images.shape[1], trn.classes)
    lrs = LR_GRID if args.lr_grid else (base.lr,)
    path = os.path.join(args.out, "ablation.csv")
    with open(path, "w", newline="") as f:
        f.write(f"# isonet {__version__}\n# config_hash={config_hash(cfg)}\n# seed={base.seed}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for (srelu, delta, ortho), lr in itertools.product(ablation_cells(), lrs):
            tcfg = replace(base, srelu=srelu, delta_init=delta, ortho_reg=ortho, lr=lr)
            cell_spec = replace(spec, srelu=srelu)
            try:
                history = train(cell_spec, tcfg, trn, evn).history
                status = "ok"
            except TrainingDiverged as exc:
                history, status = exc.history, "diverged"
            last = history[-1] if history else {c: float("nan") for c in METRIC_COLUMNS}
            w.writerow([spec.variant, int(srelu), int(delta), int(ortho), _fmt(lr), status, len(history),
                        _fmt(last["train_loss"]), _fmt(last["train_acc"]), _fmt(last["eval_acc"]),
                        _fmt(last["mean_iso_residual"])])
            f.flush()
            log.info("cell srelu=%s delta=%s ortho=%s lr=%s -> %s", srelu, delta, ortho, lr, status)
    print(f"wrote {path}")
    return EXIT_OK


def stage_of(name):
    return 0 if name.startswith("stem") else int(name.split(".")[0][1:])


def b_histograms(params, bins=20):
    """Per-stage histograms of SReLU shifts as ``(stage, lo, hi, count)`` rows."""
    by_stage = {}
    for name, v in params.values.items():
        if name.endswith(".b"):
            by_stage.setdefault(stage_of(name), []).append(v.ravel())
    rows = []
    for stage in sorted(by_stage):
        vals = np.concatenate(by_stage[stage])
        counts, edges = np.histogram(vals, bins=bins)
        rows.extend((stage, float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts))
    return rows


def diagnose(params, iterations=100, spatial=(16, 16)):
    """Per-kernel ``(index, name, residual, sigma_max, sigma_min_lower)`` rows."""
    rows = []
    for i, name in enumerate(params.kernel_names()):
        A = params.values[name]
        smax, smin = extreme_singular_values(A, iterations, spatial)
        rows.append((i, name, isometry_residual(A), smax, smin))
    return rows


def cmd_diagnose(args):
    params = load_checkpoint(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    layers_path = os.path.join(args.out, "layers.csv")
    with open(layers_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("layer", "name", "isometry_residual", "sigma_max", "sigma_min_lower"))
        for row in diagnose(params, args.iterations, (args.spatial, args.spatial)):
            w.writerow([row[0], row[1]] + [_fmt(float(v)) for v in row[2:]])
    hist_path = os.path.join(args.out, "b_hist.csv")
    with open(hist_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("stage", "bin_lo", "bin_hi", "count"))
        for stage, lo, hi, c in b_histograms(params, args.bins):
            w.writerow([stage, _fmt(lo), _fmt(hi), c])
    print(f"wrote {layers_path} and {hist_path}")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = resolve_config(args)
    if args.probes < 1:
        print("n_probes must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    spec = make_spec(cfg, _num("data.channels", cfg["data.channels"], int),
                     _num("data.classes", cfg["data.classes"], int))
    spec = replace(spec, srelu=_bool("train.srelu", cfg["train.srelu"]))
    init = Init.DELTA if _bool("train.delta_init", cfg["train.delta_init"]) else Init.GAUSSIAN
    corrupt = None
    if args.fault_injection:
        corrupt = ("fc.W", (0, 0), 2.0)
    result = grad_check(spec, init, n_probes=args.probes, h=args.h, loss=args.loss,
                        seed=_num("train.seed", cfg["train.seed"], int), corrupt=corrupt)
    name, idx, num, ana, err = result.worst
    print(f"max_rel_error={result.max_rel_error:.3e} worst={name}{list(idx)} numeric={num:.10g} analytic={ana:.10g}")
    return EXIT_OK if result.passed(1e-5) else EXIT_GRADCHECK


def _common(p, data=True):
    p.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int)
    if data:
        p.add_argument("--data", choices=("synth", "cifar10"))
        p.add_argument("--data-path", help="comma-separated CIFAR-10 training batch files")
        p.add_argument("--eval-path", help="comma-separated CIFAR-10 evaluation batch files")


def build_parser():
    parser = argparse.ArgumentParser(prog="isonet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the srelu/delta_init/ortho_reg grid")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-grid", action="store_true", help=f"run every cell at each lr in {LR_GRID}")
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diagnose", help="per-layer isometry and SReLU shift histograms")
    p.add_argument("checkpoint")
    p.add_argument("--out", default="runs/diagnose")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--spatial", type=int, default=16)
    p.add_argument("--bins", type=int, default=20)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _common(p, data=False)
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--loss", choices=("cross_entropy", "squared"), default="cross_entropy")
    p.add_argument("--fault-injection", action="store_true", help="double one analytic gradient entry")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CheckpointError, DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
