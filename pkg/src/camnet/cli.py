"""camnet command line.

Subcommands: train, eval, joint, lifelong, trace, hist. Every flag can also
come from ``--config FILE`` (``key = value`` lines, keys are the flag names
without dashes); flags given on the command line win. List-valued keys
(``data``) separate entries with ``;``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from camnet import __version__
from camnet.arch import TINY_CAMNET, build_encdec, build_network, build_preset, parse_arch
from camnet.arch.network import PRESETS
from camnet.config import ConfigError, coerce, load_data, read_config_file
from camnet.data import AugmentConfig, make_joint, parse_idx
from camnet.engine.tensor import precision
from camnet.errors import (
    CamnetError,
    ConsistencyError,
    ContractError,
    DimensionError,
    DivergenceError,
    FormatError,
    ParseError,
)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_FORMAT = 5
EXIT_DIVERGED = 6

log = logging.getLogger("camnet")


class UsageError(CamnetError):
    pass


# ---------------------------------------------------------------- parser

def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run")
    g.add_argument("--config", metavar="FILE", help="key = value file; command-line flags override it")
    g.add_argument("--seed", type=int, default=0, help="seed for init, shuffling, augmentation, subsets")
    g.add_argument("--precision", choices=["f32", "f64"], default="f32")
    g.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    return p


def _model_args():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model")
    g.add_argument("--arch", help=f"layer string such as {TINY_CAMNET!r}, or encdec / encdec-deep")
    g.add_argument("--preset", choices=sorted(PRESETS), help="named architecture (overrides --arch)")
    g.add_argument("--width", type=int, default=3, help="parallel tensors per routing layer")
    g.add_argument("--mode", choices=["learned", "identity"], default="learned",
                   help="identity freezes routing to parallel paths (MultiCNN baseline)")
    g.add_argument("--head-tokens", type=int, help="trailing layers that form a task head")
    g.add_argument("--reduce-channels", type=int, default=1, help="1x1 conv channels in conv gates")
    return p


def _train_args():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("training")
    g.add_argument("--optimizer", choices=["adam", "sgd_momentum"], default="adam")
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--epochs", type=int, default=10)
    g.add_argument("--augment", action=argparse.BooleanOptionalAction, default=False,
                   help="random shift/rotate/scale of training images")
    g.add_argument("--subset", type=int, help="random training subset size per dataset")
    g.add_argument("--test-subset", type=int, help="random test subset size per dataset")
    g.add_argument("--synth-n", type=int, default=256, help="training pairs per synthetic domain")
    g.add_argument("--synth-size", type=int, default=32, help="synthetic image side (power of two)")
    return p


def _out_args(default_figs=True):
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("output")
    g.add_argument("--out", default="out", help="output directory")
    if default_figs:
        g.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    return p


DATA_HELP = ("NAME:TRAIN_IMG,TRAIN_LAB[,TEST_IMG,TEST_LAB] | NAME:DIR | NAME (under $CAMNET_DATA) "
             "| synth:roads | synth:facades")


def build_parser():
    parser = argparse.ArgumentParser(prog="camnet", description="Routing CNNs: train, evaluate, trace.")
    parser.add_argument("--version", action="version", version=f"camnet {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    common, model, train, out = _common(), _model_args(), _train_args(), _out_args()

    p = sub.add_parser("train", parents=[common, model, train, out], help="train one model on one dataset")
    p.add_argument("--data", help=DATA_HELP)
    p.add_argument("--test", help="test data spec (default: the test split of --data)")

    p = sub.add_parser("joint", parents=[common, model, train, out], help="train on interleaved datasets")
    p.add_argument("--data", action="append", help=DATA_HELP + "; repeat once per domain")
    p.add_argument("--fraction", type=float, default=0.05, help="interleave block size as a fraction of each set")

    p = sub.add_parser("eval", parents=[common, _out_args(False)], help="evaluate a checkpoint")
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--data", action="append", help=DATA_HELP + "; repeat for per-domain results")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--subset", type=int)
    p.add_argument("--synth-n", type=int, default=256)
    p.add_argument("--synth-size", type=int, default=32)
    p.add_argument("--head", type=int, help="head index (default: the active head)")

    p = sub.add_parser("lifelong", parents=[common, model, train, out], help="sequential tasks with distillation")
    p.add_argument("--order", help="comma-separated dataset names in training order")
    p.add_argument("--data", action="append", help="NAME:PATHS for a name in --order (else $CAMNET_DATA/NAME)")
    p.add_argument("--lambda", dest="lambda_old", type=float, default=1.0, help="distillation weight")
    p.add_argument("--temp", type=float, default=2.0, help="distillation temperature")

    p = sub.add_parser("trace", parents=[common], help="route trace of one input as DOT + JSON")
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--input", help="IDX image file (or .png)")
    p.add_argument("--index", type=int, default=0, help="image index inside an IDX file")
    p.add_argument("--out", help="DOT output path")
    p.add_argument("--json", help="trace JSON path (default: next to the DOT file)")
    p.add_argument("--head", type=int)

    p = sub.add_parser("hist", parents=[common, _out_args()], help="per-path weight histograms")
    p.add_argument("--ckpt", help="checkpoint file")
    p.add_argument("--layers", help="glob over forward-layer names (default: all multi-path ones)")
    p.add_argument("--bins", type=int, default=20)
    return parser


REQUIRED = {
    "train": ["data"],
    "joint": ["data"],
    "eval": ["ckpt", "data"],
    "lifelong": ["order"],
    "trace": ["ckpt", "input", "out"],
    "hist": ["ckpt"],
}


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_config(parser, argv, args):
    sub = _subparser(parser, args.command)
    values = read_config_file(args.config)
    actions = {}
    for a in sub._actions:
        if a.dest in ("help", "config"):
            continue
        actions[a.dest] = a
        for opt in a.option_strings:  # flag spelling works too, e.g. lambda for lambda_old
            if opt.startswith("--") and not opt.startswith("--no-"):
                actions.setdefault(opt[2:].replace("-", "_"), a)
    defaults = {}
    for key, raw in values.items():
        if key not in actions:
            raise ConfigError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        act = actions[key]
        if act.nargs == 0:
            value = coerce(raw, bool)
        elif isinstance(act, argparse._AppendAction):
            value = [coerce(v.strip(), act.type) for v in raw.split(";") if v.strip()]
        else:
            value = coerce(raw, act.type)
        if act.choices is not None and value not in act.choices:
            raise ConfigError(f"{args.config}: {key} must be one of {sorted(act.choices)}, got {value!r}")
        defaults[act.dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"no such config file: {args.config}")
        cli_lists = {k: getattr(args, k) for k in ("data",) if getattr(args, k, None)}
        args = _apply_config(parser, argv, args)
        for k, v in cli_lists.items():
            setattr(args, k, v)  # flags win over the file, lists included
    missing = [f"--{k.replace('_', '-')}" for k in REQUIRED[args.command] if not getattr(args, k, None)]
    if missing:
        raise UsageError(f"{args.command}: missing required {', '.join(missing)}")
    return args


# ---------------------------------------------------------------- helpers

def _train_config(args, ckpt):
    from camnet.training import TrainConfig
    if args.width < 1:
        raise ConfigError(f"width must be >= 1, got {args.width}")
    return TrainConfig(optimizer=args.optimizer, lr=args.lr, momentum=args.momentum,
                       batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                       augment=AugmentConfig(enabled=args.augment), precision=args.precision,
                       checkpoint_path=ckpt)


def _make_model(args, data):
    shape = data.image_shape
    with precision(args.precision):
        if not data.is_classification:
            arch = (args.arch or "encdec").lower()
            if arch not in ("encdec", "encdec-deep"):
                raise ConfigError("image-to-image data needs --arch encdec or encdec-deep")
            return build_encdec(args.width, deep=arch == "encdec-deep", input_shape=shape, mode=args.mode,
                                seed=args.seed, reduce_channels=args.reduce_channels)
        if args.preset:
            return build_preset(args.preset, width=args.width, input_shape=shape,
                                n_classes=data.n_classes, seed=args.seed)
        spec = parse_arch(args.arch or TINY_CAMNET, width=args.width, input_shape=shape, n_classes=data.n_classes)
        return build_network(spec, mode=args.mode, seed=args.seed, head_tokens=args.head_tokens,
                             reduce_channels=args.reduce_channels)


def _load(args, spec, split, domain_id=0, subset=None):
    return load_data(spec, split, domain_id, subset, args.seed, getattr(args, "synth_n", 256),
                     getattr(args, "synth_size", 32))


def _outdir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _summary(metrics):
    if not metrics.epochs:
        return "no epochs run"
    last = metrics.epochs[-1]
    if last.test is None:
        return f"epoch {last.epoch} train loss {last.train_loss:.4f}"
    label = "error" if metrics.task == "classification" else "L2"
    return f"epoch {last.epoch} train loss {last.train_loss:.4f} test {label} {last.test.error:.4f}"


def _fit_and_write(args, model, train, test):
    from camnet.training import save_checkpoint, train_classifier, train_translator
    out = _outdir(args)
    ckpt = os.path.join(out, "model.bin")
    cfg = _train_config(args, ckpt if test is not None else None)
    fit = train_classifier if train.is_classification else train_translator
    try:
        model, metrics = fit(model, train, cfg, test=test)
    except DivergenceError as exc:
        if exc.metrics is not None:
            exc.metrics.write_csv(os.path.join(out, "metrics.csv"))
        raise
    if test is None or not os.path.exists(ckpt):
        save_checkpoint(model, ckpt)
    metrics.write_csv(os.path.join(out, "metrics.csv"))
    if not args.no_figures:
        from camnet.report import plot_metrics
        plot_metrics(metrics, os.path.join(out, "metrics.png"))
    print(f"{_summary(metrics)}; wrote {out}")


# ---------------------------------------------------------------- commands

def cmd_train(args):
    train = _load(args, args.data, "train", 0, args.subset)
    test = _load(args, args.test or args.data, "test", 0, args.test_subset)
    model = _make_model(args, train)
    _fit_and_write(args, model, train, test)


def cmd_joint(args):
    if not 0 < args.fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {args.fraction}")
    trains, tests = [], []
    for k, spec in enumerate(args.data):
        trains.append(_load(args, spec, "train", k, args.subset))
        t = _load(args, spec, "test", k, args.test_subset)
        if t is not None:
            tests.append(t)
    train = make_joint(trains, args.fraction)
    test = make_joint(tests, args.fraction) if len(tests) == len(trains) else None
    model = _make_model(args, train)
    _fit_and_write(args, model, train, test)


def cmd_eval(args):
    from camnet.training import evaluate, load_checkpoint
    model = load_checkpoint(args.ckpt)
    parts = [_load(args, spec, args.split, k, args.subset) for k, spec in enumerate(args.data)]
    if any(p is None for p in parts):
        raise FileNotFoundError(f"a data spec has no {args.split} split")
    data = parts[0] if len(parts) == 1 else make_joint(parts)
    res = evaluate(model, data, head=args.head)
    out = _outdir(args)
    with open(os.path.join(out, "eval.csv"), "w", newline="") as fh:
        fh.write("epoch,split,domain,loss,error\n")
        fh.write(f"0,{args.split},all,{res.loss!r},{res.error!r}\n")
        for dom in sorted(res.per_domain):
            _, loss, err = res.per_domain[dom]
            fh.write(f"0,{args.split},{dom},{loss!r},{err!r}\n")
    print(f"{args.split}: loss {res.loss:.4f} error {res.error:.4f} over {res.count} samples")


def cmd_lifelong(args):
    from camnet.lifelong import LwFConfig, run_lifelong
    from camnet.training import save_checkpoint
    names = [n.strip() for n in args.order.split(",") if n.strip()]
    if len(set(names)) != len(names):
        raise ConfigError(f"--order repeats a dataset: {args.order}")
    specs = {}
    for entry in args.data or []:
        name = entry.partition(":")[0]
        if name not in names:
            raise ConfigError(f"--data {name!r} is not in --order")
        specs[name] = entry
    phases = []
    for k, name in enumerate(names):
        spec = specs.get(name, name)
        train = _load(args, spec, "train", k, args.subset)
        test = _load(args, spec, "test", k, args.test_subset)
        if test is None:
            raise FileNotFoundError(f"{name}: lifelong evaluation needs a test split")
        phases.append((name, train, test))
    model = _make_model(args, phases[0][1])
    cfg = LwFConfig(lambda_old=args.lambda_old, temperature=args.temp, order=tuple(names))
    model, history = run_lifelong(model, phases, cfg, _train_config(args, None))
    out = _outdir(args)
    history.write_csv(os.path.join(out, "history.csv"))
    for k, m in enumerate(history.metrics, start=1):
        m.write_csv(os.path.join(out, f"metrics_phase{k}.csv"))
    save_checkpoint(model, os.path.join(out, "model.bin"))
    if not args.no_figures:
        from camnet.report import plot_lifelong
        plot_lifelong(history, os.path.join(out, "lifelong.png"))
    final = ", ".join(f"{t} {a:.3f}" for p, t, a in history.rows if p == len(names))
    print(f"final accuracies: {final}; wrote {out}")


def read_input_image(path, index, shape):
    """One (C, H, W) image in [0, 1] from an IDX or PNG file."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such input: {path}")
    if path.lower().endswith(".png"):
        from PIL import Image
        with Image.open(path) as im:
            im = im.convert("L" if shape[0] == 1 else "RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
        arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    else:
        from camnet.data.idx import _open
        with _open(path) as fh:
            arr = parse_idx(fh.read(), path)
        scale = 255.0 if arr.dtype == np.uint8 else 1.0
        if arr.ndim == len(shape) + 1 or (arr.ndim == len(shape) and len(shape) == 3 and shape[0] == 1
                                          and arr.shape[1:] == shape[1:]):
            if not 0 <= index < len(arr):
                raise ContractError(f"--index {index} outside the {len(arr)} images in {path}")
            arr = arr[index]
        arr = arr.astype(np.float32) / np.float32(scale)
        if arr.ndim == 2:
            arr = arr[None]
    if tuple(arr.shape) != tuple(shape):
        raise DimensionError(f"input image {arr.shape} does not match model input {tuple(shape)}")
    return arr


def cmd_trace(args):
    from camnet.trace import capture_trace, export_dot
    from camnet.training import load_checkpoint
    model = load_checkpoint(args.ckpt)
    x = read_input_image(args.input, args.index, tuple(model.config["input_shape"]))
    trace = capture_trace(model, x, input_id=f"{os.path.basename(args.input)}#{args.index}", head=args.head)
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(export_dot(trace))
    json_path = args.json or os.path.splitext(args.out)[0] + ".json"
    with open(json_path, "w") as fh:
        fh.write(trace.to_json())
    print(f"wrote {args.out} and {json_path}")


def cmd_hist(args):
    from camnet.trace import weight_histograms
    from camnet.training import load_checkpoint
    model = load_checkpoint(args.ckpt)
    report = weight_histograms(model, args.layers, args.bins)
    out = _outdir(args)
    report.write_csv(os.path.join(out, "hist.csv"))
    if not args.no_figures:
        from camnet.report import plot_histograms
        plot_histograms(report, os.path.join(out, "hist.png"))
    name, tv = report.max_tv()
    print(f"{len(report.layers)} layers; largest path TV distance {tv:.4f} at {name}; wrote {out}")


COMMANDS = {
    "train": cmd_train, "joint": cmd_joint, "eval": cmd_eval,
    "lifelong": cmd_lifelong, "trace": cmd_trace, "hist": cmd_hist,
}


def run(argv=None) -> int:
    """Execute one command; returns the process exit code."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        COMMANDS[args.command](args)
        return EXIT_OK
    except SystemExit as exc:  # argparse: --help, --version, bad flags
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every failure becomes one diagnostic line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"camnet: error: {msg}", file=sys.stderr)
        return exit_code(exc)


def exit_code(exc) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (FormatError, ConsistencyError)):
        return EXIT_FORMAT
    if isinstance(exc, (ConfigError, ContractError, ParseError, DimensionError)):
        return EXIT_CONFIG
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, NotADirectoryError)):
        return EXIT_MISSING
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGED
    return EXIT_OTHER


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
