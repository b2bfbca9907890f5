"""Acceptance criteria, one test each. Every test prints a single
``[criterion k] PASS|FAIL`` line with the measured numbers.

Criteria 6-8 need MNIST and FashionMNIST IDX files under
$CAMNET_DATA/mnist and $CAMNET_DATA/fashion; without them they fail and say so.
Criteria 9 and 10 train small encoder-decoders on synthetic data (a few minutes on one core).
"""

import os
import time

import numpy as np
import pytest

from camnet.arch import (
    BASECNN,
    BASECNN2,
    CAMNET,
    TINY_CAMNET,
    build_encdec,
    build_network,
    build_preset,
    count_params,
    parse_arch,
    render_arch,
)
from camnet.cli import run
from camnet.config import DATA_ENV, load_data
from camnet.data import AugmentConfig, ImageDataset, make_joint, parse_idx, encode_idx, save_idx, synth_pairs
from camnet.engine import Parameter, Tensor, conv2d, grad_check, precision
from camnet.engine import functional as F
from camnet.lifelong import LwFConfig, add_task_head, lwf_train, run_lifelong
from camnet.routing import RoutingLayer
from camnet.trace import capture_traces, gate_divergence, weight_histograms
from camnet.training import TrainConfig, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from camnet.training import train_classifier, train_translator

from oracles import copy_paths, naive_conv2d, published_params

@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {k:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def randomise_gates(model, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if isinstance(layer, RoutingLayer):
            for entry in layer.gate_params:
                for p in entry.values():
                    p.data[...] = rng.standard_normal(p.data.shape) * scale


# ---------------------------------------------------------------- 1

def primitive_cases(rng):
    """name -> (scalar function, parameters). Each ends in a weighted sum so
    every output element carries a distinct gradient."""
    P = lambda shape, lo=None: Parameter(rng.uniform(lo, 1.0, shape) if lo is not None
                                         else rng.standard_normal(shape), "p")
    a, b = P((3, 4)), P((3, 4))
    x4 = P((2, 3, 6, 6))
    proj = lambda t, r: F.sum(F.mul(t, r))
    r34 = rng.standard_normal((3, 4))
    # projections drawn once, outside the lambdas
    r = {shape: rng.standard_normal(shape) for shape in
         [(2, 108), (3, 8), (3, 5), (2, 2, 6, 6), (2, 2, 2, 2), (2, 3, 3, 3), (2, 3, 12, 12)]}
    k, kb = P((2, 3, 3, 3)), P((2,))
    fw, fb = P((5, 4)), P((5,))
    pos = P((3, 4), lo=0.1)
    onehot = np.eye(4)[[0, 3, 1]]
    cases = {
        "add": (lambda: proj(F.add(a, b), r34), [a, b]),
        "sub": (lambda: proj(F.sub(a, b), r34), [a, b]),
        "mul": (lambda: proj(F.mul(a, b), r34), [a, b]),
        "add_n": (lambda: proj(F.add_n([a, b, a]), r34), [a, b]),
        "reshape": (lambda: proj(F.reshape(a, (4, 3)), r34.reshape(4, 3)), [a]),
        "flatten": (lambda: proj(F.flatten(x4), r[(2, 108)]), [x4]),
        "getitem": (lambda: proj(F.getitem(a, np.array([2, 0, 2])), r34), [a]),
        "getitem_slices": (lambda: proj(F.getitem_slices(a, (slice(1, 3), slice(0, 4, 2))), r34[:2, :2]), [a]),
        "concat": (lambda: proj(F.concat([a, b], axis=1), r[(3, 8)]), [a, b]),
        "split": (lambda: F.add_n([proj(s, r34[:, :2] * (i + 1)) for i, s in enumerate(F.split(a, 2, axis=1))]),
                  [a]),
        "sum": (lambda: F.mul(F.sum(a), F.sum(a)), [a]),
        "mean": (lambda: F.mul(F.mean(a), F.mean(b)), [a, b]),
        "affine": (lambda: proj(F.affine(a, fw, fb), r[(3, 5)]), [a, fw, fb]),
        "conv2d_same": (lambda: proj(conv2d(x4, k, kb, 1, "same"), r[(2, 2, 6, 6)]), [x4, k, kb]),
        "conv2d_valid_s2": (lambda: proj(conv2d(x4, k, kb, 2, "valid"), r[(2, 2, 2, 2)]), [x4, k, kb]),
        "max_pool2d": (lambda: proj(F.max_pool2d(x4), r[(2, 3, 3, 3)]), [x4]),
        "upsample2d": (lambda: proj(F.upsample2d(x4, 2), r[(2, 3, 12, 12)]), [x4]),
        "relu": (lambda: proj(F.relu(a), r34), [a]),
        "tanh": (lambda: proj(F.tanh(a), r34), [a]),
        "softmax": (lambda: proj(F.softmax(a), r34), [a]),
        "mse": (lambda: F.mse(a, r34), [a]),
        "cross_entropy": (lambda: F.cross_entropy(pos, onehot * 0.7 + 0.1), [pos]),
    }
    return cases


KINK_MARGIN = 1e-4  # ten eps steps; a bias nudge moves its pre-activation by exactly eps


def smooth_inputs(model, seed, monkeypatch):
    """Draw a batch whose ReLU inputs all sit KINK_MARGIN away from zero.

    Central differences straddling a ReLU kink disagree with any subgradient,
    so such points say nothing about the backward pass. Returns (x, y, redraws).
    """
    seen = []
    relu = F.relu

    def spy(t):
        seen.append(np.abs(t.data).min())
        return relu(t)

    rng = np.random.default_rng(100 + seed)
    with monkeypatch.context() as m:
        m.setattr(F, "relu", spy)
        for redraws in range(50):
            x = rng.random((3, 1, 8, 8))
            seen.clear()
            model.forward(x)
            if min(seen) > KINK_MARGIN:
                break
    return x, np.eye(10)[rng.integers(0, 10, 3)], redraws


def test_c1_gradient_correctness(report, monkeypatch):
    t0 = time.perf_counter()
    worst, redraws = {}, 0
    with precision("f64"):
        for seed in range(10):
            for name, (f, params) in primitive_cases(np.random.default_rng(seed)).items():
                worst[name] = max(worst.get(name, 0.0), grad_check(f, params, eps=1e-5, seed=seed))
            model = build_network(parse_arch("rC4 C4 rC6 rF10", width=2, input_shape=(1, 8, 8), n_classes=10),
                                  seed=seed)
            assert sum(isinstance(l, RoutingLayer) for l in model.layers) == 3
            x, y, k = smooth_inputs(model, seed, monkeypatch)
            redraws += k
            err = grad_check(lambda: F.cross_entropy(model.forward(x), y), model.parameters(), eps=1e-5, seed=seed)
            worst["camnet2_micro"] = max(worst.get("camnet2_micro", 0.0), err)
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    report(1, ok, f"{len(worst) - 1} primitives + 3-routing-layer micro-network, 10 seeds: "
                  f"max rel err {worst[top]:.2e} ({top}), micro-net {worst['camnet2_micro']:.2e} "
                  f"({redraws} input redraws for ReLU margin), {elapsed:.1f}s")


# ---------------------------------------------------------------- 2

def test_c2_gate_normalisation(report):
    model = build_network(parse_arch("rC4 C4 rC8 C8 rF16 rF10", width=3, input_shape=(1, 8, 8), n_classes=10),
                          seed=1)
    randomise_gates(model, 1, scale=2.0)
    x = np.random.default_rng(2).random((1000, 1, 8, 8)).astype(np.float32)
    worst, rows, spread = 0.0, 0, 0.0
    for s in range(0, 1000, 250):
        record = []
        with F.no_grad():
            model.forward(x[s:s + 250], record=record)
        for _, _, g in record:
            if g is not None:
                worst = max(worst, float(np.abs(g.values.astype(np.float64).sum(axis=-1) - 1).max()))
                rows += g.values.shape[0] * g.values.shape[1]
                spread = max(spread, float(g.values.max() - g.values.min()))
    report(2, worst <= 1e-6 and spread > 0.1,
           f"{rows} gate rows over 1000 inputs (f32): max |row sum - 1| = {worst:.1e}, gates non-uniform "
           f"(spread {spread:.2f})")


# ---------------------------------------------------------------- 3

def test_c3_width1_collapse(report):
    with precision("f32"):
        cam = build_preset("camnet", width=1, seed=5)
        base = build_preset("basecnn", seed=6)
    copy_paths(cam.layers, base.layers)
    x = np.random.default_rng(3).random((100, 1, 28, 28)).astype(np.float32)
    a, b = cam.predict(x), base.predict(x)
    diff = float(np.abs(a - b).max())
    report(3, diff <= 1e-6 and cam.dtype == base.dtype == np.float32,
           f"CAMNet width 1 vs BaseCNN with copied weights, 100 inputs f32: max |diff| = {diff:.1e}")


# ---------------------------------------------------------------- 4

def test_c4_conv_oracle(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    with precision("f64"):
        for _ in range(50):
            c, co = rng.integers(1, 4, 2)
            h, w = rng.integers(3, 12, 2)
            kk = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 4))
            padding = str(rng.choice(["same", "valid"]))
            x, k, b = rng.standard_normal((c, h, w)), rng.standard_normal((co, c, kk, kk)), rng.standard_normal(co)
            out = conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=padding).data
            worst = max(worst, float(np.abs(out - naive_conv2d(x, k, b, stride, padding)).max()))
    report(4, worst <= 1e-10, f"50 random shape/stride/padding cases vs loop oracle (f64): max |diff| = {worst:.1e}")


# ---------------------------------------------------------------- 5

def test_c5_parameter_counts(report):
    target = published_params()
    got = {
        "base": count_params(build_preset("basecnn")),
        "camnet2": count_params(build_preset("camnet", width=2)),
        "camnet3": count_params(build_preset("camnet", width=3)),
        "camnet4": count_params(build_preset("camnet", width=4)),
        "tiny3": count_params(build_preset("tinycamnet", width=3)),
        "multi3": count_params(build_preset("multicnn", width=3)),
    }
    rel = {k: got[k] / (target[k] * 1e6) - 1 for k in got}
    within = all(abs(v) <= 0.20 for v in rel.values())
    order = got["tiny3"] < got["base"] < got["camnet2"] < got["camnet3"] < got["camnet4"]
    detail = ", ".join(f"{k} {got[k] / 1e6:.3f}M ({rel[k]:+.1%})" for k in got)
    report(5, within and order, f"{detail}; orderings {'hold' if order else 'broken'}")


# ---------------------------------------------------------------- 6-8 (real data)

def mnist_family(names):
    """(train, test) per name from $CAMNET_DATA, or a reason string."""
    root = os.environ.get(DATA_ENV)
    if not root:
        return f"${DATA_ENV} is not set; needs IDX files under $" + DATA_ENV + "/{" + ",".join(names) + "}"
    missing = [n for n in names if not os.path.isdir(os.path.join(root, n))]
    if missing:
        return f"missing dataset directories under {root}: {', '.join(missing)}"
    return None


def load_pair(name, domain, seed, n=10_000):
    return load_data(name, "train", domain, n, seed), load_data(name, "test", domain, None, seed)


def test_c6_desk_mnist(report):
    reason = mnist_family(["mnist"])
    if reason:
        report(6, False, f"not run: {reason}")
    errs = []
    for seed in range(3):
        train, test = load_pair("mnist", 0, seed)
        model = build_preset("tinycamnet", width=3, seed=seed)
        cfg = TrainConfig(lr=1e-3, epochs=10, batch_size=64, seed=seed, augment=AugmentConfig())
        _, m = train_classifier(model, train, cfg, test=test)
        errs.append(m.test_error[-1])
    mean = float(np.mean(errs))
    report(6, mean <= 0.03, f"tinyCAMNet3, 10k MNIST, augmented, 10 epochs: test error per seed "
                            f"{[round(e, 4) for e in errs]}, mean {mean:.2%} (limit 3.0%)")


def test_c7_joint_vs_identity(report):
    reason = mnist_family(["mnist", "fashion"])
    if reason:
        report(7, False, f"not run: {reason}")
    diffs = []
    for seed in range(3):
        parts = [load_pair(n, k, seed) for k, n in enumerate(["mnist", "fashion"])]
        train = make_joint([p[0] for p in parts])
        test = make_joint([p[1] for p in parts])
        errs = {}
        for mode in ("learned", "identity"):
            model = build_network(parse_arch(TINY_CAMNET, width=3), mode=mode, seed=seed)
            _, m = train_classifier(model, train, TrainConfig(epochs=10, seed=seed), test=test)
            errs[mode] = m.test_error[-1]
        diffs.append(errs["learned"] - errs["identity"])
    mean = float(np.mean(diffs))
    report(7, mean <= 0.005, f"joint MNIST+Fashion, routed minus identity-gate error per seed "
                             f"{[round(d, 4) for d in diffs]}, signed mean {mean * 100:+.2f} pp (limit +0.5 pp)")


def test_c8_lwf_retention(report):
    # the lambda=0 code-path equivalence does not need real data; check it first
    with precision("f64"):
        rng = np.random.default_rng(0)
        toy = ImageDataset("toy", 0, rng.random((30, 1, 8, 8)), rng.integers(0, 10, 30))
        arch = parse_arch("rC4 C4 rF10", width=2, input_shape=(1, 8, 8), n_classes=10)
        cfg = TrainConfig(batch_size=10, epochs=2, seed=1, precision="f64")
        a = add_task_head(add_task_head(build_network(arch)))
        _, ma = lwf_train(a, toy, LwFConfig(lambda_old=0.0), cfg)
        b = add_task_head(add_task_head(build_network(arch)))
        _, mb = train_classifier(b, toy, cfg, head=b.active_head)
        gap = float(np.abs(np.subtract(ma.train_loss, mb.train_loss)).max())
    reason = mnist_family(["mnist", "fashion"])
    if reason:
        report(8, False, f"not run: {reason} (lambda=0 vs fine-tuning loss gap {gap:.1e} on toy data)")
    margins = []
    for seed in range(3):
        phases = [(n, *load_pair(n, k, seed)) for k, n in enumerate(["mnist", "fashion"])]
        acc = {}
        for lam in (1.0, 0.0):
            model = build_preset("tinycamnet", width=3, seed=seed)
            _, hist = run_lifelong(model, phases, LwFConfig(lambda_old=lam, temperature=2.0),
                                   TrainConfig(epochs=5, seed=seed))
            acc[lam] = hist.accuracy(2, "mnist")
        margins.append(acc[1.0] - acc[0.0])
    mean = float(np.mean(margins))
    report(8, mean > 0 and gap <= 1e-12,
           f"phase-2 MNIST accuracy, LwF minus fine-tuning per seed {[round(m, 4) for m in margins]}, "
           f"mean {mean:+.4f}; lambda=0 loss gap {gap:.1e}")


# ---------------------------------------------------------------- 9-10 (synthetic)

SIZE, PER_DOMAIN, EPOCHS, BINS = 32, 128, 10, 10


def synth_run(seed, mode):
    roads = synth_pairs(1000 + seed, PER_DOMAIN, SIZE, "roads", domain_id=0)
    facades = synth_pairs(2000 + seed, PER_DOMAIN, SIZE, "facades", domain_id=1)
    model = build_encdec(2, deep=True, input_shape=(3, SIZE, SIZE), mode=mode, seed=seed)
    init_tv = weight_histograms(model, bins=BINS).max_tv()[1]
    cfg = TrainConfig(lr=1e-3, batch_size=16, epochs=EPOCHS, seed=seed)
    train_translator(model, make_joint([roads, facades]), cfg)
    probe_r = synth_pairs(3000 + seed, 32, SIZE, "roads")
    probe_f = synth_pairs(4000 + seed, 32, SIZE, "facades")
    traces = capture_traces(model, np.concatenate([probe_r.images, probe_f.images]), [0] * 32 + [1] * 32)
    div = gate_divergence(traces) if mode == "learned" else None
    layer, tv = weight_histograms(model, bins=BINS).max_tv()
    return {"div": div, "tv": tv, "tv_layer": layer, "init_tv": init_tv}


@pytest.fixture(scope="module")
def synth_runs():
    return {seed: synth_run(seed, "learned") for seed in range(3)}, synth_run(0, "identity")


def test_c9_routing_divergence(report, synth_runs):
    runs, _ = synth_runs
    hits = [bool(np.any(r["div"] > 0.1)) for r in runs.values()]
    vecs = "; ".join(f"seed {s}: [{', '.join(f'{v:.3f}' for v in r['div'])}]" for s, r in runs.items())
    report(9, sum(hits) >= 2, f"width-2 deep encdec, roads+facades, {EPOCHS} epochs: divergence per routing "
                              f"layer {vecs}; >0.1 somewhere in {sum(hits)}/3 seeds")


def test_c10_weight_histograms(report, synth_runs):
    runs, control = synth_runs
    hits = [r["tv"] >= 0.05 for r in runs.values()]
    per_seed = ", ".join(f"{r['tv']:.3f} ({r['tv_layer']}, init {r['init_tv']:.3f})" for r in runs.values())
    report(10, sum(hits) >= 2, f"largest per-path TV at {BINS} bins after criterion-9 training, "
                               f">= 0.05 in {sum(hits)}/3 seeds (need 2): {per_seed}; "
                               f"identity-gate control {control['tv']:.3f} ({control['tv_layer']}, "
                               f"init {control['init_tv']:.3f})")


# ---------------------------------------------------------------- 11

def test_c11_round_trips(report, tmp_path):
    rng = np.random.default_rng(11)
    imgs = rng.integers(0, 256, (7, 5, 6), dtype=np.uint8)
    labs = rng.integers(0, 10, 7, dtype=np.uint8)
    (tmp_path / "i").write_bytes(encode_idx(imgs))
    (tmp_path / "l").write_bytes(encode_idx(labs))
    from camnet.data import load_idx
    save_idx(load_idx(tmp_path / "i", tmp_path / "l"), tmp_path / "i2", tmp_path / "l2")
    idx_ok = ((tmp_path / "i2").read_bytes() == (tmp_path / "i").read_bytes()
              and (tmp_path / "l2").read_bytes() == (tmp_path / "l").read_bytes()
              and encode_idx(parse_idx(encode_idx(imgs))) == encode_idx(imgs))

    ck_ok = True
    for prec in ("f32", "f64"):
        with precision(prec):
            model = build_preset("tinycamnet", width=2, seed=3)
            x = rng.random((4, 1, 28, 28)).astype(model.dtype)
            save_checkpoint(model, tmp_path / f"m{prec}.bin")
            loaded = load_checkpoint(tmp_path / f"m{prec}.bin")
            ck_ok &= np.array_equal(model.predict(x), loaded.predict(x))
            ck_ok &= decode_checkpoint(encode_checkpoint(loaded))[0]["arch"] == model.config["arch"]

    arch_ok = all(render_arch(parse_arch(s)) == s for s in (BASECNN, BASECNN2, CAMNET, TINY_CAMNET))
    report(11, idx_ok and ck_ok and arch_ok,
           f"IDX re-serialisation byte-identical: {idx_ok}; checkpoint forward bitwise (f32, f64): {ck_ok}; "
           f"arch parse/render on 4 table strings: {arch_ok}")


# ---------------------------------------------------------------- 12

def test_c12_cli_determinism(report, tmp_path):
    rng = np.random.default_rng(12)
    labels = rng.integers(0, 10, 48)
    images = rng.random((48, 1, 12, 12)) * 0.3
    images[np.arange(48), 0, labels, 1:11] = 1.0
    ds = ImageDataset("d", 0, images, labels)
    save_idx(ds.take(np.arange(32)), tmp_path / "tr_i", tmp_path / "tr_l")
    save_idx(ds.take(np.arange(32, 48)), tmp_path / "te_i", tmp_path / "te_l")
    spec = f"d:{tmp_path / 'tr_i'},{tmp_path / 'tr_l'},{tmp_path / 'te_i'},{tmp_path / 'te_l'}"
    runs = {
        "train": ["train", "--arch", "rC4 C4 rF10", "--width", "2", "--data", spec, "--augment"],
        "joint": ["joint", "--data", "synth:roads", "--data", "synth:facades", "--arch", "encdec", "--width", "2",
                  "--synth-n", "16", "--synth-size", "8"],
    }
    same = {}
    for name, argv in runs.items():
        outs = []
        for rep in range(2):
            out = tmp_path / f"{name}{rep}"
            code = run(argv + ["--epochs", "2", "--batch-size", "8", "--precision", "f64", "--seed", "7",
                               "--out", str(out), "--no-figures"])
            assert code == 0
            outs.append((out / "metrics.csv").read_bytes())
        same[name] = outs[0] == outs[1]
    report(12, all(same.values()), "repeated CLI runs, f64, same seed, byte-identical metrics.csv: " +
           ", ".join(f"{k} {v}" for k, v in same.items()))
