"""Slow, obviously-correct reference implementations used only by tests."""

import math
import re
from pathlib import Path

import numpy as np

from camnet.arch import ForwardLayer
from camnet.routing import RoutingLayer


def naive_affine(x, w, b):
    out_n, in_n = w.shape
    out = np.zeros(out_n)
    for k in range(out_n):
        acc = 0.0
        for q in range(in_n):
            acc += w[k, q] * x[q]
        out[k] = acc + b[k]
    return out


def same_pads(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def naive_conv2d(x, k, b, stride=1, padding="same"):
    """Cross-correlation of one (C, H, W) image, explicit loops."""
    cin, h, w = x.shape
    cout, _, kh, kw = k.shape
    if padding == "same":
        top, bottom = same_pads(h, kh, stride)
        left, right = same_pads(w, kw, stride)
    else:
        top = bottom = left = right = 0
    hp, wp = h + top + bottom, w + left + right
    xp = np.zeros((cin, hp, wp))
    xp[:, top:top + h, left:left + w] = x
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for co in range(cout):
        for oy in range(ho):
            for ox in range(wo):
                acc = b[co]
                for ci in range(cin):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += k[co, ci, dy, dx] * xp[ci, oy * stride + dy, ox * stride + dx]
                out[co, oy, ox] = acc
    return out


def exp_normalise(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def count_classifier_params(tokens, width, input_shape=(1, 28, 28), n_classes=10, identity=False,
                            kernel=3):
    """Analytic parameter count for a token list, pooling between convs whose
    channel counts differ. ``tokens`` are (routing, kind, units) triples."""
    c, h, w = input_shape
    paths = 1
    flat = None
    total = 0
    for k, (routing, kind, units) in enumerate(tokens):
        last = k == len(tokens) - 1
        if kind == "F" and flat is None:
            flat = c * h * w
        if routing:
            n = 1 if last else width
            m = paths
            if identity:
                pairs = m if m == n else max(m, n)
            else:
                pairs = m * n
            if kind == "C":
                total += pairs * (kernel * kernel * c * units + units)
                if not identity:
                    total += m * ((c + 1) + h * w * n + n)
            else:
                total += pairs * (flat * units + units)
                if not identity:
                    total += m * (flat * n + n)
            paths = n
        else:
            if kind == "C":
                total += paths * (kernel * kernel * c * units + units)
            else:
                total += paths * (flat * units + units)
        if kind == "C":
            c = units
            nxt = tokens[k + 1] if k + 1 < len(tokens) else None
            if nxt is not None and nxt[1] == "C" and nxt[2] != units:
                h, w = h // 2, w // 2
        else:
            flat = units
    return total


def tokens_of(text):
    out = []
    for tok in text.split():
        routing = tok.startswith("r")
        body = tok[1:] if routing else tok
        out.append((routing, body[0], int(body[1:])))
    return out


def copy_paths(src_layers, dst_layers, src_path=0):
    """Copy weights path-by-path from a routing model into a single-path model."""
    for s, d in zip(src_layers, dst_layers):
        if isinstance(s, RoutingLayer):
            i = 0 if s.m == 1 else src_path
            j = 0 if s.n == 1 else src_path
            w, b = s.pred_params[(i, j)]
            dw, db = d.weights[0]
        elif isinstance(s, ForwardLayer):
            w, b = s.weights[src_path]
            dw, db = d.weights[0]
        else:
            continue
        dw.data[...] = w.data
        db.data[...] = b.data


REFERENCE = Path(__file__).resolve().parents[1] / "paper.md"


def published_params():
    """Params(M) row of the classification table in the reference text."""
    row = re.search(r"Params\(M\)\s*&(.*?)\\\\", REFERENCE.read_text()).group(1)
    vals = [float(v) for v in re.findall(r"[\d.]+", re.sub(r"\\multicolumn\{2\}\{c\}", "", row))]
    # BaseCNN, MultiCNN3, CAMNet2, CAMNet3, tinyCAMNet3, CAMNet4, then two baselines we do not build
    return dict(zip(["base", "multi3", "camnet2", "camnet3", "tiny3", "camnet4"], vals))
