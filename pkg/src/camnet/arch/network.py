"""Network assembly: routing layers, per-path forward layers and heads."""

from __future__ import annotations

import math

import numpy as np

from camnet.arch.parser import (
    BASECNN,
    BASECNN2,
    CAMNET,
    TINY_CAMNET,
    ArchSpec,
    default_pool_after,
    parse_arch,
    render_arch,
    validate,
)
from camnet.engine import functional as F
from camnet.engine.rng import named_rng
from camnet.engine.tensor import Parameter, Tensor, get_dtype, get_precision
from camnet.errors import ContractError, DimensionError
from camnet.routing import RoutingLayer, he_uniform


class ForwardLayer:
    """Per-path conv or dense layer with no cross-path connections."""

    def __init__(self, paths, kind, in_shape, units, activation="relu", *, name, rng,
                 kernel=3, stride=1, dtype=None):
        self.paths = paths
        self.kind = kind
        self.in_shape = tuple(in_shape)
        self.units = units
        self.activation = activation
        self.name = name
        self.kernel = kernel
        self.stride = stride
        dtype = dtype or get_dtype()
        self.weights = []
        for p in range(paths):
            if kind == "conv":
                cin = self.in_shape[0]
                w = he_uniform(rng, (units, cin, kernel, kernel), cin * kernel * kernel, dtype)
            else:
                w = he_uniform(rng, (units, self.in_shape[0]), self.in_shape[0], dtype)
            self.weights.append((Parameter(w, f"{name}.path{p + 1}.w", dtype=dtype),
                                 Parameter(np.zeros(units, dtype=dtype), f"{name}.path{p + 1}.b", dtype=dtype)))

    @property
    def out_shape(self):
        if self.kind == "dense":
            return (self.units,)
        _, h, w = self.in_shape
        return (self.units, -(-h // self.stride), -(-w // self.stride))

    def parameters(self):
        return [p for pair in self.weights for p in pair]

    def forward(self, inputs, activation=None):
        act = self.activation if activation is None else activation
        outs = []
        for x, (w, b) in zip(inputs, self.weights):
            if self.kind == "conv":
                y = F.conv2d(x, w, b, stride=self.stride, padding="same")
            else:
                y = F.affine(x, w, b)
            outs.append(F.activate(y, act))
        return outs, None

    def __repr__(self):
        return f"ForwardLayer({self.name}, paths={self.paths}, {self.kind}{self.units}, f={self.activation})"


class Pool:
    name = "pool"

    def __init__(self, in_shape, size=2):
        self.in_shape = tuple(in_shape)
        self.size = size

    @property
    def out_shape(self):
        c, h, w = self.in_shape
        return (c, h // self.size, w // self.size)

    def parameters(self):
        return []

    def forward(self, inputs, activation=None):
        return [F.max_pool2d(x, self.size) for x in inputs], None

    def __repr__(self):
        return f"Pool({self.size})"


class Flatten:
    name = "flatten"

    def __init__(self, in_shape):
        self.in_shape = tuple(in_shape)

    @property
    def out_shape(self):
        return (int(np.prod(self.in_shape)),)

    def parameters(self):
        return []

    def forward(self, inputs, activation=None):
        return [F.flatten(x) for x in inputs], None

    def __repr__(self):
        return "Flatten()"


class NetworkModel:
    """A shared trunk followed by one or more task heads.

    ``forward`` runs the trunk and the selected head; the output of the
    final layer is a single tensor (the network is single-input single-output).
    """

    def __init__(self, trunk, head, width, config, dtype):
        self.trunk = list(trunk)
        self.heads = [list(head)]
        self.head_frozen = [False]
        self.width = width
        self.config = dict(config)
        self.dtype = dtype
        self.active_head = 0
        self.n_tasks = 0  # heads claimed by lifelong training
        self._head_builder = None
        self._check_names()

    # ------------------------------------------------------------ parameters

    @property
    def layers(self):
        out = list(self.trunk)
        for h in self.heads:
            out.extend(h)
        return out

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def head_parameters(self, head):
        return [p for layer in self.heads[head] for p in layer.parameters()]

    def trunk_parameters(self):
        return [p for layer in self.trunk for p in layer.parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state, strict=True):
        params = self.named_parameters()
        if strict and set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ContractError(f"state mismatch; missing={missing[:5]}, unexpected={extra[:5]}")
        for name, value in state.items():
            if name not in params:
                continue
            p = params[name]
            if p.data.shape != tuple(value.shape):
                raise DimensionError(f"{name}: stored shape {value.shape} != parameter shape {p.data.shape}")
            p.data[...] = value

    def _check_names(self):
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ContractError(f"duplicate parameter names: {dup[:5]}")

    @property
    def routing_layers(self):
        return [layer for layer in self.trunk + self.heads[self.active_head] if isinstance(layer, RoutingLayer)]

    # ------------------------------------------------------------ heads

    def add_head(self):
        """Append a freshly initialised head (same structure as the first)."""
        if self._head_builder is None:
            raise ContractError("this model does not support extra heads")
        index = len(self.heads)
        head = self._head_builder(index)
        self.heads.append(head)
        self.head_frozen.append(False)
        self.active_head = index
        self._check_names()
        return index

    def freeze_head(self, head):
        self.head_frozen[head] = True
        for p in self.head_parameters(head):
            p.trainable = False

    # ------------------------------------------------------------ forward

    def _prepare(self, x):
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        single = data.ndim == len(self.config["input_shape"])
        if single:
            data = data[None]
        if tuple(data.shape[1:]) != tuple(self.config["input_shape"]):
            raise DimensionError(f"input shape {data.shape[1:]} does not match model input "
                                 f"{tuple(self.config['input_shape'])}")
        return Tensor(np.ascontiguousarray(data, dtype=self.dtype)), single

    def run_trunk(self, x, record=None):
        paths = [x]
        for layer in self.trunk:
            paths, gates = layer.forward(paths)
            if record is not None:
                record.append((layer, paths, gates))
        return paths

    def run_head(self, paths, head, logits=False, record=None):
        layers = self.heads[head]
        for k, layer in enumerate(layers):
            last = k == len(layers) - 1
            act = "none" if (last and logits) else None
            paths, gates = layer.forward(paths, activation=act)
            if record is not None:
                record.append((layer, paths, gates))
        if len(paths) != 1:
            raise ContractError(f"head ended with {len(paths)} tensors; expected 1")
        return paths[0]

    def forward(self, x, head=None, logits=False, record=None):
        """Batched (or single-sample) forward pass returning a Tensor."""
        head = self.active_head if head is None else head
        t, single = self._prepare(x)
        out = self.run_head(self.run_trunk(t, record), head, logits, record)
        if single:
            out = F.reshape(out, out.shape[1:])
        return out

    def forward_heads(self, x, heads, logits=True):
        """Trunk once, then each requested head. Returns a list of Tensors."""
        t, _ = self._prepare(x)
        paths = self.run_trunk(t)
        return [self.run_head(paths, h, logits) for h in heads]

    __call__ = forward

    def predict(self, x, head=None, batch_size=256):
        """Numpy outputs, computed without building a graph."""
        data = np.asarray(x)
        outs = []
        with F.no_grad():
            for s in range(0, len(data), batch_size):
                outs.append(self.forward(data[s:s + batch_size], head=head).data)
        if not outs:
            return np.zeros((0,) + self.output_shape, dtype=self.dtype)
        return np.concatenate(outs, axis=0)

    @property
    def output_shape(self):
        last = self.heads[0][-1]
        return tuple(last.out_shape)

    def __repr__(self):
        lines = [f"NetworkModel(width={self.width}, params={count_params(self)})"]
        lines += [f"  {layer!r}" for layer in self.trunk]
        for h, head in enumerate(self.heads):
            tag = " (frozen)" if self.head_frozen[h] else ""
            lines.append(f"  head {h}{tag}:")
            lines += [f"    {layer!r}" for layer in head]
        return "\n".join(lines)


def count_params(model: NetworkModel) -> int:
    """Total number of scalar parameters."""
    return int(sum(p.data.size for p in model.parameters()))


# ---------------------------------------------------------------- classifiers

def _default_head_tokens(tokens) -> int:
    n = 0
    for t in reversed(tokens):
        if t.routing and t.kind == "dense":
            n += 1
        else:
            break
    return max(n, 1)


def build_network(spec: ArchSpec, mode: str = "learned", seed: int = 0, head_tokens: int | None = None,
                  reduce_channels: int = 1) -> NetworkModel:
    """Instantiate a classifier (or any preset-style network) from ``spec``.

    ``mode="identity"`` freezes every routing layer to parallel, non-mixing
    paths whose outputs are averaged at the end (the MultiCNN baseline).
    """
    validate(spec)
    tokens = spec.tokens
    width = spec.width
    pool_after = set(spec.pool_after if spec.pool_after is not None else default_pool_after(tokens))
    head_tokens = head_tokens or _default_head_tokens(tokens)
    if head_tokens >= len(tokens):
        raise ContractError(f"head of {head_tokens} tokens leaves no trunk in a {len(tokens)}-token network")
    head_start = len(tokens) - head_tokens
    dtype = get_dtype()
    final_act = "softmax" if spec.head == "softmax" else "tanh"

    def build_range(lo, hi, paths, shape, prefix, rng):
        layers = []
        for k in range(lo, hi):
            tok = tokens[k]
            idx = k + 1
            last = k == len(tokens) - 1
            act = final_act if last else "relu"
            if tok.kind == "dense" and len(shape) == 3:
                layers.append(Flatten(shape))
                shape = layers[-1].out_shape
            if tok.kind == "conv" and len(shape) != 3:
                raise ContractError(f"conv token {tok.render()} at position {idx} after flatten")
            name = f"{prefix}layer{idx}"
            if tok.routing:
                n = 1 if last else width
                layer = RoutingLayer(paths, n, tok.kind, shape, tok.units, act, name=name, rng=rng,
                                     mode=mode, reduce_channels=reduce_channels, dtype=dtype)
                paths = n
            else:
                layer = ForwardLayer(paths, tok.kind, shape, tok.units, act, name=name, rng=rng, dtype=dtype)
            layers.append(layer)
            shape = layer.out_shape
            if idx in pool_after:
                layers.append(Pool(shape))
                shape = layers[-1].out_shape
        return layers, paths, shape

    rng = named_rng(seed, "init")
    trunk, paths, shape = build_range(0, head_start, 1, spec.input_shape, "", rng)
    head, out_paths, _ = build_range(head_start, len(tokens), paths, shape, "", rng)
    if out_paths != 1:
        raise ContractError(f"network ends with {out_paths} parallel tensors; expected 1")

    config = {
        "kind": "classifier",
        "arch": render_arch(spec),
        "width": width,
        "input_shape": list(spec.input_shape),
        "head": spec.head,
        "n_classes": spec.n_classes,
        "pool_after": sorted(pool_after),
        "mode": mode,
        "seed": seed,
        "head_tokens": head_tokens,
        "reduce_channels": reduce_channels,
        "precision": get_precision(),
    }
    model = NetworkModel(trunk, head, width, config, dtype)

    def head_builder(index):
        layers, _, _ = build_range(head_start, len(tokens), paths, shape, f"task{index + 1}.",
                                   named_rng(seed, f"init.head{index + 1}"))
        return layers

    model._head_builder = head_builder
    return model


PRESETS = {
    "basecnn": (BASECNN, 1, "learned"),
    "basecnn2": (BASECNN2, 1, "learned"),
    "camnet": (CAMNET, None, "learned"),
    "tinycamnet": (TINY_CAMNET, None, "learned"),
    "multicnn": (CAMNET, None, "identity"),
}


def build_preset(name: str, width: int = 1, input_shape=(1, 28, 28), n_classes: int = 10, seed: int = 0,
                 pool_after=None) -> NetworkModel:
    """``basecnn``, ``basecnn2``, ``camnet``, ``tinycamnet`` or ``multicnn``."""
    key = name.lower()
    if key not in PRESETS:
        raise ContractError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    text, fixed_width, mode = PRESETS[key]
    if key == "basecnn2" and pool_after is None:
        pool_after = (2, 4, 7)
    spec = parse_arch(text, width=fixed_width or width, input_shape=input_shape, n_classes=n_classes)
    spec.pool_after = tuple(pool_after) if pool_after is not None else None
    return build_network(spec, mode=mode, seed=seed)


# ---------------------------------------------------------------- encoder-decoder

def build_encdec(width: int, deep: bool = False, input_shape=(3, 32, 32), base: int = 16,
                 levels: int | None = None, out_channels: int | None = None, mode: str = "learned",
                 seed: int = 0, reduce_channels: int = 1) -> NetworkModel:
    """Symmetric encoder-decoder made of routing conv layers, tanh output.

    The encoder halves the resolution ``levels`` times with stride-2 routing
    convolutions; the decoder upsamples (nearest) and convolves back. The deep
    variant adds a per-path forward convolution after every routing layer
    except the output one.
    """
    if width < 1:
        raise ContractError(f"width must be >= 1, got {width}")
    c, h, w = input_shape
    if h != w or h < 4 or (h & (h - 1)) != 0:
        raise DimensionError(f"encoder-decoder input must be square with a power-of-two extent, got {h}x{w}")
    if levels is None:
        levels = max(1, int(math.log2(h)) - 2)
    if h >> levels < 1:
        raise DimensionError(f"{levels} levels is too deep for extent {h}")
    out_channels = out_channels or c
    dtype = get_dtype()
    rng = named_rng(seed, "init")

    layers = []
    shape = (c, h, w)
    paths = 1
    route_no = 0

    def add_route(units, act, n, stride=1, upsample=1):
        nonlocal shape, paths, route_no
        route_no += 1
        layer = RoutingLayer(paths, n, "conv", shape, units, act, name=f"route{route_no}", rng=rng,
                             stride=stride, upsample=upsample, mode=mode, reduce_channels=reduce_channels,
                             dtype=dtype)
        layers.append(layer)
        shape, paths = layer.out_shape, n
        if deep and act != "tanh":
            fwd = ForwardLayer(paths, "conv", shape, units, "relu", name=f"forw{route_no}", rng=rng, dtype=dtype)
            layers.append(fwd)
            shape = fwd.out_shape

    for k in range(levels):
        add_route(base * 2 ** k, "relu", width, stride=2)
    for k in reversed(range(levels)):
        add_route(base * 2 ** max(k - 1, 0), "relu", width, upsample=2)
    add_route(out_channels, "tanh", 1)

    config = {
        "kind": "encdec",
        "width": width,
        "deep": bool(deep),
        "input_shape": [c, h, w],
        "base": base,
        "levels": levels,
        "out_channels": out_channels,
        "mode": mode,
        "seed": seed,
        "reduce_channels": reduce_channels,
        "head": "tanh",
        "precision": get_precision(),
    }
    # the whole network is trunk + a one-layer head so heads stay uniform
    return NetworkModel(layers[:-1], layers[-1:], width, config, dtype)


def build_from_config(config: dict) -> NetworkModel:
    """Rebuild an untrained model from the ``config`` stored in a checkpoint."""
    if config["kind"] == "encdec":
        return build_encdec(config["width"], config["deep"], tuple(config["input_shape"]), config["base"],
                            config["levels"], config["out_channels"], config["mode"], config["seed"],
                            config.get("reduce_channels", 1))
    spec = parse_arch(config["arch"], width=config["width"], input_shape=tuple(config["input_shape"]),
                      head=config["head"], n_classes=config["n_classes"])
    spec.pool_after = tuple(config["pool_after"])
    model = build_network(spec, mode=config["mode"], seed=config["seed"], head_tokens=config["head_tokens"],
                          reduce_channels=config.get("reduce_channels", 1))
    for _ in range(config.get("n_heads", 1) - 1):
        model.add_head()
    return model
