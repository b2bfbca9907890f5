"""Routing between parallel tensors.

Each of ``m`` source tensors predicts every one of ``n`` destination tensors
(a conv or dense map per pair) and emits a softmax gate vector over the
destinations. Destination ``j`` is ``f(sum_i g_ij * t_ij)``.

The sum runs over the ``m`` sources arriving at ``j``.
"""

from __future__ import annotations

import numpy as np

from camnet.engine import functional as F
from camnet.engine.tensor import Parameter, Tensor, get_dtype
from camnet.errors import DimensionError


def he_uniform(rng, shape, fan_in, dtype=None):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype or get_dtype())


class GateMatrix:
    """Gate probabilities g_ij, shape (m, n) or batched (B, m, n)."""

    def __init__(self, values):
        self.values = np.asarray(values)

    @property
    def m(self):
        return self.values.shape[-2]

    @property
    def n(self):
        return self.values.shape[-1]

    def row_sums(self):
        return self.values.sum(axis=-1)

    def __getitem__(self, index):
        return GateMatrix(self.values[index])

    def __repr__(self):
        return f"GateMatrix(shape={self.values.shape})"


class RoutingLayer:
    """m -> n routing with learned, data-dependent gates.

    ``mode="identity"`` replaces the learned gates by fixed mixing (source i
    feeds destination i; a single source feeds every destination; several
    sources into one destination are averaged) and only instantiates the
    prediction maps that the fixed mixing uses. That is the parallel,
    non-communicating baseline.
    """

    def __init__(self, m, n, kind, in_shape, units, activation="relu", *, name="routing",
                 rng=None, kernel=3, stride=1, upsample=1, reduce_channels=1, mode="learned",
                 dtype=None):
        if kind not in ("conv", "dense"):
            raise ValueError(f"kind must be 'conv' or 'dense', got {kind!r}")
        if mode not in ("learned", "identity"):
            raise ValueError(f"mode must be 'learned' or 'identity', got {mode!r}")
        if mode == "identity" and not (m == n or m == 1 or n == 1):
            raise DimensionError(f"identity routing needs m == n, m == 1 or n == 1; got {m}->{n}")
        self.m, self.n = m, n
        self.kind = kind
        self.in_shape = tuple(in_shape)
        self.units = units
        self.activation = activation
        self.name = name
        self.kernel = kernel
        self.stride = stride
        self.upsample = upsample
        self.reduce_channels = reduce_channels
        self.mode = mode
        dtype = dtype or get_dtype()
        rng = rng if rng is not None else np.random.default_rng(0)

        self.pred_params = {}
        for i, j in self.pred_pairs():
            if kind == "conv":
                cin = self.in_shape[0]
                fan_in = cin * kernel * kernel
                w = he_uniform(rng, (units, cin, kernel, kernel), fan_in, dtype)
            else:
                fan_in = self.in_shape[0]
                w = he_uniform(rng, (units, fan_in), fan_in, dtype)
            self.pred_params[(i, j)] = (
                Parameter(w, f"{name}.pred.w_{i + 1}_{j + 1}", dtype=dtype),
                Parameter(np.zeros(units, dtype=dtype), f"{name}.pred.b_{i + 1}_{j + 1}", dtype=dtype),
            )

        self.gate_params = []
        if mode == "learned":
            for i in range(m):
                entry = {}
                if kind == "conv":
                    cin, h, w_ = self.in_shape
                    r = reduce_channels
                    entry["reduce_w"] = Parameter(he_uniform(rng, (r, cin, 1, 1), cin, dtype),
                                                  f"{name}.gate.reduce_w_{i + 1}", dtype=dtype)
                    entry["reduce_b"] = Parameter(np.zeros(r, dtype=dtype), f"{name}.gate.reduce_b_{i + 1}",
                                                  dtype=dtype)
                    feat = r * h * w_
                else:
                    feat = self.in_shape[0]
                # zero gate weights: uniform routing at the start of training
                entry["w"] = Parameter(np.zeros((n, feat), dtype=dtype), f"{name}.gate.w_{i + 1}", dtype=dtype)
                entry["b"] = Parameter(np.zeros(n, dtype=dtype), f"{name}.gate.b_{i + 1}", dtype=dtype)
                self.gate_params.append(entry)

    # ------------------------------------------------------------ structure

    def pred_pairs(self):
        if self.mode == "learned":
            return [(i, j) for i in range(self.m) for j in range(self.n)]
        if self.m == 1:
            return [(0, j) for j in range(self.n)]
        if self.n == 1:
            return [(i, 0) for i in range(self.m)]
        return [(i, i) for i in range(self.m)]

    def fixed_mix(self):
        """Mixing matrix used in identity mode."""
        mix = np.zeros((self.m, self.n))
        for i, j in self.pred_pairs():
            mix[i, j] = 1.0
        if self.n == 1 and self.m > 1:
            mix /= self.m
        return mix

    def parameters(self):
        out = []
        for i, j in self.pred_pairs():
            out.extend(self.pred_params[(i, j)])
        for entry in self.gate_params:
            out.extend(entry[k] for k in ("reduce_w", "reduce_b", "w", "b") if k in entry)
        return out

    @property
    def out_shape(self):
        if self.kind == "dense":
            return (self.units,)
        _, h, w = self.in_shape
        h, w = h * self.upsample, w * self.upsample
        return (self.units, -(-h // self.stride), -(-w // self.stride))

    # ------------------------------------------------------------ operations

    def _check_inputs(self, inputs):
        if len(inputs) != self.m:
            raise DimensionError(f"{self.name}: expected {self.m} source tensors, got {len(inputs)}")
        per_sample = 3 if self.kind == "conv" else 1
        batched = None
        for t in inputs:
            if t.ndim == per_sample:
                b = False
                sample_shape = t.shape
            elif t.ndim == per_sample + 1:
                b = True
                sample_shape = t.shape[1:]
            else:
                raise DimensionError(f"{self.name}: {self.kind} routing needs rank {per_sample} inputs, got {t.shape}")
            if tuple(sample_shape) != self.in_shape:
                raise DimensionError(f"{self.name}: input shape {tuple(sample_shape)} does not match "
                                     f"layer input {self.in_shape}")
            if batched is not None and b != batched:
                raise DimensionError(f"{self.name}: mixed batched and unbatched inputs")
            batched = b
        if batched:
            return list(inputs), True
        return [F.reshape(t, (1,) + t.shape) for t in inputs], False

    def _predict_batched(self, inputs):
        grid = {}
        for i in range(self.m):
            targets = [j for (s, j) in self.pred_pairs() if s == i]
            if not targets:
                continue
            ws = [self.pred_params[(i, j)][0] for j in targets]
            bs = [self.pred_params[(i, j)][1] for j in targets]
            w = ws[0] if len(ws) == 1 else F.concat(ws, axis=0)
            b = bs[0] if len(bs) == 1 else F.concat(bs, axis=0)
            if self.kind == "conv":
                src = inputs[i]
                if self.upsample > 1:
                    src = F.upsample2d(src, self.upsample)
                out = F.conv2d(src, w, b, stride=self.stride, padding="same")
                parts = F.split(out, len(targets), axis=1) if len(targets) > 1 else [out]
            else:
                out = F.affine(inputs[i], w, b)
                parts = F.split(out, len(targets), axis=1) if len(targets) > 1 else [out]
            for j, part in zip(targets, parts):
                grid[(i, j)] = part
        return grid

    def _gates_batched(self, inputs):
        """Per source, (B, n) gate probabilities as graph tensors."""
        rows = []
        for i in range(self.m):
            entry = self.gate_params[i]
            src = inputs[i]
            if self.kind == "conv":
                red = F.conv2d(src, entry["reduce_w"], entry["reduce_b"], stride=1, padding="valid")
                feat = F.flatten(red)
            else:
                feat = src
            rows.append(F.softmax(F.affine(feat, entry["w"], entry["b"])))
        return rows

    def _construct_batched(self, grid, gate_rows, activation=None):
        activation = self.activation if activation is None else activation
        outs = []
        for j in range(self.n):
            terms = []
            for i in range(self.m):
                if (i, j) not in grid:
                    continue
                t = grid[(i, j)]
                g = gate_rows[i]
                if isinstance(g, Tensor):
                    col = F.getitem_slices(g, (slice(None), slice(j, j + 1)))
                    col = F.reshape(col, (t.shape[0],) + (1,) * (t.ndim - 1))
                    terms.append(F.mul(t, col))
                elif float(g[j]) == 1.0:
                    terms.append(t)
                else:
                    terms.append(F.mul(t, float(g[j])))
            if terms:
                total = F.add_n(terms)
            else:
                any_t = next(iter(grid.values()))
                total = Tensor(np.zeros(any_t.shape, dtype=any_t.dtype))
            outs.append(F.activate(total, activation))
        return outs

    def predict(self, inputs):
        """m x n grid (nested lists) of predictions t_ij; absent pairs are None."""
        xs, batched = self._check_inputs(inputs)
        grid = self._predict_batched(xs)
        out = [[None] * self.n for _ in range(self.m)]
        for (i, j), t in grid.items():
            out[i][j] = t if batched else F.reshape(t, t.shape[1:])
        return out

    def compute_gates(self, inputs) -> GateMatrix:
        xs, batched = self._check_inputs(inputs)
        if self.mode == "identity":
            mix = self.fixed_mix()
            vals = mix if not batched else np.broadcast_to(mix, (xs[0].shape[0],) + mix.shape).copy()
            return GateMatrix(vals)
        with F.no_grad():
            rows = self._gates_batched(xs)
        vals = np.stack([r.data for r in rows], axis=1)
        return GateMatrix(vals if batched else vals[0])

    def construct(self, preds, gates: GateMatrix):
        """Destination tensors from a prediction grid and a gate matrix."""
        g = np.asarray(gates.values if isinstance(gates, GateMatrix) else gates)
        if g.shape[-2:] != (self.m, self.n):
            raise DimensionError(f"{self.name}: gate matrix {g.shape} does not match {self.m}x{self.n}")
        sample = next(t for row in preds for t in row if t is not None)
        per_sample = 3 if self.kind == "conv" else 1
        batched = sample.ndim == per_sample + 1
        grid = {}
        for i in range(self.m):
            for j in range(self.n):
                t = preds[i][j]
                if t is None:
                    continue
                grid[(i, j)] = t if batched else F.reshape(t, (1,) + t.shape)
        bsz = next(iter(grid.values())).shape[0]
        if g.ndim == 2:
            g = np.broadcast_to(g, (bsz,) + g.shape)
        rows = [Tensor(np.ascontiguousarray(g[:, i, :]).astype(sample.dtype)) for i in range(self.m)]
        outs = self._construct_batched(grid, rows)
        return outs if batched else [F.reshape(o, o.shape[1:]) for o in outs]

    def forward(self, inputs, activation=None):
        """Gates, then predictions, then construction. Returns (outputs, gates).

        ``activation`` overrides the layer's own f for this call ("none" yields
        the pre-activation sums, e.g. classifier logits).
        """
        xs, batched = self._check_inputs(inputs)
        if self.mode == "learned":
            rows = self._gates_batched(xs)
            gate_vals = np.stack([r.data for r in rows], axis=1)
        else:
            mix = self.fixed_mix()
            rows = [mix[i] for i in range(self.m)]
            gate_vals = np.broadcast_to(mix, (xs[0].shape[0],) + mix.shape).copy()
        grid = self._predict_batched(xs)
        outs = self._construct_batched(grid, rows, activation)
        if not batched:
            outs = [F.reshape(o, o.shape[1:]) for o in outs]
            gate_vals = gate_vals[0]
        return outs, GateMatrix(gate_vals)

    __call__ = forward

    def __repr__(self):
        return (f"RoutingLayer({self.name}, {self.m}->{self.n}, {self.kind}{self.units}, "
                f"f={self.activation}, mode={self.mode})")


def routing_forward(layer: RoutingLayer, inputs):
    return layer.forward(inputs)


def predict(layer: RoutingLayer, inputs):
    return layer.predict(inputs)


def compute_gates(layer: RoutingLayer, inputs) -> GateMatrix:
    return layer.compute_gates(inputs)


def construct(layer: RoutingLayer, preds, gates):
    return layer.construct(preds, gates)
