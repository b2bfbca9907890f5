"""Route traces, DOT export, per-domain gate divergence and weight histograms."""

from __future__ import annotations

import fnmatch
import io
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from camnet.arch.network import ForwardLayer
from camnet.engine import functional as F
from camnet.errors import ContractError
from camnet.routing import RoutingLayer

# DOT styling. Edge penwidth = PEN_MIN + (PEN_MAX - PEN_MIN) * g, so g=0.75
# gives 3.875. Node and edge colours carry the value in their alpha byte.
PEN_MIN = 0.5
PEN_MAX = 5.0
NODE_RGB = "8b0000"
EDGE_RGB = "00008b"


def penwidth(g: float) -> float:
    return PEN_MIN + (PEN_MAX - PEN_MIN) * float(g)


@dataclass
class TraceLayer:
    name: str
    kind: str  # "input", "routing" or "forward"
    strengths: np.ndarray
    gates: np.ndarray | None = None  # (m, n) for routing layers


@dataclass
class RouteTrace:
    layers: list = field(default_factory=list)
    input_id: str | int | None = None
    domain_id: int | None = None

    @property
    def routing(self):
        return [l for l in self.layers if l.kind == "routing"]

    def gate_list(self):
        return [l.gates for l in self.routing]

    def to_dict(self):
        return {
            "input_id": self.input_id,
            "domain_id": self.domain_id,
            "layers": [
                {"name": l.name, "kind": l.kind, "strengths": [float(v) for v in l.strengths],
                 "gates": None if l.gates is None else [[float(v) for v in row] for row in l.gates]}
                for l in self.layers
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        layers = [TraceLayer(l["name"], l["kind"], np.asarray(l["strengths"], dtype=np.float64),
                             None if l["gates"] is None else np.asarray(l["gates"], dtype=np.float64))
                  for l in d["layers"]]
        return cls(layers, d.get("input_id"), d.get("domain_id"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _normalise(v):
    s = v.sum()
    if s <= 0:
        return np.full(len(v), 1.0 / len(v))
    return v / s


def capture_traces(model, images, domain_ids=None, input_ids=None, head=None, batch_size=128):
    """One RouteTrace per image. Strengths are over the constructed tensors."""
    images = np.asarray(images)
    if not any(isinstance(l, RoutingLayer) for l in model.trunk + model.heads[model.active_head if head is None else head]):
        raise ContractError("model has no routing layer to trace")
    n = len(images)
    domain_ids = [None] * n if domain_ids is None else list(np.broadcast_to(domain_ids, (n,)))
    input_ids = list(range(n)) if input_ids is None else list(input_ids)
    traces = []
    with F.no_grad():
        for s in range(0, n, batch_size):
            record = []
            model.forward(images[s:s + batch_size], head=head, record=record)
            for b in range(len(images[s:s + batch_size])):
                layers = [TraceLayer("input", "input", np.ones(1))]
                for layer, outs, gates in record:
                    if isinstance(layer, RoutingLayer):
                        kind = "routing"
                    elif isinstance(layer, ForwardLayer):
                        kind = "forward"
                    else:
                        continue
                    mags = np.array([np.abs(o.data[b]).mean() for o in outs], dtype=np.float64)
                    g = None if gates is None else np.asarray(gates.values[b], dtype=np.float64)
                    layers.append(TraceLayer(layer.name, kind, _normalise(mags), g))
                k = s + b
                dom = domain_ids[k]
                traces.append(RouteTrace(layers, input_ids[k], None if dom is None else int(dom)))
    return traces


def capture_trace(model, x, input_id=None, domain_id=None, head=None) -> RouteTrace:
    """Trace a single (C, H, W) input."""
    x = np.asarray(x)
    if x.ndim == len(model.config["input_shape"]):
        x = x[None]
    return capture_traces(model, x, [domain_id], [input_id], head=head)[0]


# ---------------------------------------------------------------- DOT

def _fmt(v):
    return f"{float(v):.6f}"


def _alpha(v):
    return f"{int(round(255 * min(max(float(v), 0.0), 1.0))):02x}"


def export_dot(trace: RouteTrace, graph_name: str = "route") -> str:
    """Graphviz text; a pure function of the trace."""
    out = io.StringIO()
    out.write(f"digraph {json.dumps(graph_name)} {{\n")
    out.write("  rankdir=LR;\n")
    out.write('  node [shape=box, style="rounded,filled", fontsize=10];\n')

    def node(li, j):
        return json.dumps(f"{trace.layers[li].name}_t{j}")

    for li, layer in enumerate(trace.layers):
        for j, s in enumerate(layer.strengths):
            label = f"{layer.name}[{j}]\\n{float(s):.3f}"
            out.write(f"  {node(li, j)} [label=\"{label}\", strength={_fmt(s)}, "
                      f"fillcolor=\"#{NODE_RGB}{_alpha(s)}\"];\n")
    for li in range(1, len(trace.layers)):
        layer = trace.layers[li]
        src = len(trace.layers[li - 1].strengths)
        if layer.gates is not None:
            g = layer.gates
            for i in range(g.shape[0]):
                for j in range(g.shape[1]):
                    out.write(f"  {node(li - 1, i)} -> {node(li, j)} [gate={_fmt(g[i, j])}, "
                              f"penwidth={_fmt(penwidth(min(g[i, j], 1.0)))}, "
                              f"color=\"#{EDGE_RGB}{_alpha(g[i, j])}\"];\n")
        else:
            dst = len(layer.strengths)
            for j in range(dst):
                i = j if src == dst else 0
                out.write(f"  {node(li - 1, i)} -> {node(li, j)} [gate={_fmt(1.0)}, "
                          f"penwidth={_fmt(penwidth(1.0))}, style=dashed];\n")
    out.write("}\n")
    return out.getvalue()


# ---------------------------------------------------------------- divergence

def _group(traces):
    if isinstance(traces, dict):
        return {k: list(v) for k, v in traces.items()}
    groups = {}
    for t in traces:
        groups.setdefault(t.domain_id, []).append(t)
    return groups


def mean_gates(traces):
    """Per routing layer, the mean (m, n) gate matrix over ``traces``."""
    mats = [t.gate_list() for t in traces]
    return [np.mean([m[k] for m in mats], axis=0) for k in range(len(mats[0]))]


def gate_divergence(traces) -> np.ndarray:
    """Per routing layer, L1 distance between domain-mean gate matrices,
    averaged over rows (sources). Ranges over [0, 2].

    ``traces`` is {domain: [RouteTrace]} or a flat list grouped by
    ``domain_id``. With more than two domains the pairwise values are averaged.
    """
    groups = _group(traces)
    groups = {k: v for k, v in groups.items() if v}
    if len(groups) < 2:
        raise ContractError(f"gate divergence needs at least two non-empty domains, got {len(groups)}")
    means = {k: mean_gates(v) for k, v in sorted(groups.items(), key=lambda kv: str(kv[0]))}
    depth = {len(m) for m in means.values()}
    if len(depth) != 1:
        raise ContractError("traces come from models with different routing depths")
    pairs = list(itertools.combinations(means.values(), 2))
    out = np.zeros(depth.pop())
    for a, b in pairs:
        out += np.array([np.abs(x - y).sum(axis=-1).mean() for x, y in zip(a, b)])
    return out / len(pairs)


# ---------------------------------------------------------------- histograms

@dataclass
class LayerHistogram:
    name: str
    edges: np.ndarray
    counts: list  # one int array per path

    def tv_distance(self, a=0, b=1) -> float:
        p = self.counts[a] / self.counts[a].sum()
        q = self.counts[b] / self.counts[b].sum()
        return float(0.5 * np.abs(p - q).sum())


@dataclass
class HistogramReport:
    layers: dict = field(default_factory=dict)  # name -> LayerHistogram

    def __getitem__(self, name):
        return self.layers[name]

    def max_tv(self):
        """(layer name, largest pairwise TV distance) over all layers."""
        best = (None, 0.0)
        for name, h in self.layers.items():
            for a, b in itertools.combinations(range(len(h.counts)), 2):
                d = h.tv_distance(a, b)
                if best[0] is None or d > best[1]:
                    best = (name, d)
        return best

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("layer,path,bin_lo,bin_hi,count\n")
        for name, h in self.layers.items():
            for p, counts in enumerate(h.counts, start=1):
                for k, c in enumerate(counts):
                    buf.write(f"{name},{p},{float(h.edges[k])!r},{float(h.edges[k + 1])!r},{int(c)}\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _select(model, selector):
    layers = [l for l in model.layers if isinstance(l, ForwardLayer) and l.paths >= 2]
    if selector is None:
        return layers
    if callable(selector):
        return [l for l in layers if selector(l)]
    return [l for l in layers if fnmatch.fnmatchcase(l.name, selector)]


def weight_histograms(model, selector=None, bins: int = 20) -> HistogramReport:
    """Histogram each path's kernel weights over shared per-layer bin edges.

    ``selector`` is None (every multi-path forward layer), a glob on layer
    names, or a predicate on the layer.
    """
    if bins < 1:
        raise ContractError(f"bins must be >= 1, got {bins}")
    layers = _select(model, selector)
    if not layers:
        raise ContractError(f"selector {selector!r} matches no forward layer with two or more paths")
    report = HistogramReport()
    for layer in layers:
        ws = [np.asarray(w.data, dtype=np.float64).ravel() for w, _ in layer.weights]
        lo = min(w.min() for w in ws)
        hi = max(w.max() for w in ws)
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
        counts = [np.histogram(w, bins=edges)[0].astype(np.int64) for w in ws]
        report.layers[layer.name] = LayerHistogram(layer.name, edges, counts)
    return report
