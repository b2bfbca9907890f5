"""Architecture notation: ``rC32 C32 rC64 C64 ... rF10``.

``C`` is a convolution, ``F`` a fully-connected layer, the number is the
channel or neuron count and an ``r`` prefix marks a routing layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from camnet.errors import ContractError, ParseError

TOKEN_RE = re.compile(r"^(r?)([CF])(\d+)$")

# preset family
BASECNN = "C32 C32 C64 C64 C128 C128 F32 F32 F10"
BASECNN2 = "C32 C32 C64 C64 C128 C128 C128 C256 C256 C256 F32 F32 F10"
CAMNET = "rC32 C32 rC64 C64 rC128 C128 F32 rF32 rF10"
TINY_CAMNET = "rC16 C16 rC32 C32 rC64 C64 rF10"


@dataclass(frozen=True)
class LayerToken:
    routing: bool
    kind: str  # "conv" | "dense"
    units: int

    def __post_init__(self):
        if self.units <= 0:
            raise ContractError(f"layer units must be positive, got {self.units}")
        if self.kind not in ("conv", "dense"):
            raise ContractError(f"layer kind must be conv or dense, got {self.kind!r}")

    def render(self) -> str:
        return f"{'r' if self.routing else ''}{'C' if self.kind == 'conv' else 'F'}{self.units}"


@dataclass
class ArchSpec:
    tokens: list
    width: int = 1
    input_shape: tuple = (1, 28, 28)
    head: str = "softmax"  # "softmax" | "tanh"
    n_classes: int = 10
    pool_after: tuple | None = None  # 1-based token indices; None = default schedule
    extra: dict = field(default_factory=dict)

    def render(self) -> str:
        return render_arch(self)

    @property
    def routing_indices(self) -> list:
        return [k + 1 for k, t in enumerate(self.tokens) if t.routing]


def parse_arch(text: str, width: int = 1, input_shape=(1, 28, 28), head: str = "softmax",
               n_classes: int | None = None) -> ArchSpec:
    """Parse whitespace-separated tokens into an :class:`ArchSpec`."""
    parts = text.split()
    if not parts:
        raise ParseError(0, "", "empty architecture")
    tokens = []
    for k, part in enumerate(parts, start=1):
        match = TOKEN_RE.match(part)
        if not match or int(match.group(3)) == 0:
            raise ParseError(k, part)
        prefix, letter, units = match.groups()
        tokens.append(LayerToken(bool(prefix), "conv" if letter == "C" else "dense", int(units)))
    if n_classes is None:
        n_classes = tokens[-1].units
    return ArchSpec(tokens, width=width, input_shape=tuple(input_shape), head=head, n_classes=n_classes)


def render_arch(spec) -> str:
    tokens = spec.tokens if isinstance(spec, ArchSpec) else spec
    return " ".join(t.render() for t in tokens)


def validate(spec: ArchSpec) -> None:
    """Raise ContractError when the token sequence cannot be built."""
    if spec.width < 1:
        raise ContractError(f"width must be >= 1, got {spec.width}")
    toks = spec.tokens
    seen_dense = False
    for k, t in enumerate(toks, start=1):
        if t.kind == "dense":
            seen_dense = True
        elif seen_dense:
            raise ContractError(f"conv token {t.render()} at position {k} follows a dense token")
    if spec.width > 1:
        if not toks[0].routing:
            raise ContractError("with width > 1 the first token must be a routing layer (1 -> X expansion)")
        if not (toks[-1].routing and toks[-1].kind == "dense"):
            raise ContractError("with width > 1 the last token must be a routing dense layer (X -> 1)")
    if spec.head == "softmax" and toks[-1].units != spec.n_classes:
        raise ContractError(f"last layer has {toks[-1].units} units but the head expects {spec.n_classes} classes")


def default_pool_after(tokens) -> tuple:
    """Pool between consecutive conv tokens whose channel counts differ."""
    out = []
    for k in range(len(tokens) - 1):
        a, b = tokens[k], tokens[k + 1]
        if a.kind == "conv" and b.kind == "conv" and a.units != b.units:
            out.append(k + 1)
    return tuple(out)
