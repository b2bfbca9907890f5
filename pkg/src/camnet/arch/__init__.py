"""Architecture notation and network builders."""

from camnet.arch.parser import (
    BASECNN,
    BASECNN2,
    CAMNET,
    TINY_CAMNET,
    ArchSpec,
    LayerToken,
    default_pool_after,
    parse_arch,
    render_arch,
    validate,
)
from camnet.arch.network import (
    Flatten,
    ForwardLayer,
    NetworkModel,
    Pool,
    build_encdec,
    build_from_config,
    build_network,
    build_preset,
    count_params,
)

__all__ = [
    "BASECNN", "BASECNN2", "CAMNET", "TINY_CAMNET", "ArchSpec", "LayerToken", "default_pool_after",
    "parse_arch", "render_arch", "validate", "Flatten", "ForwardLayer", "NetworkModel", "Pool",
    "build_encdec", "build_from_config", "build_network", "build_preset", "count_params",
]
