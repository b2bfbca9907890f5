"""Run configuration: key=value files and dataset specs."""

from __future__ import annotations

import os

from camnet.data import find_idx_pair, load_idx, synth_pairs
from camnet.data.synth import STYLES
from camnet.engine.rng import named_rng
from camnet.errors import ContractError

DATA_ENV = "CAMNET_DATA"


class ConfigError(ContractError):
    """Bad key, bad value or inconsistent settings in a run config."""


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines. ``#`` starts a comment; keys use - or _."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[key.replace("-", "_")] = value
    return out


def split_data_spec(spec: str):
    """``NAME[:REST]`` -> (name, rest or None)."""
    name, _, rest = spec.partition(":")
    if not name:
        raise ConfigError(f"data spec {spec!r} has no name")
    return name, rest or None


def _check_file(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def resolve_idx_paths(spec: str, split: str):
    """Image/label paths for ``split`` or None when the spec has no such split.

    Accepted forms::

        NAME:TRAIN_IMG,TRAIN_LAB[,TEST_IMG,TEST_LAB]
        NAME:DIR            standard MNIST file names inside DIR (.gz allowed)
        NAME                the directory $CAMNET_DATA/NAME
    """
    name, rest = split_data_spec(spec)
    if rest is None:
        root = os.environ.get(DATA_ENV)
        if not root:
            raise FileNotFoundError(f"dataset {name!r} given without paths and ${DATA_ENV} is not set")
        rest = os.path.join(root, name)
    parts = rest.split(",")
    if len(parts) == 1:
        if not os.path.isdir(parts[0]):
            raise FileNotFoundError(f"no such data directory: {parts[0]}")
        pair = find_idx_pair(parts[0], split)
        if pair is None and split == "train":
            raise FileNotFoundError(f"no {split} IDX pair under {parts[0]}")
        return pair
    if len(parts) not in (2, 4):
        raise ConfigError(f"data spec {spec!r}: expected 2 or 4 comma-separated paths, got {len(parts)}")
    if split == "train":
        return _check_file(parts[0]), _check_file(parts[1])
    if len(parts) == 4:
        return _check_file(parts[2]), _check_file(parts[3])
    return None


def load_data(spec: str, split: str = "train", domain_id: int = 0, subset: int | None = None, seed: int = 0,
              synth_n: int = 256, synth_size: int = 32):
    """Dataset for ``spec``/``split``, or None when the spec has no such split."""
    name, rest = split_data_spec(spec)
    if name == "synth":
        if rest not in STYLES:
            raise ConfigError(f"synthetic data must be one of {['synth:' + s for s in STYLES]}, got {spec!r}")
        n = synth_n if split == "train" else max(synth_n // 4, 1)
        ds = synth_pairs(seed, n, synth_size, rest, domain_id=domain_id, split=split)
    else:
        pair = resolve_idx_paths(spec, split)
        if pair is None:
            return None
        ds = load_idx(pair[0], pair[1], name=name, domain_id=domain_id, split=split)
    ds.validate()
    if subset is not None and subset < len(ds):
        ds = ds.subset(subset, named_rng(seed, f"subset.{name}.{split}"))
    return ds


def coerce(value: str, kind):
    """Turn a config-file string into the type argparse would produce."""
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        return kind(value) if kind else value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r}: {exc}") from None
