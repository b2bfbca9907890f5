"""Context-aware multipath networks: parallel tensors with learned, input-dependent routing."""

__version__ = "0.1.0"
