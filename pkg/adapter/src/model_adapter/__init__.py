"""Block-law extraction from autoregressive language models."""

from .adapter import AdapterConfig, ModelAdapter, softmax_weights

__all__ = ["AdapterConfig", "ModelAdapter", "softmax_weights"]
