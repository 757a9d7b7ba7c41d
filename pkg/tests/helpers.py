import numpy as np

from flowgmm.flow import FlowModel


def randomize(flow: FlowModel, seed: int = 0, scale: float = 0.5) -> FlowModel:
    """Give every flow parameter a random non-trivial value."""
    rng = np.random.default_rng(seed)
    for p in flow.params():
        p.values[...] = scale * rng.standard_normal(p.shape)
    return flow


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))
