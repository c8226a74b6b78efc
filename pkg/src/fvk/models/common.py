"""Shared model plumbing: parameter init, batching, masked pooling, persistence."""

import numpy as np

from ..autodiff import Tensor, ops
from ..autodiff.checkpoint import load_checkpoint, save_checkpoint


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def param(rng, shape, fan_in, name=""):
    return Tensor(uniform_init(rng, shape, fan_in), requires_grad=True, name=name)


class ParamModel:
    """Base for models that are a named dict of parameter tensors."""

    def __init__(self):
        self.params = {}

    def add_param(self, name, tensor):
        tensor.name = name
        tensor.requires_grad = True
        self.params[name] = tensor
        return tensor

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def parameter_count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def state_entries(self):
        return {name: p.data for name, p in self.params.items()}

    def load_state_entries(self, entries):
        for name, p in self.params.items():
            if name not in entries:
                raise KeyError(f"checkpoint is missing parameter '{name}'")
            if tuple(entries[name].shape) != tuple(p.data.shape):
                raise ValueError(
                    f"checkpoint parameter '{name}' has shape {entries[name].shape}, "
                    f"expected {p.data.shape}"
                )
            p.data = entries[name].astype(np.float32).copy()


def save_model(path, model, config: dict, extra_entries=None):
    """Persist parameters plus scalar config values under 'cfg/' names."""
    entries = {}
    for key, value in config.items():
        entries[f"cfg/{key}"] = np.float32(value)
    entries.update(model.state_entries())
    if extra_entries:
        entries.update(extra_entries)
    save_checkpoint(path, entries)


def load_entries(path):
    entries = load_checkpoint(path)
    config = {k[4:]: float(v) for k, v in entries.items() if k.startswith("cfg/")}
    return entries, config


def pad_batch(arrays):
    """Stack variable-length (T_i, F) arrays into (B, T, F) plus a (B, T, 1) mask."""
    lengths = np.array([a.shape[0] for a in arrays], dtype=np.int64)
    t_max = int(lengths.max())
    f = arrays[0].shape[1]
    out = np.zeros((len(arrays), t_max, f), dtype=np.float32)
    mask = np.zeros((len(arrays), t_max, 1), dtype=np.float32)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
        mask[i, : a.shape[0], 0] = 1.0
    return out, mask, lengths


def masked_mean_time(x, mask, lengths):
    """Mean over valid frames of (B, T, C) given mask (B, T, 1)."""
    summed = ops.total(ops.mul(x, mask), axis=1)  # (B, C)
    inv = Tensor((1.0 / lengths.astype(np.float32))[:, None])
    return ops.mul(summed, inv)
