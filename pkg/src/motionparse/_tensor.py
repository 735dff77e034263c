"""Tiny helpers shared by the torch-backed dense code paths.

All dense math in this package runs in float64 on CPU tensors. Public
entry points accept numpy arrays (or anything array-like) and normalize
through `as_tensor`, which is zero-copy for float64 numpy input.
"""

import numpy as np
import torch

DTYPE = torch.float64


def as_tensor(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=DTYPE)


def to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)
