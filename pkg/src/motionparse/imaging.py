"""Dense image operations: sampling, warping, splatting, SSIM, pyramids.

Field conventions:

* A scalar field is an (H, W) array; a vector field is (H, W, C) with the
  channels last (flow fields are (H, W, 2) holding (du, dv)).
* Sampling coordinates are pixel-center (u, v) pairs in the geometry
  convention; coordinate arrays have shape (..., 2).
* Out-of-bounds reads clamp to the nearest edge pixel and are flagged, so
  callers decide whether clamped values may contribute to a loss.

Everything here is torch float64 and differentiable unless noted. Numpy
arrays are accepted and converted on entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ._tensor import as_tensor
from .errors import DomainError

PYRAMID_LEVELS = 4
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class ImagePyramid:
    """Fixed four-level pyramid; level 0 is the input resolution."""

    levels: tuple

    def __post_init__(self):
        if len(self.levels) != PYRAMID_LEVELS:
            raise DomainError(f"pyramid must have {PYRAMID_LEVELS} levels, got {len(self.levels)}")

    def __getitem__(self, level: int) -> torch.Tensor:
        return self.levels[level]

    def __len__(self) -> int:
        return len(self.levels)


def _split_channels(field: torch.Tensor):
    """View any (H, W) / (H, W, C) field as (C, H, W) plus a restore flag."""
    if field.dim() == 2:
        return field.unsqueeze(0), True
    if field.dim() == 3:
        return field.permute(2, 0, 1), False
    raise DomainError(f"field must be (H, W) or (H, W, C), got {tuple(field.shape)}")


def bilinear_sample(field, coords):
    """Sample a field at fractional pixel coordinates.

    field: (H, W) or (H, W, C); coords: (..., 2) as (u, v).
    Returns (values, in_bounds) where values is (...,) or (..., C) and
    in_bounds is a bool tensor flagging coords inside [0, W-1] x [0, H-1].
    Reads outside the field clamp to the nearest edge pixel (flagged).
    """
    field = as_tensor(field)
    coords = as_tensor(coords)
    if coords.shape[-1] != 2:
        raise DomainError(f"coords must end in (u, v) pairs, got shape {tuple(coords.shape)}")
    chan, squeeze = _split_channels(field)
    c, h, w = chan.shape

    u = coords[..., 0]
    v = coords[..., 1]
    in_bounds = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = u.clamp(0.0, w - 1.0)
    vc = v.clamp(0.0, h - 1.0)
    # Anchor cells so u0 + 1 stays addressable; at the far edge the weight
    # saturates to 1 and the sample degenerates to the edge pixel.
    u0 = uc.floor().clamp(0.0, max(w - 2, 0))
    v0 = vc.floor().clamp(0.0, max(h - 2, 0))
    wu = uc - u0
    wv = vc - v0
    iu0 = u0.long()
    iv0 = v0.long()
    iu1 = (iu0 + 1).clamp(max=w - 1)
    iv1 = (iv0 + 1).clamp(max=h - 1)

    flat = chan.reshape(c, h * w)  # (C, H*W)
    def gather(iv, iu):
        idx = (iv * w + iu).reshape(-1)
        return flat[:, idx].reshape((c,) + u.shape)

    top = gather(iv0, iu0) * (1 - wu) + gather(iv0, iu1) * wu
    bot = gather(iv1, iu0) * (1 - wu) + gather(iv1, iu1) * wu
    values = top * (1 - wv) + bot * wv  # (C, ...)
    values = values.permute(*range(1, values.dim()), 0)
    if squeeze:
        values = values[..., 0]
    return values, in_bounds


def inverse_warp(source, coords):
    """Synthesize a target-frame field by sampling `source` at `coords`.

    coords holds, per target pixel, the source-frame position it should
    read from ((H, W, 2)). Returns (warped, in_bounds).
    """
    coords = as_tensor(coords)
    if coords.dim() != 3 or coords.shape[-1] != 2:
        raise DomainError(f"inverse_warp coords must be (H, W, 2), got {tuple(coords.shape)}")
    return bilinear_sample(source, coords)


def forward_splat(values, flow, extent=None):
    """Scatter per-pixel values along a flow into an accumulator grid.

    Each source pixel p deposits `values[p]` at p + flow[p], spread over
    the four enclosing pixels with bilinear weights; deposits falling
    outside the grid are dropped. Returns (accumulated (H', W', C),
    weights (H', W')). `values=None` accumulates weights only.
    Not used under autograd; runs detached.
    """
    flow = as_tensor(flow).detach()
    if flow.dim() != 3 or flow.shape[-1] != 2:
        raise DomainError(f"flow must be (H, W, 2), got {tuple(flow.shape)}")
    h, w = flow.shape[:2]
    th, tw = (h, w) if extent is None else extent

    from .geometry import pixel_grid  # local import to avoid a cycle at module load

    target = pixel_grid(h, w) + flow
    u = target[..., 0].reshape(-1)
    v = target[..., 1].reshape(-1)
    u0 = torch.floor(u)
    v0 = torch.floor(v)

    if values is not None:
        vals = as_tensor(values).detach()
        chan, _ = _split_channels(vals)
        c = chan.shape[0]
        flat_vals = chan.reshape(c, -1)
        acc = torch.zeros(c, th * tw, dtype=flow.dtype)
    weights = torch.zeros(th * tw, dtype=flow.dtype)

    for du, dv in ((0, 0), (1, 0), (0, 1), (1, 1)):
        cu = u0 + du
        cv = v0 + dv
        wgt = (1 - (u - cu).abs()) * (1 - (v - cv).abs())
        keep = (cu >= 0) & (cu < tw) & (cv >= 0) & (cv < th) & (wgt > 0)
        idx = (cv[keep] * tw + cu[keep]).long()
        weights.index_put_((idx,), wgt[keep], accumulate=True)
        if values is not None:
            acc.index_put_(
                (torch.arange(c).unsqueeze(1), idx.unsqueeze(0).expand(c, -1)),
                flat_vals[:, keep] * wgt[keep],
                accumulate=True,
            )

    weights = weights.reshape(th, tw)
    if values is None:
        return None, weights
    return acc.reshape(c, th, tw).permute(1, 2, 0), weights


def forward_splat_weights(flow, extent=None):
    """Total bilinear splat weight each grid cell receives under `flow`."""
    _, weights = forward_splat(None, flow, extent=extent)
    return weights


def _box3(x: torch.Tensor) -> torch.Tensor:
    """3x3 uniform box mean with replicate borders; x is (C, H, W)."""
    padded = F.pad(x.unsqueeze(0), (1, 1, 1, 1), mode="replicate")
    return F.avg_pool2d(padded, kernel_size=3, stride=1).squeeze(0)


def ssim_map(a, b):
    """Per-pixel SSIM between two fields of equal shape.

    Window statistics come from a 3x3 uniform box with replicate borders;
    stabilizers are C1 = 0.01^2 and C2 = 0.03^2 for intensities in [0, 1].
    Output is clamped to [-1, 1] and matches the input shape.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DomainError(f"ssim_map inputs must match, got {tuple(a.shape)} vs {tuple(b.shape)}")
    ca, squeeze = _split_channels(a)
    cb, _ = _split_channels(b)
    mu_a = _box3(ca)
    mu_b = _box3(cb)
    var_a = _box3(ca * ca) - mu_a * mu_a
    var_b = _box3(cb * cb) - mu_b * mu_b
    cov = _box3(ca * cb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    out = (num / den).clamp(-1.0, 1.0)
    out = out.permute(1, 2, 0)
    return out[..., 0] if squeeze else out


def build_pyramid(field) -> ImagePyramid:
    """Four-level pyramid by repeated 2x2 average pooling.

    Level l has extent ceil(W / 2^l) x ceil(H / 2^l); ragged edges average
    only the pixels actually present.
    """
    field = as_tensor(field)
    chan, squeeze = _split_channels(field)
    levels = [field]
    cur = chan
    for _ in range(PYRAMID_LEVELS - 1):
        cur = F.avg_pool2d(cur.unsqueeze(0), 2, stride=2, ceil_mode=True, count_include_pad=False).squeeze(0)
        levels.append(cur[0] if squeeze else cur.permute(1, 2, 0))
    return ImagePyramid(tuple(levels))


def build_flow_pyramid(flow) -> ImagePyramid:
    """Pyramid of a flow field; vectors halve per level to stay in that
    level's pixel units."""
    pyr = build_pyramid(flow)
    return ImagePyramid(tuple(lvl * (0.5**i) for i, lvl in enumerate(pyr.levels)))


def spatial_gradient(field) -> torch.Tensor:
    """First-order (du, dv) of a scalar field: central differences in the
    interior, one-sided at the borders. (H, W) -> (H, W, 2)."""
    f = as_tensor(field)
    if f.dim() != 2:
        raise DomainError(f"spatial_gradient expects a scalar field, got {tuple(f.shape)}")
    du = torch.cat(
        [f[:, 1:2] - f[:, 0:1], (f[:, 2:] - f[:, :-2]) / 2, f[:, -1:] - f[:, -2:-1]], dim=1
    )
    dv = torch.cat(
        [f[1:2, :] - f[0:1, :], (f[2:, :] - f[:-2, :]) / 2, f[-1:, :] - f[-2:-1, :]], dim=0
    )
    return torch.stack([du, dv], dim=-1)


def laplacian(field) -> torch.Tensor:
    """Sum of per-axis second central differences, replicate borders.

    Keeps the input shape; multichannel fields are processed per channel.
    Linear ramps map to zero in the interior.
    """
    f = as_tensor(field)
    chan, squeeze = _split_channels(f)
    padded = F.pad(chan.unsqueeze(0), (1, 1, 1, 1), mode="replicate").squeeze(0)
    lap_u = padded[:, 1:-1, 2:] - 2 * chan + padded[:, 1:-1, :-2]
    lap_v = padded[:, 2:, 1:-1] - 2 * chan + padded[:, :-2, 1:-1]
    out = (lap_u + lap_v).permute(1, 2, 0)
    return out[..., 0] if squeeze else out
