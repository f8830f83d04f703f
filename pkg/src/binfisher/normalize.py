"""Power, l2 and intra (per-component block) normalization of Fisher vectors."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import ValidationError
from .fisher import FisherVec

DEFAULT_ALPHA = 0.5
SCHEMES = ("none", "l2", "power", "power-l2", "intra")


def _row_norms(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(a / scale, norms)`` per row, pre-scaled by the row max so tiny
    or huge entries neither underflow nor overflow when squared."""
    scale = np.abs(a).max(axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    a = a / scale[:, None]
    return a, np.linalg.norm(a, axis=1)


def power_normalize(v: FisherVec, alpha: float = DEFAULT_ALPHA) -> FisherVec:
    """Entrywise ``sign(z) * |z|**alpha``."""
    if not 0 < alpha <= 1:
        raise ValidationError("alpha", f"must be in (0, 1], got {alpha}")
    if v.norm_state != "raw":
        raise ValidationError("norm_state", f"power normalization needs a raw vector, got {v.norm_state!r}")
    z = v.values
    out = z if alpha == 1 else np.sign(z) * np.abs(z) ** alpha
    return replace(v, values=out, norm_state="power")


def l2_normalize(v: FisherVec) -> FisherVec:
    """Scale to unit Euclidean norm.  A zero vector is returned as is and flagged."""
    nxt = {"raw": "l2", "power": "power_l2"}.get(v.norm_state)
    if nxt is None:
        raise ValidationError("norm_state", f"cannot l2-normalize a {v.norm_state!r} vector")
    scaled, norm = _row_norms(v.values[None, :])
    if norm[0] == 0:
        return replace(v, norm_state=nxt, zero_blocks=tuple(range(v.n_components)))
    return replace(v, values=scaled[0] / norm[0], norm_state=nxt)


def intra_normalize(v: FisherVec) -> FisherVec:
    """l2-normalize each component block, then the whole vector.

    Blocks that are entirely zero stay zero and are reported in
    ``zero_blocks``.
    """
    if v.norm_state != "raw":
        raise ValidationError("norm_state", f"intra normalization needs a raw vector, got {v.norm_state!r}")
    blocks, norms = _row_norms(v.blocks())
    zero = norms == 0
    out = blocks / np.where(zero, 1.0, norms)[:, None]
    total = np.linalg.norm(out)
    if total > 0:
        out = out / total
    return replace(v, values=out.ravel(), norm_state="intra",
                   zero_blocks=tuple(int(i) for i in np.flatnonzero(zero)))


def apply_norm(v: FisherVec, scheme: str, alpha: float = DEFAULT_ALPHA) -> FisherVec:
    """Dispatch on a scheme name (``none|l2|power|power-l2|intra``)."""
    scheme = scheme.replace("_", "-")
    if scheme == "none":
        return v
    if scheme == "l2":
        return l2_normalize(v)
    if scheme == "power":
        return power_normalize(v, alpha)
    if scheme == "power-l2":
        return l2_normalize(power_normalize(v, alpha))
    if scheme == "intra":
        return intra_normalize(v)
    raise ValidationError("scheme", f"unknown normalization {scheme!r}; expected one of {SCHEMES}")
