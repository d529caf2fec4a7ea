"""1D interval geometry for moment localization.

All times are normalized to [0, 1] by the video duration. A moment is
represented either as a span (t_s, t_e), as an anchor triplet
(p, d_s, d_e) with the span recovered as (p - d_s, p + d_e), or as a
center-length pair (c, l) kept around for diagnostics.

Clamping into [0, 1] happens only at span conversion so that gradients
through p, d_s, d_e stay well defined during training.
"""
from __future__ import annotations

from dataclasses import dataclass


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


@dataclass(frozen=True)
class MomentSpan:
    """Closed interval (t_s, t_e) in normalized time."""

    t_s: float
    t_e: float

    def __post_init__(self):
        if not (0.0 <= self.t_s <= self.t_e <= 1.0):
            raise ValueError(f"invalid span ({self.t_s}, {self.t_e}): need 0 <= t_s <= t_e <= 1")

    @property
    def length(self) -> float:
        return self.t_e - self.t_s

    @property
    def center(self) -> float:
        return 0.5 * (self.t_s + self.t_e)


@dataclass(frozen=True)
class MomentTriplet:
    """Anchor point plus distances to the start and end boundaries."""

    p: float
    d_s: float
    d_e: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError(f"anchor p={self.p} outside [0, 1]")
        if self.d_s < 0.0 or self.d_e < 0.0:
            raise ValueError(f"negative boundary distance (d_s={self.d_s}, d_e={self.d_e})")


@dataclass(frozen=True)
class CenterLength:
    """Center-length moment parametrization (diagnostics baseline only)."""

    c: float
    l: float

    def __post_init__(self):
        if not (0.0 <= self.c <= 1.0):
            raise ValueError(f"center c={self.c} outside [0, 1]")
        if self.l < 0.0:
            raise ValueError(f"negative length l={self.l}")


def triplet_to_span(t: MomentTriplet) -> MomentSpan:
    """Convert (p, d_s, d_e) to a clamped span (p - d_s, p + d_e)."""
    s = _clamp01(t.p - t.d_s)
    e = _clamp01(t.p + t.d_e)
    if s > e:  # cannot happen for valid triplets; collapse defensively
        s = e = _clamp01(t.p)
    return MomentSpan(s, e)


def center_length_to_span(cl: CenterLength) -> MomentSpan:
    """Convert (c, l) to a clamped span (c - l/2, c + l/2)."""
    return MomentSpan(_clamp01(cl.c - 0.5 * cl.l), _clamp01(cl.c + 0.5 * cl.l))


def iou_1d(a: MomentSpan, b: MomentSpan) -> float:
    """Temporal intersection over union.

    A zero-length union (two identical point spans) counts as IoU 1;
    distinct point spans give 0.
    """
    inter = max(0.0, min(a.t_e, b.t_e) - max(a.t_s, b.t_s))
    union = a.length + b.length - inter
    if union <= 0.0:
        return 1.0 if (a.t_s == b.t_s and a.t_e == b.t_e) else 0.0
    return inter / union


def giou_1d(a: MomentSpan, b: MomentSpan) -> float:
    """Generalized IoU: IoU minus the hull gap fraction, in [-1, 1]."""
    iou = iou_1d(a, b)
    hull = max(a.t_e, b.t_e) - min(a.t_s, b.t_s)
    if hull <= 0.0:
        return iou
    inter = max(0.0, min(a.t_e, b.t_e) - max(a.t_s, b.t_s))
    union = a.length + b.length - inter
    return iou - (hull - union) / hull


def l1_span_distance(a: MomentSpan, b: MomentSpan) -> float:
    """Sum of absolute boundary differences."""
    return abs(a.t_s - b.t_s) + abs(a.t_e - b.t_e)
