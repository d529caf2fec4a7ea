"""Boundary-aligned moment grounding, desk scale.

A dual-pathway detection transformer for temporal sentence grounding:
moments are parametrized as an anchor point plus distances to the two
boundaries, proposals are ranked by a predicted localization quality,
and matching is purely localization-driven.
"""
from .config import Config
from .intervals import (CenterLength, MomentSpan, MomentTriplet, center_length_to_span,
                        giou_1d, iou_1d, l1_span_distance, triplet_to_span)
from .model import GroundingModel

__all__ = [
    "Config", "GroundingModel",
    "MomentSpan", "MomentTriplet", "CenterLength",
    "triplet_to_span", "center_length_to_span",
    "iou_1d", "giou_1d", "l1_span_distance",
]
