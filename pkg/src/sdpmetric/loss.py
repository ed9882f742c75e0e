"""Margin losses for the soft-margin objective.

Every loss is written in terms of ``z = <A_r, X> - rho``: a triplet whose
margin exceeds ``rho`` (``z >= 0``, or ``z >= h`` for Huber) costs nothing.
All functions accept scalars or numpy arrays and are vectorised.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

HINGE = "hinge"
SQUARED_HINGE = "squared_hinge"
HUBER = "huber"

_NAMES = (HINGE, SQUARED_HINGE, HUBER)


@dataclass(frozen=True)
class LossKind:
    """A margin loss and its parameter.

    Parameters
    ----------
    name : {"squared_hinge", "huber", "hinge"}
    h : float
        Width of the quadratic zone of the Huber loss. Ignored otherwise.
    """

    name: str = SQUARED_HINGE
    h: float = 0.5

    def __post_init__(self):
        if self.name not in _NAMES:
            raise ValueError(f"unknown loss {self.name!r}; expected one of {_NAMES}")
        if self.name == HUBER:
            if not (self.h > 0) or not math.isfinite(self.h):
                raise ValueError(f"Huber parameter h must be positive, got {self.h}")
            if not 0.01 <= self.h <= 0.5:
                logger.warning("Huber h=%g is outside the usual range [0.01, 0.5]", self.h)

    @property
    def smooth(self) -> bool:
        return self.name != HINGE

    @property
    def label(self) -> str:
        if self.name == HUBER:
            return f"huber(h={self.h:g})"
        return self.name


def parse_loss(name: str, h: float = 0.5) -> LossKind:
    """Build a :class:`LossKind` from its config name (``"huber"`` etc.)."""
    return LossKind(name.strip().lower().replace("-", "_"), float(h))


def _check_finite(z):
    if not np.all(np.isfinite(z)):
        raise ValueError("loss argument must be finite")


def loss_value(kind: LossKind, z):
    """Loss at ``z``; returns a float for scalar input, an array otherwise."""
    z_arr = np.asarray(z, dtype=float)
    _check_finite(z_arr)
    out = _value(kind, z_arr)
    return float(out) if out.ndim == 0 else out


def loss_derivative(kind: LossKind, z):
    """Derivative of the loss with respect to ``z``.

    The hinge loss has no derivative at 0; 0 is returned there by convention.
    """
    z_arr = np.asarray(z, dtype=float)
    _check_finite(z_arr)
    out = _derivative(kind, z_arr)
    return float(out) if out.ndim == 0 else out


def zero_threshold(kind: LossKind) -> float:
    """Smallest ``z`` from which the loss is identically zero."""
    return kind.h if kind.name == HUBER else 0.0


# unchecked array versions for the solver's inner loops

def _value(kind, z_arr):
    if kind.name == HINGE:
        return np.maximum(0.0, -z_arr)
    if kind.name == SQUARED_HINGE:
        neg = np.minimum(z_arr, 0.0)
        return neg * neg
    # quadratic piece saturates at h for z <= -h; the linear tail adds -h - z
    h = kind.h
    t = h - np.clip(z_arr, -h, h)
    return t * t / (4.0 * h) + np.maximum(-h - z_arr, 0.0)


def _derivative(kind, z_arr):
    if kind.name == HINGE:
        return -(z_arr < 0.0).astype(float)
    if kind.name == SQUARED_HINGE:
        return 2.0 * np.minimum(z_arr, 0.0)
    h = kind.h
    return (np.clip(z_arr, -h, h) - h) / (2.0 * h)


def loss_sum(kind: LossKind, z_arr) -> float:
    """``sum(loss(z))`` over a float array, without input validation."""
    if kind.name == SQUARED_HINGE:
        neg = np.minimum(z_arr, 0.0)
        return float(neg @ neg)
    return float(np.sum(_value(kind, z_arr)))
