"""Isotropic Gaussian marbles and their time-dependent deformation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GaussianPoint:
    """One isotropic marble: identity rotation, single scale, RGB color."""

    center: np.ndarray
    color: np.ndarray
    scale: float = 0.05
    opacity: float = 0.9

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 < self.opacity < 1.0:
            raise ValueError("opacity must lie in (0, 1)")


@dataclass
class GaussianSet:
    """Structure-of-arrays batch of marbles."""

    centers: np.ndarray
    colors: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray

    @classmethod
    def from_points(cls, points) -> "GaussianSet":
        points = list(points)
        if not points:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))
        return cls(
            np.stack([p.center for p in points]),
            np.stack([p.color for p in points]),
            np.array([p.scale for p in points], dtype=np.float64),
            np.array([p.opacity for p in points], dtype=np.float64),
        )

    @classmethod
    def from_centers(cls, centers, color=(0.5, 0.5, 0.5), scale: float = 0.05, opacity: float = 0.9):
        centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
        n = len(centers)
        return cls(centers, np.tile(np.asarray(color, dtype=np.float64), (n, 1)), np.full(n, scale), np.full(n, opacity))

    def __len__(self) -> int:
        return len(self.centers)

    def to_points(self) -> list:
        return [GaussianPoint(c, col, float(s), float(o))
                for c, col, s, o in zip(self.centers, self.colors, self.scales, self.opacities)]


def deform_points(field, points, t):
    """Marbles at time ``t``: centers moved by the decoded motion, colors shifted and clamped to [0, 1].

    Accepts a ``GaussianSet`` (returns one) or a list of ``GaussianPoint``
    (returns a list). Scale and opacity are passed through untouched.
    """
    as_list = not isinstance(points, GaussianSet)
    gs = GaussianSet.from_points(points) if as_list else points
    if len(gs) == 0:
        return [] if as_list else gs
    _, dx, dc = field.forward(gs.centers, t)
    out = GaussianSet(gs.centers + dx, np.clip(gs.colors + dc, 0.0, 1.0), gs.scales.copy(), gs.opacities.copy())
    return out.to_points() if as_list else out
