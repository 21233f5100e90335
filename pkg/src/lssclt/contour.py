"""Closed rectangular contours with composite Gauss-Legendre quadrature."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgument, QuadratureNotConverged

PANEL_ORDERS = (16, 12, 10, 8, 6, 4, 2)


@lru_cache(maxsize=None)
def _gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def _panel_split(count: int) -> tuple[int, int]:
    for order in PANEL_ORDERS:
        if count >= order and count % order == 0:
            return count // order, order
    return 1, count


def _segment(a: complex, b: complex, count: int) -> tuple[np.ndarray, np.ndarray]:
    panels, order = _panel_split(count)
    x, w = _gauss_legendre(order)
    edges = a + (b - a) * np.linspace(0.0, 1.0, panels + 1)
    nodes = []
    weights = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * x)
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True, eq=False)
class RectContour:
    """Positively oriented rectangle with corners ``x_l +- i v0``, ``x_r +- i v0``.

    ``nodes`` and ``weights`` (complex ``dz`` weights) run counterclockwise
    starting on the real axis at ``x_r``. Each vertical side is split at the
    real axis so the upper and lower halves are exact mirror images.
    """

    x_l: float
    x_r: float
    v0: float
    nodes_per_side: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def upper(self) -> np.ndarray:
        return self.nodes.imag > 0

    @property
    def upper_nodes(self) -> np.ndarray:
        return self.nodes[self.upper]

    @property
    def upper_weights(self) -> np.ndarray:
        return self.weights[self.upper]

    def integrate(self, values: np.ndarray) -> complex:
        return complex(np.sum(np.asarray(values) * self.weights))

    def refined(self, factor: int = 2) -> RectContour:
        return rect_contour(self.x_l, self.x_r, self.v0, self.nodes_per_side * factor)

    def contains(self, c: complex) -> bool:
        return self.x_l < c.real < self.x_r and abs(c.imag) < self.v0


def rect_contour(x_l: float, x_r: float, v0: float, nodes_per_side: int) -> RectContour:
    """Build the rectangle with ``nodes_per_side`` nodes on each of its four sides."""
    if not x_l < x_r:
        raise InvalidArgument(f"need x_l < x_r, got {x_l}, {x_r}")
    if v0 <= 0:
        raise InvalidArgument("v0 must be positive")
    if nodes_per_side < 2 or nodes_per_side % 2:
        raise InvalidArgument("nodes_per_side must be a positive even integer")
    half = nodes_per_side // 2
    corners = [
        (complex(x_r, 0), complex(x_r, v0), half),
        (complex(x_r, v0), complex(x_l, v0), nodes_per_side),
        (complex(x_l, v0), complex(x_l, 0), half),
        (complex(x_l, 0), complex(x_l, -v0), half),
        (complex(x_l, -v0), complex(x_r, -v0), nodes_per_side),
        (complex(x_r, -v0), complex(x_r, 0), half),
    ]
    parts = [_segment(a, b, k) for a, b, k in corners]
    nodes = np.concatenate([p[0] for p in parts])
    weights = np.concatenate([p[1] for p in parts])
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return RectContour(float(x_l), float(x_r), float(v0), int(nodes_per_side), nodes, weights)


def integrate_adaptive(
    evaluate: Callable[[RectContour], tuple[complex, float]],
    contour: RectContour,
    *,
    rtol: float = 1e-8,
    max_nodes: int = 4096,
) -> tuple[complex, float]:
    """Double the node count until successive estimates agree.

    ``evaluate`` returns ``(value, scale)`` where ``scale`` is the sum of the
    absolute quadrature terms; a change below ``1e-13 * scale`` counts as
    converged since it is at the level of rounding in the sum.

    Returns the final value and the relative change of the last doubling.
    """
    value, scale = evaluate(contour)
    current = contour
    while True:
        if current.nodes_per_side * 2 > max_nodes:
            raise QuadratureNotConverged(
                f"contour quadrature not converged at {current.nodes_per_side} nodes per side",
                residual=float("nan"),
                iterations=current.nodes_per_side,
            )
        current = current.refined()
        new, scale = evaluate(current)
        change = abs(new - value)
        rel = change / max(abs(new), 1e-300)
        if change <= rtol * abs(new) + 1e-13 * scale:
            return new, rel
        value = new
