"""Test functions with registered derivatives, addressable by name."""

from __future__ import annotations

import enum
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


class Smoothness(str, enum.Enum):
    ANALYTIC_WITH_DERIV = "analytic"
    C3 = "c3"


@dataclass(frozen=True)
class TestFunction:
    """A real test function with optional derivatives.

    Analytic functions accept complex arrays in ``eval`` and ``deriv1`` so
    they can be integrated on a contour directly.
    """

    __test__ = False  # not a pytest class

    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    deriv1: Callable[[np.ndarray], np.ndarray] | None = None
    deriv2: Callable[[np.ndarray], np.ndarray] | None = None
    deriv3: Callable[[np.ndarray], np.ndarray] | None = None
    smoothness: Smoothness = Smoothness.ANALYTIC_WITH_DERIV

    def __call__(self, x):
        return self.eval(x)

    @property
    def analytic(self) -> bool:
        return self.smoothness is Smoothness.ANALYTIC_WITH_DERIV

    def complex_eval(self, z):
        if not self.analytic:
            raise InvalidArgument(f"{self.name} is only C^3; fit a Bernstein approximant first")
        return self.eval(z)


def _pos(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


REGISTRY: dict[str, TestFunction] = {
    "affine": TestFunction(
        "affine",
        lambda x: 1.0 * np.asarray(x),
        lambda x: np.ones_like(np.asarray(x)),
        lambda x: np.zeros_like(np.asarray(x)),
        lambda x: np.zeros_like(np.asarray(x)),
    ),
    "square": TestFunction(
        "square",
        lambda x: np.asarray(x) ** 2,
        lambda x: 2.0 * np.asarray(x),
        lambda x: np.full_like(np.asarray(x), 2.0),
        lambda x: np.zeros_like(np.asarray(x)),
    ),
    "cube": TestFunction(
        "cube",
        lambda x: np.asarray(x) ** 3,
        lambda x: 3.0 * np.asarray(x) ** 2,
        lambda x: 6.0 * np.asarray(x),
        lambda x: np.full_like(np.asarray(x), 6.0),
    ),
    # x_+^{7/2}: three continuous derivatives, the fourth blows up at 0
    "pow7half": TestFunction(
        "pow7half",
        lambda x: _pos(x) ** 3.5,
        lambda x: 3.5 * _pos(x) ** 2.5,
        lambda x: 8.75 * _pos(x) ** 1.5,
        lambda x: 13.125 * _pos(x) ** 0.5,
        Smoothness.C3,
    ),
    "logshift": TestFunction(
        "logshift",
        lambda x: np.log1p(np.asarray(x)),
        lambda x: 1.0 / (1.0 + np.asarray(x)),
        lambda x: -1.0 / (1.0 + np.asarray(x)) ** 2,
        lambda x: 2.0 / (1.0 + np.asarray(x)) ** 3,
    ),
}


def get_function(name: str) -> TestFunction:
    try:
        return REGISTRY[name]
    except KeyError:
        raise InvalidArgument(f"unknown test function {name!r}; known: {sorted(REGISTRY)}") from None
