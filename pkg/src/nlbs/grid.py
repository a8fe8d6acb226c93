"""Log-spaced price grid, time axis and the discrete S^2 d^2/dS^2 operator.

The price nodes are uniform in x = ln S. The second-derivative stencil is the
unique three-point operator on neighbouring nodes that is exact on 1, S and
S^2; on a geometric grid it is a second-order discretisation of
``d_xx - d_x`` (= S^2 d_SS) and it annihilates affine payoffs exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class SpaceTimeGrid:
    s_min: float
    s_max: float
    n_space: int = 400
    n_time: int = 200
    epsilon: float = 1e-3
    n_itnl: int = 3
    nl_tol: float = 1e-9
    # "newton" (default) or "picard" (coefficient mu frozen at the last iterate)
    linearization: str = "newton"
    # time-to-maturity of level i is T * (i / n_time) ** time_grading
    time_grading: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.s_min < self.s_max):
            raise ValueError(f"need 0 < s_min < s_max, got {self.s_min}, {self.s_max}")
        if self.n_space < 3:
            raise ValueError("n_space must be >= 3")
        if self.n_time < 1:
            raise ValueError("n_time must be >= 1")
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be > 0")
        if self.n_itnl < 1:
            raise ValueError("n_itnl must be >= 1")
        if not self.nl_tol >= 0.0:
            raise ValueError("nl_tol must be >= 0")
        if self.linearization not in ("newton", "picard"):
            raise ValueError(f"linearization must be 'newton' or 'picard', got {self.linearization!r}")
        if not self.time_grading >= 1.0:
            raise ValueError("time_grading must be >= 1")

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(np.log(self.s_min), np.log(self.s_max), self.n_space)

    @cached_property
    def prices(self) -> np.ndarray:
        s = np.exp(self.x)
        s[0], s[-1] = self.s_min, self.s_max
        return s

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def cap(self) -> float:
        return 1.0 / self.epsilon

    def times(self, maturity: float) -> np.ndarray:
        """Increasing time levels from 0 to maturity, refined near maturity when graded."""
        if self.time_grading == 1.0:
            return np.linspace(0.0, maturity, self.n_time + 1)
        tau = maturity * (np.arange(self.n_time + 1) / self.n_time) ** self.time_grading
        t = maturity - tau[::-1]
        t[0], t[-1] = 0.0, maturity
        return t

    @cached_property
    def stencil(self) -> "Stencil":
        return Stencil(self.prices)

    def with_(self, **changes) -> "SpaceTimeGrid":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return SpaceTimeGrid(**fields)


class Stencil:
    """Three-point difference weights on an arbitrary increasing price grid."""

    def __init__(self, prices):
        s = np.asarray(prices, dtype=float)
        if s.ndim != 1 or s.size < 3 or np.any(np.diff(s) <= 0):
            raise ValueError("prices must be a strictly increasing 1-D array of length >= 3")
        self.prices = s
        hm = s[1:-1] - s[:-2]
        hp = s[2:] - s[1:-1]
        s2 = s[1:-1] ** 2
        # S^2 u'' ~ lower*u[j-1] + diag*u[j] + upper*u[j+1]
        self.lower = 2.0 * s2 / (hm * (hm + hp))
        self.upper = 2.0 * s2 / (hp * (hm + hp))
        self.diag = -(self.lower + self.upper)
        # u' ~ d_lower*u[j-1] + d_diag*u[j] + d_upper*u[j+1]
        self.d_lower = -hp / (hm * (hm + hp))
        self.d_upper = hm / (hp * (hm + hp))
        self.d_diag = -(self.d_lower + self.d_upper)

    def gamma_c(self, u: np.ndarray) -> np.ndarray:
        """S^2 u'' at every node; boundary nodes reuse the adjacent interior quadratic.

        ``u`` may carry leading batch axes; the last axis is price.
        """
        u = np.asarray(u, dtype=float)
        s = self.prices
        out = np.empty_like(u)
        out[..., 1:-1] = (self.lower * u[..., :-2] + self.diag * u[..., 1:-1]
                          + self.upper * u[..., 2:])
        out[..., 0] = out[..., 1] * (s[0] / s[1]) ** 2
        out[..., -1] = out[..., -2] * (s[-1] / s[-2]) ** 2
        return out

    def interior_gamma_c(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (self.lower * u[..., :-2] + self.diag * u[..., 1:-1]
                + self.upper * u[..., 2:])

    def delta(self, u: np.ndarray) -> np.ndarray:
        """du/dS, centred inside and one-sided (exact on quadratics) at the ends."""
        u = np.asarray(u, dtype=float)
        s = self.prices
        out = np.empty_like(u)
        out[..., 1:-1] = (self.d_lower * u[..., :-2] + self.d_diag * u[..., 1:-1]
                          + self.d_upper * u[..., 2:])
        out[..., 0] = _one_sided(s[0], s[1], s[2], u[..., 0], u[..., 1], u[..., 2], at=s[0])
        out[..., -1] = _one_sided(s[-3], s[-2], s[-1], u[..., -3], u[..., -2], u[..., -1],
                                  at=s[-1])
        return out


def _one_sided(s0, s1, s2, u0, u1, u2, at):
    # derivative of the interpolating quadratic through three nodes
    l0 = ((at - s1) + (at - s2)) / ((s0 - s1) * (s0 - s2))
    l1 = ((at - s0) + (at - s2)) / ((s1 - s0) * (s1 - s2))
    l2 = ((at - s0) + (at - s1)) / ((s2 - s0) * (s2 - s1))
    return l0 * u0 + l1 * u1 + l2 * u2
