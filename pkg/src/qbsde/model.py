"""Problem definition: grid, generator family, terminal condition, bound constants.

The generator family is a fixed closed set (affine + quadratic-in-z +
bounded smooth y-nonlinearity) so that every bound constant can be
computed in closed form from the coefficients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateBounds, UnboundedGenerator

# sup |tanh''| = 4/(3*sqrt(3)), attained at atanh(1/sqrt(3))
_TANH_D2_MAX = 4.0 / (3.0 * math.sqrt(3.0))

_PHI = {
    "tanh": (np.tanh, lambda y: 1.0 / np.cosh(y) ** 2, lambda y: -2.0 * np.tanh(y) / np.cosh(y) ** 2),
    "sin": (np.sin, np.cos, lambda y: -np.sin(y)),
}
_PHI_D1_MAX = {"tanh": 1.0, "sin": 1.0}
_PHI_D2_MAX = {"tanh": _TANH_D2_MAX, "sin": 1.0}


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid and Monte Carlo ensemble size."""

    T: float
    n_steps: int
    n_paths: int
    seed: int

    def __post_init__(self):
        if not (self.T > 0.0 and math.isfinite(self.T)):
            raise ValueError(f"horizon T must be positive and finite, got {self.T}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.n_paths < 2:
            raise ValueError(f"n_paths must be >= 2, got {self.n_paths}")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class TerminalCondition:
    """Bounded terminal functional h(W1_T, W2_T) from a parametric family.

    Families:
      constant      h = scale
      tanh          h = scale * tanh(w) + offset
      sin           h = scale * sin(w) + offset
      clipped_poly  h = clip(scale * poly(w), -clip, clip) + offset
    where w is the level of the chosen driver (``w1`` or ``w2``).
    """

    family: str
    scale: float = 1.0
    driver: str = "w1"
    offset: float = 0.0
    coeffs: tuple = ()
    clip: float = 1.0

    def __post_init__(self):
        if self.family not in ("constant", "tanh", "sin", "clipped_poly"):
            raise ValueError(f"unknown terminal family {self.family!r}")
        if self.driver not in ("w1", "w2"):
            raise ValueError(f"terminal driver must be 'w1' or 'w2', got {self.driver!r}")
        if self.family == "clipped_poly" and self.clip <= 0:
            raise ValueError("clip bound must be positive")

    @property
    def sup_norm(self) -> float:
        """Analytic upper bound on |h|."""
        if self.family == "constant":
            return abs(self.scale + self.offset)
        if self.family in ("tanh", "sin"):
            return abs(self.scale) + abs(self.offset)
        return self.clip + abs(self.offset)

    def evaluate(self, w1, w2) -> np.ndarray:
        w = np.asarray(w1 if self.driver == "w1" else w2, dtype=float)
        if self.family == "constant":
            return np.full_like(w, self.scale + self.offset)
        if self.family == "tanh":
            return self.scale * np.tanh(w) + self.offset
        if self.family == "sin":
            return self.scale * np.sin(w) + self.offset
        vals = self.scale * np.polynomial.polynomial.polyval(w, np.asarray(self.coeffs, dtype=float))
        return np.clip(vals, -self.clip, self.clip) + self.offset

    def scaled(self, factor: float) -> "TerminalCondition":
        """Terminal condition whose values are exactly factor * h (offset included)."""
        return replace(
            self,
            scale=self.scale * factor,
            offset=self.offset * factor,
            clip=self.clip * abs(factor) if self.family == "clipped_poly" else self.clip,
        )


@dataclass(frozen=True)
class GeneratorSpec:
    """The data (f, g, xi) of the equation, with constant coefficients.

    f(t, y, v) = a + b*y + c*v + (gamma_q/2)*v**2 + mu*phi(y),
    where v stands for sigma*Z, phi in {tanh, sin}. g and sigma are
    constant in time (sigma bounded away from zero).
    """

    terminal: TerminalCondition
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    gamma_q: float = 0.0
    mu: float = 0.0
    phi: str = "tanh"
    g: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "c", "gamma_q", "mu", "g", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise UnboundedGenerator(f"coefficient {name} is not finite")
        if self.phi not in _PHI:
            raise ValueError(f"unknown smooth nonlinearity {self.phi!r}")
        if self.sigma <= 0:
            raise ValueError("sigma must be bounded away from zero (positive)")

    # -- pointwise evaluation (vectorized over y, v) --------------------

    def f(self, t, y, v):
        out = self.a + self.b * np.asarray(y, dtype=float) + self.c * np.asarray(v, dtype=float)
        out = out + 0.5 * self.gamma_q * np.asarray(v, dtype=float) ** 2
        if self.mu != 0.0:
            out = out + self.mu * _PHI[self.phi][0](np.asarray(y, dtype=float))
        return out

    def f0(self, t):
        """f(t, 0, 0); phi(0) = 0 for both families."""
        return self.a

    def f_y(self, t, y, v):
        out = np.full_like(np.asarray(y, dtype=float), self.b)
        if self.mu != 0.0:
            out = out + self.mu * _PHI[self.phi][1](np.asarray(y, dtype=float))
        return out

    def f_z(self, t, y, v):
        return self.c + self.gamma_q * np.asarray(v, dtype=float)

    def f_yy(self, t, y, v):
        if self.mu == 0.0:
            return np.zeros_like(np.asarray(y, dtype=float))
        return self.mu * _PHI[self.phi][2](np.asarray(y, dtype=float))

    def f_yz(self, t, y, v):
        return np.zeros_like(np.asarray(y, dtype=float))

    def f_zz(self, t, y, v):
        return np.full_like(np.asarray(v, dtype=float), self.gamma_q)

    def sigma_at(self, t):
        return self.sigma

    def g_at(self, t):
        return self.g


@dataclass(frozen=True)
class CoefficientBounds:
    """Closed-form bound constants for a generator on [0, T].

    theta, r_fn satisfy |f_zz| <= theta**2, |g| <= theta**2, |f_y| <= r,
    |f_yy| <= r**2, |f_yz| <= theta*r. beta = 8*max(int r**2, theta**2).
    r_resid is the smaller constant needed only for the curvature part
    (|f_yy| <= r_resid**2), used when linear terms are removed exactly by
    the exponential transform; alpha_int_inf bounds |int_0^T f_y dt|.
    """

    theta: float
    r_const: float
    r2_int_inf: float
    r_int_inf: float
    beta: float
    horizon: float
    r_resid: float
    alpha_int_inf: float
    alpha_fn: object = field(repr=False, default=None)
    gamma_fn: object = field(repr=False, default=None)

    def r_fn(self, t):
        return self.r_const


def derive_bounds(gen: GeneratorSpec, horizon: float) -> CoefficientBounds:
    """Closed-form maxima of the family coefficients on [0, horizon]."""
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError("horizon must be positive and finite")
    mu = abs(gen.mu)
    fy_max = abs(gen.b) + mu * _PHI_D1_MAX[gen.phi]
    fyy_max = mu * _PHI_D2_MAX[gen.phi]
    r = max(fy_max, math.sqrt(fyy_max))
    theta = math.sqrt(max(abs(gen.gamma_q), abs(gen.g)))
    if not all(map(math.isfinite, (r, theta))):
        raise UnboundedGenerator("derived bounds are not finite")
    r2_int = r * r * horizon
    r_int = r * horizon
    beta = 8.0 * max(r2_int, theta * theta)
    return CoefficientBounds(
        theta=theta,
        r_const=r,
        r2_int_inf=r2_int,
        r_int_inf=r_int,
        beta=beta,
        horizon=horizon,
        r_resid=math.sqrt(fyy_max),
        alpha_int_inf=fy_max * horizon,
        alpha_fn=lambda t: gen.f_y(t, 0.0, 0.0),
        gamma_fn=lambda t: gen.f_z(t, 0.0, 0.0),
    )


def smallness_threshold(bounds: CoefficientBounds) -> float:
    """Largest terminal sup-norm for which the contraction argument applies."""
    if bounds.beta == 0.0:
        raise DegenerateBounds(
            "beta = 0: generator has no quadratic or y-dependence; "
            "the smallness threshold is unrestricted"
        )
    return (1.0 / (32.0 * bounds.beta)) * math.exp(-2.0 * bounds.r_int_inf)


def ball_radius(xi_sup: float) -> float:
    """Radius of the invariant ball for the fixed-point map."""
    if xi_sup < 0:
        raise ValueError("terminal sup-norm must be nonnegative")
    return 2.0 * math.sqrt(2.0) * xi_sup


def ball_inequality_holds(xi_sup: float, beta: float) -> bool:
    """Check 4*|xi|^2 + beta^2 R^4 <= R^2 at R = ball_radius(xi_sup)."""
    R = ball_radius(xi_sup)
    return 4.0 * xi_sup**2 + beta**2 * R**4 <= R**2 * (1.0 + 1e-12)
