"""Model ingredients: periodic grid, velocity quadrature, opacity laws.

The kinetic unknown f(x, v) lives on the periodic unit torus in x and on a
finite velocity quadrature in v.  The macroscopic density is the velocity
average <f> = sum_k w_k f(x, v_k), and all kinetic norms are taken in the
equilibrium-weighted space with squared norm

    ||f||^2 = int sum_k w_k |f(x, v_k)|^2 / F(v_k) dx.

Velocity arrays use the last axis for v, so a kinetic field on a grid with
shape ``grid.shape`` is an array of shape ``grid.shape + (n_v,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the periodic unit torus [0, 1)^dim."""

    n_x: int
    dim: int = 1

    def __post_init__(self) -> None:
        if self.n_x < 4:
            raise ValueError(f"n_x must be at least 4, got {self.n_x}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_x,) * self.dim

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_x

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def size(self) -> int:
        return self.n_x**self.dim

    def axis_points(self) -> np.ndarray:
        return np.arange(self.n_x) / self.n_x

    def coords(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per dimension."""
        x = self.axis_points()
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def integrate(self, values: np.ndarray) -> np.ndarray | float:
        """Integrate over the torus (leading ``dim`` axes of ``values``)."""
        return self.cell_volume * np.sum(values, axis=tuple(range(self.dim)))


def l2_norm_sq(grid: TorusGrid, rho: np.ndarray) -> float:
    """Squared spatial L^2 norm of a density field."""
    return float(grid.cell_volume * np.sum(rho * rho))


@dataclass(frozen=True, eq=False)
class VelocityQuadrature:
    """Discrete velocity measure with equilibrium profile and transport speeds.

    ``weights`` and ``nodes`` discretize the velocity measure, ``equilibrium``
    is the positive profile F with <F> = 1, and ``speeds`` are the transport
    speeds a(v_k) with vanishing equilibrium flux sum_k w_k a_k F_k = 0.
    ``smoothing_exponent`` records the velocity-averaging regularity exponent
    used to validate Sobolev diagnostics of order s < exponent / 2.
    """

    name: str
    nodes: np.ndarray
    weights: np.ndarray
    speeds: np.ndarray
    equilibrium: np.ndarray
    smoothing_exponent: float = 1.0

    def __post_init__(self) -> None:
        n = self.nodes.shape[0]
        if n < 2:
            raise ValueError(f"need at least 2 velocity nodes, got {n}")
        for label in ("weights", "speeds", "equilibrium"):
            if getattr(self, label).shape != (n,):
                raise ValueError(f"{label} must have shape ({n},)")
        if np.any(self.weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        if np.any(self.equilibrium <= 0.0):
            raise ValueError("equilibrium profile must be positive")

    @property
    def n_v(self) -> int:
        return self.nodes.shape[0]

    def equilibrium_mass(self) -> float:
        """<F>, exactly 1 after builder normalization."""
        return math.fsum(self.weights * self.equilibrium)

    def null_flux(self) -> float:
        """Equilibrium flux sum_k w_k a_k F_k; exactly 0 for symmetric layouts.

        Uses exact summation so that mirror-symmetric node layouts cancel
        without roundoff.
        """
        return math.fsum(self.weights * self.speeds * self.equilibrium)

    def diffusion_coefficient(self) -> float:
        """K = sum_k w_k a_k^2 F_k, the diffusion coefficient of the limit."""
        return math.fsum(self.weights * self.speeds**2 * self.equilibrium)


def build_velocity_space(name: str, n_nodes: int | None = None) -> VelocityQuadrature:
    """Build a named velocity model.

    ``two-speed``: nodes +-1 with weights 1/2, flat equilibrium F = 1, K = 1.
    ``legendre``: Gauss-Legendre nodes on [-1, 1] with F = 1/2, K = 1/3; the
    quadrature is exact for v^2 for any n_nodes >= 2 (default 8).
    """
    key = name.strip().lower()
    if key in ("two-speed", "gt2"):
        if n_nodes not in (None, 2):
            raise ValueError("the two-speed model has exactly 2 nodes")
        nodes = np.array([-1.0, 1.0])
        weights = np.array([0.5, 0.5])
        equilibrium = np.array([1.0, 1.0])
        return VelocityQuadrature("two-speed", nodes, weights, nodes.copy(), equilibrium)
    if key in ("legendre", "cont"):
        n = 8 if n_nodes is None else n_nodes
        if n < 2:
            raise ValueError(f"need at least 2 velocity nodes, got {n}")
        x, w = np.polynomial.legendre.leggauss(n)
        # Enforce a bitwise mirror-symmetric layout so that odd moments
        # cancel exactly.
        x = (x - x[::-1]) / 2.0
        w = (w + w[::-1]) / 2.0
        equilibrium = np.full(n, 0.5)
        w = w / math.fsum(w * equilibrium)
        return VelocityQuadrature("legendre", x, w, x.copy(), equilibrium)
    raise ValueError(f"unknown velocity model {name!r}; use 'two-speed' or 'legendre'")


def density(quad: VelocityQuadrature, f: np.ndarray) -> np.ndarray:
    """Velocity average <f> over the trailing axis."""
    return f @ quad.weights


def equilibrium_field(quad: VelocityQuadrature, rho: np.ndarray) -> np.ndarray:
    """Local equilibrium rho(x) F(v)."""
    return np.multiply.outer(rho, quad.equilibrium)


def weighted_inner(grid: TorusGrid, quad: VelocityQuadrature, f: np.ndarray, g: np.ndarray) -> float:
    """Inner product in the equilibrium-weighted space, (f, g) = int <fg/F> dx."""
    return float(grid.cell_volume * np.sum((f * g) @ (quad.weights / quad.equilibrium)))


def weighted_norm_sq(grid: TorusGrid, quad: VelocityQuadrature, f: np.ndarray) -> float:
    return weighted_inner(grid, quad, f, f)


def weighted_norm(grid: TorusGrid, quad: VelocityQuadrature, f: np.ndarray) -> float:
    return math.sqrt(max(weighted_norm_sq(grid, quad, f), 0.0))


def relaxation_operator(quad: VelocityQuadrature, f: np.ndarray) -> np.ndarray:
    """L f = <f> F - f, the collisional relaxation toward local equilibrium."""
    return equilibrium_field(quad, density(quad, f)) - f


class Opacity:
    """Density-dependent relaxation rate sigma(u) with uniform bounds.

    Subclasses implement ``__call__`` (the rate) and ``primitive`` (the
    function G with G'(u) = 1/sigma(u), G(0) = 0, used by the nonlinear
    diffusion flux of the limit equation).
    """

    def __init__(self, name: str, sigma_star: float, sigma_upper: float, lipschitz: float):
        if not 0.0 < sigma_star <= sigma_upper:
            raise ValueError("need 0 < sigma_star <= sigma_upper")
        self.name = name
        self.sigma_star = sigma_star
        self.sigma_upper = sigma_upper
        self.lipschitz = lipschitz

    def __call__(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def primitive(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        return (
            f"{self.name}: sigma in [{self.sigma_star:g}, {self.sigma_upper:g}], "
            f"Lipschitz constant {self.lipschitz:g}"
        )


class ConstantOpacity(Opacity):
    """sigma(u) = c."""

    def __init__(self, value: float = 1.0):
        super().__init__("constant", value, value, 0.0)
        self.value = value

    def __call__(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value)

    def primitive(self, u):
        return np.asarray(u, dtype=float) / self.value


class RationalOpacity(Opacity):
    """sigma(u) = s0 + s1 / (1 + u^2), decreasing in |u|, bounded in [s0, s0+s1]."""

    def __init__(self, s0: float = 1.0, s1: float = 1.0):
        if s0 <= 0.0 or s1 < 0.0:
            raise ValueError("need s0 > 0 and s1 >= 0")
        # max |sigma'| = s1 * 3 sqrt(3) / 8, attained at u = 1/sqrt(3)
        super().__init__("rational", s0, s0 + s1, s1 * 3.0 * math.sqrt(3.0) / 8.0)
        self.s0 = s0
        self.s1 = s1

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return self.s0 + self.s1 / (1.0 + u * u)

    def primitive(self, u):
        u = np.asarray(u, dtype=float)
        s0, s1 = self.s0, self.s1
        scale = math.sqrt(s0 / (s0 + s1))
        return u / s0 - (s1 / s0) / math.sqrt(s0 * (s0 + s1)) * np.arctan(scale * u)


def make_opacity(kind: str, **params: float) -> Opacity:
    key = kind.strip().lower()
    if key == "constant":
        return ConstantOpacity(params.get("value", 1.0))
    if key == "rational":
        return RationalOpacity(params.get("s0", 1.0), params.get("s1", 1.0))
    raise ValueError(f"unknown opacity kind {kind!r}; use 'constant' or 'rational'")


def relax_exact(
    quad: VelocityQuadrature,
    opacity: Opacity,
    f: np.ndarray,
    tau: float,
) -> np.ndarray:
    """Exact relaxation flow over a time tau >= 0.

    The relaxation ODE d_t f = sigma(<f>) (<f> F - f) preserves <f>, so it
    integrates exactly to

        f(tau) = <f> F + (f - <f> F) exp(-tau sigma(<f>)).
    """
    if tau < 0.0:
        raise ValueError(f"relaxation time must be nonnegative, got {tau}")
    rho = density(quad, f)
    eq = equilibrium_field(quad, rho)
    decay = np.exp(-tau * opacity(rho))
    return eq + (f - eq) * decay[..., None]
