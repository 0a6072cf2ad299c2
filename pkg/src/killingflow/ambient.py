"""Warped-product ambient geometry ``M = P x_{1/sqrt(gamma)} I``.

A geometry is described on a single chart of the leaf ``P`` by the leaf metric
``sigma_ij``, its Christoffel symbols and the warping function
``gamma = 1/|Y|^2`` of the Killing field ``Y``.  Every field is a vectorized
callable on points of shape ``(..., n)``.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import DomainError, GeometryError
from .grid import Chart

FD_STEP = 1e-5


class AmbientPoint(NamedTuple):
    sigma: np.ndarray
    sigma_inv: np.ndarray
    christoffel: np.ndarray
    gamma: np.ndarray
    grad_gamma: np.ndarray


class NodeGeometry(NamedTuple):
    """Ambient data sampled on every node of a chart (flattened node axis first).

    ``christoffel[p, k, i, j]`` is Gamma^k_ij at node p; ``grad_gamma`` holds the
    partials gamma_i and ``grad_gamma_up`` the raised components sigma^ij gamma_j.
    """

    sigma: np.ndarray
    sigma_inv: np.ndarray
    christoffel: np.ndarray
    gamma: np.ndarray
    grad_gamma: np.ndarray
    grad_gamma_up: np.ndarray
    sqrt_det: np.ndarray
    flat: bool


class AmbientGeometry:
    """Base class; subclasses override the analytic fields they know.

    The defaults derive ``sigma_inv`` by inversion, Christoffel symbols by
    central differences of ``sigma`` and ``grad_gamma`` by central differences
    of ``gamma`` (all with step ``fd_step``; truncation error O(fd_step^2)).
    """

    dim: int = 1
    name: str = "geometry"
    fd_step: float = FD_STEP

    def __init__(self):
        self._node_cache = {}

    # -- fields --------------------------------------------------------------
    def sigma(self, x):
        raise NotImplementedError

    def gamma(self, x):
        raise NotImplementedError

    def sigma_inv(self, x):
        return np.linalg.inv(self.sigma(x))

    def grad_gamma(self, x):
        return central_gradient(self.gamma, x, self.fd_step)

    def christoffel(self, x):
        return christoffel_from_metric(self.sigma, self.sigma_inv(x), x, self.fd_step)

    def check_domain(self, x):
        """Raise :class:`DomainError` if ``x`` is outside the geometry's domain."""

    # -- derived -------------------------------------------------------------
    def killing_acceleration(self, x):
        """The vector nabla_Y Y = grad(gamma) / (2 gamma^2), index raised with sigma."""
        x = np.asarray(x, dtype=float)
        up = np.einsum("...ij,...j->...i", self.sigma_inv(x), self.grad_gamma(x))
        return up / (2.0 * self.gamma(x)[..., None] ** 2)

    def on_chart(self, chart: Chart) -> NodeGeometry:
        cached = self._node_cache.get(chart)
        if cached is not None:
            return cached
        if chart.dim != self.dim:
            raise GeometryError(f"{self.name} is {self.dim}D but the chart is {chart.dim}D")
        x = chart.points.reshape(-1, chart.dim)
        self.check_domain(x)
        pt = ambient_eval(self, x)
        up = np.einsum("pij,pj->pi", pt.sigma_inv, pt.grad_gamma)
        ng = NodeGeometry(pt.sigma, pt.sigma_inv, pt.christoffel, pt.gamma, pt.grad_gamma, up,
                          np.sqrt(np.linalg.det(pt.sigma)), bool(np.all(pt.christoffel == 0.0)))
        self._node_cache[chart] = ng
        return ng

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"


def central_gradient(f, x, h):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    out = np.empty(x.shape)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def christoffel_from_metric(sigma, sigma_inv, x, h):
    """Gamma^k_ij = 1/2 sigma^kl (d_i sigma_jl + d_j sigma_il - d_l sigma_ij), by central differences."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    dsig = np.empty(x.shape[:-1] + (n, n, n))  # [..., l, i, j] = d_l sigma_ij
    for l in range(n):
        e = np.zeros(n)
        e[l] = h
        dsig[..., l, :, :] = (sigma(x + e) - sigma(x - e)) / (2 * h)
    # lower[..., i, j, l] = d_i sigma_jl + d_j sigma_il - d_l sigma_ij
    lower = (np.einsum("...ijl->...ijl", dsig)
             + np.einsum("...jil->...ijl", dsig)
             - np.einsum("...lij->...ijl", dsig))
    return 0.5 * np.einsum("...kl,...ijl->...kij", sigma_inv, lower)


# ---------------------------------------------------------------------------
# built-in geometries


class EuclideanProduct(AmbientGeometry):
    """``P x R`` with flat leaf: sigma = identity, gamma = 1."""

    name = "EuclideanProduct"

    def __init__(self, dim: int = 1):
        super().__init__()
        if dim not in (1, 2):
            raise GeometryError("only n = 1 or 2 is supported")
        self.dim = dim

    def sigma(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    def sigma_inv(self, x):
        return self.sigma(x)

    def christoffel(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim,) * 3)

    def gamma(self, x):
        return np.ones(np.asarray(x).shape[:-1])

    def grad_gamma(self, x):
        return np.zeros(np.asarray(x, dtype=float).shape)


class Helicoidal(EuclideanProduct):
    """Euclidean R^3 in cylindrical coordinates with Y = d/dtheta.

    The leaf is the half-plane theta = 0 with chart variables (r, z); the
    metric is flat and gamma = 1/r^2.  Points with r < r_min are rejected.
    """

    name = "Helicoidal"

    def __init__(self, r_min: float = 0.5):
        super().__init__(2)
        if not r_min > 0:
            raise GeometryError("Helicoidal geometry needs r_min > 0")
        self.r_min = float(r_min)

    def check_domain(self, x):
        r = np.asarray(x, dtype=float)[..., 0]
        if np.any(r < self.r_min):
            raise DomainError(f"Helicoidal chart requires r >= r_min = {self.r_min}, "
                              f"got r = {float(np.min(r))}")

    def gamma(self, x):
        r = np.asarray(x, dtype=float)[..., 0]
        return 1.0 / r**2

    def grad_gamma(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        out[..., 0] = -2.0 / x[..., 0] ** 3
        return out

    def __repr__(self):
        return f"Helicoidal(r_min={self.r_min})"


class ExponentialWarp(EuclideanProduct):
    """One-dimensional leaf with gamma(x) = exp(2 lam x)."""

    name = "ExponentialWarp"

    def __init__(self, lam: float = 1.0):
        super().__init__(1)
        self.lam = float(lam)

    def gamma(self, x):
        return np.exp(2 * self.lam * np.asarray(x, dtype=float)[..., 0])

    def grad_gamma(self, x):
        x = np.asarray(x, dtype=float)
        return (2 * self.lam * np.exp(2 * self.lam * x[..., 0]))[..., None]

    def __repr__(self):
        return f"ExponentialWarp(lam={self.lam})"


class WarpedProduct(AmbientGeometry):
    """User geometry built from callables.

    ``sigma(x)`` must return shape ``(..., n, n)`` and ``gamma(x)`` shape
    ``(...)``.  Missing ``grad_gamma``/``christoffel``/``sigma_inv`` fall back
    to the finite-difference defaults of :class:`AmbientGeometry`.
    """

    def __init__(self, dim: int, sigma: Callable, gamma: Callable,
                 grad_gamma: Optional[Callable] = None,
                 christoffel: Optional[Callable] = None,
                 sigma_inv: Optional[Callable] = None,
                 name: str = "WarpedProduct", domain: Optional[Callable] = None):
        super().__init__()
        if dim not in (1, 2):
            raise GeometryError("only n = 1 or 2 is supported")
        self.dim = dim
        self.name = name
        self._sigma = sigma
        self._gamma = gamma
        self._grad_gamma = grad_gamma
        self._christoffel = christoffel
        self._sigma_inv = sigma_inv
        self._domain = domain

    def sigma(self, x):
        return np.asarray(self._sigma(np.asarray(x, dtype=float)), dtype=float)

    def gamma(self, x):
        return np.asarray(self._gamma(np.asarray(x, dtype=float)), dtype=float)

    def sigma_inv(self, x):
        if self._sigma_inv is None:
            return super().sigma_inv(x)
        return np.asarray(self._sigma_inv(np.asarray(x, dtype=float)), dtype=float)

    def grad_gamma(self, x):
        if self._grad_gamma is None:
            return super().grad_gamma(x)
        return np.asarray(self._grad_gamma(np.asarray(x, dtype=float)), dtype=float)

    def christoffel(self, x):
        if self._christoffel is None:
            return super().christoffel(x)
        return np.asarray(self._christoffel(np.asarray(x, dtype=float)), dtype=float)

    def check_domain(self, x):
        if self._domain is not None and not np.all(self._domain(np.asarray(x, dtype=float))):
            raise DomainError(f"point(s) outside the domain of {self.name}")

    def __repr__(self):
        return f"WarpedProduct(name={self.name!r}, dim={self.dim})"


# ---------------------------------------------------------------------------
# operations


def ambient_eval(geometry: AmbientGeometry, x, chart: Optional[Chart] = None) -> AmbientPoint:
    """Evaluate the full ambient package at ``x`` (shape ``(n,)`` or ``(..., n)``)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != geometry.dim:
        raise DomainError(f"expected {geometry.dim}-component points, got shape {x.shape}")
    if chart is not None:
        chart.check_points(x)
    geometry.check_domain(x)
    sigma = geometry.sigma(x)
    if not np.allclose(sigma, np.swapaxes(sigma, -1, -2), rtol=0, atol=1e-14):
        raise GeometryError("sigma is not symmetric")
    # leading principal minors
    if not np.all(sigma[..., 0, 0] > 0) or not np.all(np.linalg.det(sigma) > 0):
        raise GeometryError("sigma is not positive definite")
    gamma = geometry.gamma(x)
    if not np.all(gamma > 0):
        raise GeometryError("gamma must be positive")
    out = AmbientPoint(sigma, geometry.sigma_inv(x), geometry.christoffel(x), gamma,
                       geometry.grad_gamma(x))
    for name, value in zip(out._fields, out):
        if not np.all(np.isfinite(value)):
            raise GeometryError(f"non-finite {name}")
    return out


def christoffel_consistency(geometry: AmbientGeometry, x, h: float) -> float:
    """Max over indices of |Gamma^k_ij - 1/2 sigma^kl(...)| with derivatives of step h."""
    if not h > 0:
        raise ValueError("step must be positive")
    pt = ambient_eval(geometry, x)
    fd = christoffel_from_metric(geometry.sigma, pt.sigma_inv, np.asarray(x, dtype=float), h)
    return float(np.max(np.abs(pt.christoffel - fd)))


def grad_gamma_consistency(geometry: AmbientGeometry, x, h: float) -> float:
    """Max |grad_gamma - central differences of gamma| at ``x``."""
    pt = ambient_eval(geometry, x)
    return float(np.max(np.abs(pt.grad_gamma - central_gradient(geometry.gamma, x, h))))


def builtin_geometry(tag: str, **params) -> AmbientGeometry:
    """Construct a built-in geometry from its tag name."""
    tags = {
        "EuclideanProduct": EuclideanProduct,
        "Helicoidal": Helicoidal,
        "ExponentialWarp": ExponentialWarp,
    }
    try:
        cls = tags[tag]
    except KeyError:
        raise GeometryError(f"unknown geometry tag {tag!r}; expected one of {sorted(tags)}") from None
    return cls(**params)
