"""Zeta-regularized log det(-Laplace + m^2) from a truncated FEM spectrum.

The heat trace is split at a time ``u0``.  Above ``u0`` the computed
eigenvalues are used directly; below it the small-time expansion

    Tr exp(-u(-Laplace + m^2)) ~ e^{-u m^2} (A / (4 pi u) + c)

is integrated analytically.  For a flat surface with cone points of total
angle ``alpha`` the constant is ``c = sum (2 pi / alpha - alpha / 2 pi) / 12``
(zero for a torus, -1/8 per 4 pi cone).  The truncation is exact up to terms
of order ``exp(-u0 lam_N)`` and ``exp(-r^2 / 4 u0)`` with ``r`` the shortest
closed geodesic.  The constant can also be fitted to the computed trace,
which is what non-flat meshes fall back to; the fit is always reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import exp1, k1

from ..errors import NumericError, UsageError
from .fem import fem_spectrum, richardson_spectrum


@dataclass(frozen=True)
class DetSpec:
    """Determinant settings.

    ``u0`` split time; ``cutoff`` requires ``u0 * lam_max >= cutoff``;
    ``constant`` is ``"cones"`` (analytic) or ``"fit"``; ``richardson``
    extrapolates eigenvalues from spacings h and h/2.
    """

    u0: float = 0.02
    cutoff: float = 20.0
    constant: str = "cones"
    richardson: bool = True
    fit_window: float = 2.0

    def n_eigs(self, area):
        return int(math.ceil(1.05 * area * self.cutoff / (4 * math.pi * self.u0))) + 10


@dataclass
class DetResult:
    log_det: float
    n_eigs: int
    report: dict = field(default_factory=dict)


def cone_constant(angles):
    """Heat-trace constant of a flat surface from its cone angles."""
    return float(sum((2 * math.pi / a - a / (2 * math.pi)) / 12 for a in angles))


def heat_fit(eigs, area, m, u0, window=2.0, n=20):
    """Least-squares constant of Tr e^{-u L} e^{u m^2} - A/(4 pi u) on [u0, window*u0]."""
    us = np.geomspace(u0, window * u0, n)
    theta = np.exp(-np.outer(us, eigs)).sum(axis=1) * np.exp(us * m * m)
    rest = theta - area / (4 * math.pi * us)
    c = float(rest.mean())
    return c, float(np.max(np.abs(rest - c)))


def logdet_from_eigs(eigs, area, m, u0, c):
    """log det from eigenvalues of -Laplace + m^2 and heat constant ``c``."""
    if m <= 0:
        raise UsageError("mass must be positive")
    eigs = np.asarray(eigs, float)
    a = area / (4 * math.pi)
    m2 = m * m
    small = (-a * m2 * (math.log(m2) - 1)
             + a * (math.exp(-m2 * u0) / u0 - m2 * exp1(m2 * u0))
             + c * (math.log(m2) + exp1(m2 * u0)))
    return float(small - exp1(u0 * eigs).sum())


def logdet_regularized(mesh, m, spec=DetSpec(), eigs=None):
    """Regularized log det(-Laplace + m^2) on ``mesh`` with a fit-quality report."""
    if spec.constant not in ("cones", "fit"):
        raise UsageError(f"unknown heat constant mode {spec.constant!r}")
    area = mesh.area
    k = min(spec.n_eigs(area), mesh.n_vertices - 1)
    if eigs is None:
        if spec.richardson:
            eigs, coarse, _ = richardson_spectrum(mesh, m, k)
        else:
            eigs = fem_spectrum(mesh, m, k)
    eigs = np.sort(np.asarray(eigs, float))
    reach = spec.u0 * eigs[-1]
    if reach < spec.cutoff * 0.9:
        raise NumericError("spectrum too short for the split time",
                           {"u0": spec.u0, "lam_max": float(eigs[-1]), "reach": reach})
    c_fit, resid = heat_fit(eigs, area, m, spec.u0, spec.fit_window)
    flat = mesh.metadata.get("flat", True)
    if spec.constant == "cones" and flat:
        c = cone_constant(mesh.cone_angles.values())
    else:
        c = c_fit
    ld = logdet_from_eigs(eigs, area, m, spec.u0, c)
    report = {"area": area, "u0": spec.u0, "lam_max": float(eigs[-1]), "reach": reach,
              "c": c, "c_fit": c_fit, "fit_residual": resid, "lam_min": float(eigs[0]),
              "constant": spec.constant if flat else "fit", "richardson": spec.richardson}
    return DetResult(ld, len(eigs), report)


def torus_logdet_lattice(L, beta, m, terms=None):
    """Exact log det on the flat L x beta torus from the image sum of the heat kernel."""
    A = L * beta
    if terms is None:
        terms = int(math.ceil(45 / (m * min(L, beta)))) + 2
    p, q = np.meshgrid(np.arange(-terms, terms + 1), np.arange(-terms, terms + 1))
    r = np.sqrt((p * L) ** 2 + (q * beta) ** 2)
    r = r[r > 0]
    return float(A * m * m / (4 * math.pi) * (1 - math.log(m * m))
                 - A / (4 * math.pi) * np.sum(4 * m * k1(m * r) / r))


def torus_logdet_modes(L, beta, m, modes=4000, windings=400):
    """Independent oracle: sum over spatial modes of beta*omega_k + 2 log(1 - e^{-beta omega_k}).

    The divergent zero-point sum beta * sum omega_k is replaced by its
    zeta-regularized value, a Bessel series over spatial windings.
    """
    k = np.arange(-modes, modes + 1)
    w = np.sqrt((2 * math.pi * k / L) ** 2 + m * m)
    A = L * beta
    pp = np.arange(1, windings + 1)
    zero_point = (A * m * m / (4 * math.pi) * (1 - math.log(m * m))
                  - A / (4 * math.pi) * 2 * np.sum(4 * m * k1(m * pp * L) / (pp * L)))
    return float(zero_point + np.sum(2 * np.log1p(-np.exp(-beta * w))))


__all__ = ["DetResult", "DetSpec", "cone_constant", "heat_fit", "logdet_from_eigs",
           "logdet_regularized", "torus_logdet_lattice", "torus_logdet_modes"]
