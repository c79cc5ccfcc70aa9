"""Piecewise-linear finite elements for -Laplace + m^2 on flat triangulated surfaces."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from ..errors import NumericError, UsageError
from .mesh import SurfaceMesh, rebuild

DENSE_LIMIT = 1200


def assemble(mesh: SurfaceMesh):
    """Stiffness and consistent mass matrices (CSR) from the chart coordinates."""
    p = mesh.local
    area = mesh.triangle_areas()
    if np.any(area <= 0):
        raise NumericError("degenerate or inverted triangle", {"min_area": float(area.min())})
    grad = np.empty((mesh.n_triangles, 3, 2))
    for k in range(3):
        d = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        grad[:, k, 0] = -d[:, 1]
        grad[:, k, 1] = d[:, 0]
    grad /= (2 * area)[:, None, None]
    ke = np.einsum("tkd,tld->tkl", grad, grad) * area[:, None, None]
    me = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12)[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, 3).ravel()
    n = mesh.n_vertices
    K = sp.csr_matrix((ke.ravel(), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((me.ravel(), (rows, cols)), shape=(n, n))
    return K, M


def fem_spectrum(mesh, m, k):
    """Lowest ``k`` generalized eigenvalues of (K + m^2 M) u = lam M u, ascending."""
    if k < 1:
        raise UsageError("need at least one eigenvalue")
    K, M = assemble(mesh)
    A = K + m * m * M
    n = mesh.n_vertices
    if k >= n - 1 or n <= DENSE_LIMIT:
        if k > n:
            raise UsageError(f"mesh has only {n} degrees of freedom, {k} eigenvalues requested")
        lam = la.eigh(A.toarray(), M.toarray(), eigvals_only=True, subset_by_index=(0, k - 1))
    else:
        try:
            lam = sla.eigsh(A, k=k, M=M, sigma=-1.0, which="LM", return_eigenvectors=False)
        except (sla.ArpackNoConvergence, RuntimeError) as exc:
            raise NumericError("eigensolver did not converge", {"k": k, "n": n, "error": str(exc)})
    return np.sort(np.asarray(lam, dtype=float))


def richardson_spectrum(mesh, m, k, h=None):
    """Eigenvalues extrapolated from spacings h and h/2: (4 lam(h/2) - lam(h)) / 3."""
    h = mesh.metadata.get("h") if h is None else h
    if h is None:
        raise UsageError("mesh carries no spacing; pass h")
    coarse = fem_spectrum(rebuild(mesh, h), m, k)
    fine = fem_spectrum(rebuild(mesh, h / 2), m, k)
    return (4 * fine - coarse) / 3, coarse, fine


@dataclass(frozen=True)
class OrderResult:
    spacings: tuple
    eigenvalues: np.ndarray    # (levels, k)
    order: float               # log2 of successive difference ratio, median over modes


def convergence_order(mesh, m, k=10, levels=3, h=None):
    """Observed FEM order from successive halvings of the mesh spacing."""
    h = mesh.metadata.get("h") if h is None else h
    hs = tuple(h / 2 ** i for i in range(levels))
    lam = np.array([fem_spectrum(rebuild(mesh, s), m, k) for s in hs])
    d = np.abs(np.diff(lam, axis=0))
    ratios = d[:-1] / np.maximum(d[1:], 1e-300)
    return OrderResult(hs, lam, float(np.median(np.log2(ratios[-1]))))


def torus_eigenvalues(L, beta, m, k):
    """Exact lowest ``k`` eigenvalues (with multiplicity) of -Laplace + m^2 on the flat torus."""
    r = int(math.ceil(math.sqrt(k))) + 3
    a = np.arange(-r * int(math.ceil(L / beta + 1)), r * int(math.ceil(L / beta + 1)) + 1)
    b = np.arange(-r * int(math.ceil(beta / L + 1)), r * int(math.ceil(beta / L + 1)) + 1)
    ev = ((2 * math.pi * a[:, None] / L) ** 2 + (2 * math.pi * b[None, :] / beta) ** 2).ravel()
    return np.sort(ev)[:k] + m * m


def weyl_ratio(eigs, area, m=0.0):
    """N(lam) / (area (lam - m^2) / 4 pi) at every computed eigenvalue (1 for Weyl's law)."""
    lam = np.sort(np.asarray(eigs)) - m * m
    count = np.arange(1, len(lam) + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return count / (area * lam / (4 * math.pi))


__all__ = ["OrderResult", "assemble", "convergence_order", "fem_spectrum", "richardson_spectrum",
           "torus_eigenvalues", "weyl_ratio"]
