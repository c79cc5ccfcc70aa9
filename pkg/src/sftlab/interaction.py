"""Cubic vertex, cut-off interaction and partition function.

The vertex pairs the split of the incoming string with the two outgoing
strings::

    J(P1, P2, P3) = int dt int dl1 dl2 dl  W(l1, l2, l)
                    < V(l1, l2, l) P1(l, t), P2(l1, t) (x) P3(l2, t) >

    V = (exp(-eps H_l1) (x) exp(-eps H_l2)) Gamma(pi_l^{l1,l2}) exp(-eps H_l)
    W = 2 delta_{1/v}(l1 + l2 - l) theta(l - l1 - l2)

with the Fock pairing conjugate-linear in its first slot.  Quadrature is the
midpoint rule on ell cells and the trapezoid rule on t nodes in [-T, T].  All
ell-triples with non-zero weight are enumerated once per geometry and their
operators ``V`` evaluated in one vectorized pass.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import integrate

from . import fock, measure, projection
from .errors import ConfigError, UsageError

_CHUNK = 256
_SQ_CACHE = {}


@dataclass(frozen=True)
class VertexParams:
    """Vertex cut-offs and quadrature strides.

    The quadrature steps are ``dt_q = t_stride * dt`` and
    ``dl_q = l_stride * dl`` in units of the field grid.
    """

    eps: float = 0.5
    T: float = 0.5
    v: float = 0.2
    l_stride: int = 1
    t_stride: int = 1

    def violations(self, field=None):
        out = []
        if not self.eps > 0:
            out.append("eps > 0 required")
        if not self.T > 0:
            out.append("T > 0 required")
        if not self.v > 0:
            out.append("v > 0 required")
        if self.l_stride < 1 or self.t_stride < 1:
            out.append("quadrature strides must be positive integers")
        if field is not None and not out:
            if not self.v < field.L0 / 4:
                out.append(f"v ∈ (0, L0/4) required (v={self.v}, L0/4={field.L0 / 4})")
            dl_q = self.l_stride * field.dl
            if not dl_q < self.v / 4:
                out.append(f"ell quadrature step {dl_q} must be < v/4 = {self.v / 4}")
            if (field.Linf - field.L0) / dl_q % 1 > 1e-9 and \
                    1 - (field.Linf - field.L0) / dl_q % 1 > 1e-9:
                out.append("ell quadrature step must divide Linf - L0")
            if self.T > field.Ts + 1e-12:
                out.append(f"T={self.T} exceeds the sampled window Ts={field.Ts}")
            n = self.T / (self.t_stride * field.dt)
            if abs(n - round(n)) > 1e-9:
                out.append("t quadrature step must divide T")
        return out

    def check(self, field=None):
        bad = self.violations(field)
        if bad:
            raise ConfigError(bad)


def split_weight(x, v):
    """W as a function of x = l - l1 - l2: 2 delta_{1/v}(-x) theta(x), theta(0) = 1."""
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 2.0 * measure.delta_kappa(-x, 1.0 / v), 0.0)


def _box_area(s, L0, Linf):
    """Area of {(l1, l2) in [L0, Linf]^2 : l1 + l2 <= s}."""
    a = np.clip(s - 2 * L0, 0.0, None)
    w = Linf - L0
    full = w * w
    lower = 0.5 * np.minimum(a, w) ** 2
    upper = np.where(a > w, full - 0.5 * np.clip(2 * w - a, 0.0, None) ** 2, lower)
    return np.where(a > w, upper, lower)


def smear_mass(L0, Linf, v):
    """int over [L0, Linf]^3 of W(l - l1 - l2), reduced to one dimension in x.

    For fixed x the admissible (l1, l2) satisfy l1 + l2 <= Linf - x (the lower
    bound l >= L0 is automatic), whose area is piecewise quadratic.
    """
    f = lambda x: float(split_weight(x, v)) * float(_box_area(Linf - x, L0, Linf))
    val, _ = integrate.quad(f, 0.0, v, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def smear_mass_oracle(L0, Linf, v):
    """Independent nested adaptive quadrature of the same smear integral."""
    c = 2.0 / (v * measure.BUMP_MASS)

    def W(x):
        y = x / v
        return c * math.exp(-1.0 / (1.0 - y * y)) if 0 <= y < 1 else 0.0

    def over_l2(l1, l):
        lo, hi = max(L0, l - l1 - v), min(Linf, l - l1)
        if hi <= lo:
            return 0.0
        return integrate.quad(lambda l2: W(l - l1 - l2), lo, hi, epsabs=1e-14, epsrel=1e-12)[0]

    def over_l1(l):
        hi = min(l - L0, Linf)
        if hi <= L0:
            return 0.0
        return integrate.quad(lambda l1: over_l2(l1, l), L0, hi, points=[hi - v],
                              epsabs=1e-13, epsrel=1e-11, limit=100)[0]

    return integrate.quad(over_l1, 2 * L0, Linf, points=[2 * L0 + v],
                          epsabs=1e-12, epsrel=1e-10, limit=100)[0]


def _quantizer(basis):
    key = (basis.key(), basis.states)
    if key not in _SQ_CACHE:
        _SQ_CACHE[key] = projection.SecondQuantizer(basis, (basis, basis))
    return _SQ_CACHE[key]


def _interpolation_matrix(field, stride):
    """Linear interpolation from field cell centres to quadrature cell centres."""
    n_q = field.n_l // stride
    centres = field.L0 + field.dl * stride * (np.arange(n_q) + 0.5)
    fine = field.ell_grid
    P = np.zeros((n_q, field.n_l))
    for i, x in enumerate(centres):
        pos = (x - fine[0]) / field.dl
        lo = int(math.floor(pos + 1e-12))
        frac = pos - lo
        if frac < 1e-9:
            P[i, lo] = 1.0
        else:
            P[i, lo] = 1 - frac
            P[i, lo + 1] = frac
    return centres, P


@dataclass
class VertexGeometry:
    """Everything J needs that does not depend on the field values."""

    field: measure.FieldParams
    params: VertexParams
    basis: fock.FockBasis
    ell: np.ndarray          # quadrature cell centres
    interp: np.ndarray       # (n_q, n_l) field cells -> quadrature cells
    t_idx: np.ndarray        # field t-node indices used
    t_w: np.ndarray          # trapezoid weights
    triples: np.ndarray      # (n_tri, 3) quadrature indices (j, j1, j2)
    weights: np.ndarray      # W * dl_q^3 per triple
    V: np.ndarray            # (n_tri, dim, dim, dim) indexed [tri, b, c, a]

    @property
    def n_triples(self):
        return len(self.weights)

    def smear_mass(self):
        """Discrete smear mass: the quadrature of W alone over the box."""
        return float(self.weights.sum())

    def with_operator(self, V):
        return replace(self, V=V)


def vertex_geometry(field, params, basis=None):
    """Triples, weights and vertex operators for a field grid."""
    params.check(field)
    basis = basis or field.basis
    ell, P = _interpolation_matrix(field, params.l_stride)
    dl_q = field.dl * params.l_stride
    n_q = len(ell)

    dt_q = field.dt * params.t_stride
    n_half = int(round(params.T / dt_q))
    t_vals = dt_q * np.arange(-n_half, n_half + 1)
    t_idx = np.array([field.t_index(t) for t in t_vals])
    t_w = np.full(len(t_vals), dt_q)
    t_w[[0, -1]] *= 0.5

    j, j1, j2 = np.meshgrid(np.arange(n_q), np.arange(n_q), np.arange(n_q), indexing="ij")
    x = ell[j] - ell[j1] - ell[j2]
    w = split_weight(x, params.v)
    keep = w > 0
    triples = np.stack([j[keep], j1[keep], j2[keep]], axis=1)
    weights = w[keep] * dl_q ** 3

    sq = _quantizer(basis)
    l, l1, l2 = ell[triples[:, 0]], ell[triples[:, 1]], ell[triples[:, 2]]
    gamma = sq.evaluate(sq.split_coefficients(l1, l2, l)) if len(weights) else \
        np.zeros((0, basis.dim ** 2, basis.dim), dtype=complex)
    E = np.stack([basis.energies(x) for x in ell]) if n_q else np.zeros((0, basis.dim))
    heat_in = np.exp(-params.eps * E[triples[:, 0]])                        # (n_tri, a)
    heat_out = np.exp(-params.eps * (E[triples[:, 1]][:, :, None]
                                     + E[triples[:, 2]][:, None, :]))        # (n_tri, b, c)
    V = gamma.reshape(-1, basis.dim, basis.dim, basis.dim) * heat_out[..., None] \
        * heat_in[:, None, None, :]
    return VertexGeometry(field, params, basis, ell, P, t_idx, t_w, triples, weights, V)


def _check_same_grid(fields):
    ref = fields[0]
    for f in fields[1:]:
        if f.params != ref.params or not f.basis.same_as(ref.basis):
            raise UsageError("vertex arguments must share field parameters and Fock basis")
        if f.mollified != ref.mollified or f.kappa != ref.kappa:
            raise UsageError("vertex arguments must be mollified identically")


def _j_values(a1, a2, a3, geo):
    """J for amplitude arrays of shape (..., n_t, n_l, dim)."""
    identity = geo.interp.shape[0] == geo.interp.shape[1]
    sel = lambda a: a[..., geo.t_idx, :, :] if identity else geo.interp @ a[..., geo.t_idx, :, :]
    x1 = sel(a1)
    x2 = x1 if a2 is a1 else sel(a2)
    x3 = x2 if a3 is a2 else sel(a3)
    lead = x1.shape[:-2]
    n_q, n_s = x1.shape[-2:]
    flat = lambda x: x.reshape((-1, n_q, n_s))
    x1, x2, x3 = flat(x1), flat(x2), flat(x3)
    j, j1, j2 = geo.triples.T
    # triple axis first so the contraction with V is one batched matmul
    outer = (x2[:, j1, :, None] * x3[:, j2, None, :]).reshape(-1, len(j), n_s * n_s)
    q = np.matmul(outer.transpose(1, 0, 2), np.conj(geo.V.reshape(-1, n_s * n_s, n_s)))
    per = np.einsum("rna,nra->rn", q, np.conj(x1[:, j, :]))
    return (geo.weights @ per).reshape(lead) @ geo.t_w


def vertex_J(psi1, psi2, psi3, params=None, geometry=None):
    """Cut-off cubic vertex on mollified fields; vectorized over sample axes."""
    _check_same_grid([psi1, psi2, psi3])
    if not psi1.mollified:
        raise UsageError("vertex_J expects mollified fields")
    geo = geometry or vertex_geometry(psi1.params, params, psi1.basis)
    if not geo.basis.same_as(psi1.basis) or geo.field != psi1.params:
        raise UsageError("geometry was built for a different grid or basis")
    a1, a2, a3 = psi1.amplitudes, psi2.amplitudes, psi3.amplitudes
    if a1.ndim == 3:
        return complex(_j_values(a1, a2, a3, geo))
    lead = a1.shape[:-3]
    flat = [a.reshape((-1,) + a.shape[-3:]) for a in (a1, a2, a3)]
    out = []
    for i in range(0, flat[0].shape[0], _CHUNK):
        c1 = flat[0][i:i + _CHUNK]
        c2 = c1 if a2 is a1 else flat[1][i:i + _CHUNK]
        c3 = c2 if a3 is a2 else flat[2][i:i + _CHUNK]
        out.append(_j_values(c1, c2, c3, geo))
    out = np.concatenate(out)
    return out.reshape(lead)


@dataclass
class VertexValue:
    """Value of the interaction; for a batch, the mean with batch-means error."""

    value: complex
    stderr: float
    params: dict
    values: np.ndarray | None = None

    def to_json(self):
        return {"value": [self.value.real, self.value.imag], "stderr": self.stderr,
                "params": self.params,
                "n": None if self.values is None else int(self.values.size)}


def cut_off_field(sample, M=None, kappa=None):
    """p_M followed by mollification at kappa (defaults: the sample's own cut-offs)."""
    p = sample.params
    if sample.mollified:
        raise UsageError("expected a raw sample")
    if M is not None and M < sample.basis.M:
        sample = sample.restricted(fock.enumerate_basis(p.d, p.m, p.L0, M))
    elif M is not None and M > sample.basis.M:
        raise UsageError(f"cannot raise the Fock cut-off from {sample.basis.M} to {M}")
    return measure.mollify(sample, measure.MollifierSpec(kappa or p.kappa))


def _geometry_for(field_sample, params, geometry):
    if geometry is not None:
        return geometry
    return vertex_geometry(field_sample.params, params, field_sample.basis)


def _value(vals, params, field, extra=None):
    echo = {"vertex": asdict(params), "field": field.to_json()}
    echo.update(extra or {})
    if np.ndim(vals) == 0:
        return VertexValue(complex(vals), 0.0, echo)
    est = measure.batch_means(np.ravel(vals))
    return VertexValue(est.value, est.stderr, echo, np.asarray(vals))


def interaction_values(sample, params, M=None, kappa=None, geometry=None, transform=None):
    """Per-sample I = J(Psi_{M,kappa}, Psi_{M,kappa}, Psi_{M,kappa})."""
    psi = cut_off_field(sample, M, kappa)
    if transform is not None:
        psi = transform(psi)
    geo = _geometry_for(psi, params, geometry)
    return vertex_J(psi, psi, psi, geometry=geo)


def interaction_I(sample, params, M=None, kappa=None, geometry=None):
    """Cut-off interaction of a raw sample (or batch, with MC error)."""
    vals = interaction_values(sample, params, M, kappa, geometry)
    return _value(vals, params, sample.params, {"M": M, "kappa": kappa})


def _vacuum_only(psi):
    amp = np.zeros_like(psi.amplitudes)
    amp[..., 0] = psi.amplitudes[..., 0]
    return replace(psi, amplitudes=amp)


def projected_interaction(sample, params, M=None, kappa=None, geometry=None):
    """I evaluated on the vacuum component pi_Omega Psi of the cut-off field."""
    vals = interaction_values(sample, params, M, kappa, geometry, transform=_vacuum_only)
    return _value(vals, params, sample.params, {"M": M, "kappa": kappa, "projected": True})


def twist_operator(geometry, thetas):
    """Vertex operator integrated over a uniform product grid of twists.

    ``J(R(t1) P1, R(t2) P2, R(t3) P3) = <(R(t2) (x) R(t3))^* V R(t1) P1, P2 (x) P3>``
    and R is diagonal, so the triple theta integral factorizes into a phase
    sum per leg.
    """
    thetas = np.asarray(thetas, dtype=float)
    w = 2 * np.pi / len(thetas)
    P = geometry.basis.momenta()
    S = lambda sign: w * np.exp(-1j * sign * np.outer(P, thetas)).sum(axis=1)
    S_in, S_out = S(1.0), S(-1.0)
    return geometry.V * S_out[None, :, None, None] * S_out[None, None, :, None] \
        * S_in[None, None, None, :]


def twisted_interaction(sample, params, thetas, M=None, kappa=None, geometry=None):
    """Bare integral over twists (no 1/(2 pi)^3) on a uniform grid per angle."""
    psi = cut_off_field(sample, M, kappa)
    geo = _geometry_for(psi, params, geometry)
    geo = geo.with_operator(twist_operator(geo, thetas))
    vals = vertex_J(psi, psi, psi, geometry=geo)
    return _value(vals, params, sample.params, {"M": M, "kappa": kappa,
                                                "n_theta": len(thetas)})


@dataclass(frozen=True)
class PartitionPoint:
    lam: float
    Z: complex
    stderr: float


def partition_from_values(lams, I_values, n_batches=30):
    """Z(lambda) = E exp(i lambda Re I) from one set of I values (common random numbers)."""
    re = np.real(np.ravel(I_values))
    out = []
    for lam in lams:
        if lam == 0:
            out.append(PartitionPoint(float(lam), 1 + 0j, 0.0))
            continue
        est = measure.batch_means(np.exp(1j * lam * re), n_batches)
        out.append(PartitionPoint(float(lam), est.value, est.stderr))
    return out


def partition_Z(lams, n_samples, field, params, start=0, workers=1, geometry=None):
    """Monte-Carlo Z(lambda) on ``n_samples`` fresh samples of ``field``."""
    if n_samples < 1:
        raise UsageError("n_samples >= 1 required")
    vals = []
    for lo in range(start, start + n_samples, 1000):
        batch = measure.sample_batch(field, min(1000, start + n_samples - lo), lo, workers)
        vals.append(np.atleast_1d(interaction_values(batch, params, geometry=geometry)))
    return partition_from_values(lams, np.concatenate(vals))


def cauchy_l2_check(cut_a, cut_b, n_samples, field, params, start=0, workers=1,
                    n_batches=30):
    """Coupled estimate of E|I_{M,kappa} - I_{M',kappa'}|^2 on common samples.

    ``field.M`` must be at least ``M'``; both interactions are computed from
    the same raw draws, restricted and mollified per cut-off.
    """
    (M, kappa), (M2, kappa2) = cut_a, cut_b
    if M2 < M or kappa2 < kappa:
        raise UsageError("second cut-off pair must dominate the first")
    if M2 > field.M:
        raise UsageError("sampled Fock cut-off below the requested M'")
    geos = {}
    diffs = []
    for lo in range(start, start + n_samples, 1000):
        batch = measure.sample_batch(field, min(1000, start + n_samples - lo), lo, workers)
        vals = []
        for Mi, ki in ((M, kappa), (M2, kappa2)):
            psi = cut_off_field(batch, Mi, ki)
            if Mi not in geos:
                geos[Mi] = vertex_geometry(field, params, psi.basis)
            geo = geos[Mi]
            vals.append(vertex_J(psi, psi, psi, geometry=geo))
        diffs.append(np.abs(vals[0] - vals[1]) ** 2)
    return measure.batch_means(np.concatenate(diffs), n_batches)


@dataclass(frozen=True)
class CauchyStep:
    cut_a: tuple
    cut_b: tuple
    estimate: measure.Estimate          # E|I_a - I_b|^2
    drop: measure.Estimate = None       # paired decrease relative to the previous step


def cauchy_schedule(schedule, n_samples, field, params, start=0, workers=1, n_batches=30):
    """Coupled E|I_j - I_{j+1}|^2 along an escalating list of (M, kappa) pairs.

    Every cut-off is evaluated on the same raw draws (sampled at ``field.M``),
    so consecutive estimates can be compared through their paired per-sample
    differences, whose batch-means error is much smaller than either one.
    """
    schedule = [tuple(map(float, c)) for c in schedule]
    if len(schedule) < 2:
        raise UsageError("need at least two cut-off pairs")
    for (M, k), (M2, k2) in zip(schedule, schedule[1:]):
        if M2 < M or k2 < k:
            raise UsageError("cut-off pairs must escalate")
    if schedule[-1][0] > field.M:
        raise UsageError("sampled Fock cut-off below the largest requested M")
    geos = {}
    diffs = [[] for _ in schedule[1:]]
    for lo in range(start, start + n_samples, 1000):
        batch = measure.sample_batch(field, min(1000, start + n_samples - lo), lo, workers)
        vals = []
        for M, kappa in schedule:
            psi = cut_off_field(batch, M, kappa)
            if M not in geos:
                geos[M] = vertex_geometry(field, params, psi.basis)
            geo = geos[M]
            vals.append(vertex_J(psi, psi, psi, geometry=geo))
        for j in range(len(schedule) - 1):
            diffs[j].append(np.abs(vals[j] - vals[j + 1]) ** 2)
    diffs = [np.concatenate(d) for d in diffs]
    steps = []
    for j, d in enumerate(diffs):
        drop = measure.batch_means(diffs[j - 1] - d, n_batches) if j else None
        steps.append(CauchyStep(schedule[j], schedule[j + 1],
                                measure.batch_means(d, n_batches), drop))
    return steps


def cauchy_trend(steps, nsigma=3.0):
    """True when every step decreases by more than ``nsigma`` paired standard errors."""
    return all(s.drop.value.real > nsigma * s.drop.stderr for s in steps[1:])


def refinement_study(sample, params, strides=(4, 2, 1), axis="ell", M=None, kappa=None):
    """I on one fixed sample for successively halved quadrature steps.

    A mollified (or otherwise smooth) field is used as is; a raw sample is
    cut off first.
    Returns rows (step, value) and the observed order
    log2(|I_h - I_{h/2}| / |I_{h/2} - I_{h/4}|) from the last three levels.
    """
    psi = sample if sample.mollified else cut_off_field(sample, M, kappa)
    rows = []
    for s in strides:
        p = replace(params, l_stride=s) if axis == "ell" else replace(params, t_stride=s)
        geo = vertex_geometry(psi.params, p, psi.basis)
        step = s * (psi.params.dl if axis == "ell" else psi.params.dt)
        rows.append((step, complex(vertex_J(psi, psi, psi, geometry=geo))))
    order = None
    if len(rows) >= 3:
        d1 = abs(rows[-3][1] - rows[-2][1])
        d2 = abs(rows[-2][1] - rows[-1][1])
        order = math.log2(d1 / d2) if d2 > 0 else math.inf
    return rows, order


def write_partition_csv(path, points):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "re_Z", "im_Z", "stderr"])
        for p in points:
            w.writerow([repr(p.lam), repr(p.Z.real), repr(p.Z.imag), repr(p.stderr)])


def write_vertex_json(path, value, refinement=None):
    data = value.to_json()
    if refinement is not None:
        rows, order = refinement
        data["refinement"] = {"rows": [[h, v.real, v.imag] for h, v in rows], "order": order}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1)
