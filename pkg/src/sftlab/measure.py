"""Cut-off free string field: sampling, mollification and two-point checks.

The free measure is discretized as a cylinder measure.  For every Fock
eigenvector ``v`` (energy ``E_v(ell)``) and every cell of a uniform grid in
``ell`` the amplitude is an independent complex stationary Ornstein-Uhlenbeck
path in ``t``::

    E[conj(Psi(t)) Psi(t')] = exp(-E_v(ell) |t - t'|) / dl,   E[Psi Psi'] = 0

so that smearing against grid functions ``g`` reproduces
``int conj(g) g' <v, exp(-|t-t'| H) v'> dell``.  The ``1/dl`` variance is the
white-noise scaling in ``ell``; mollification with ``delta_kappa`` turns it
into a continuous field.  The vacuum has energy zero and is constant in ``t``.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import integrate

from . import fock
from .errors import ConfigError, NumericError, UsageError

_GRID_TOL = 1e-9


def _bump_raw(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


BUMP_MASS = integrate.quad(lambda x: math.exp(-1.0 / (1.0 - x * x)), -1, 1,
                           epsabs=1e-14, epsrel=1e-12)[0]


def bump(x):
    """Normalized smooth bump chi(x) = exp(-1/(1-x^2)) / c on (-1, 1)."""
    return _bump_raw(x) / BUMP_MASS


def delta_kappa(x, kappa):
    """Mollifier delta_kappa(x) = kappa chi(kappa x)."""
    return kappa * bump(kappa * np.asarray(x, dtype=float))


def _grid_count(span, step, what):
    n = span / step
    if abs(n - round(n)) > _GRID_TOL * max(1.0, n):
        raise ConfigError(f"{what}: step {step} does not divide the interval length {span}")
    return int(round(n))


@dataclass(frozen=True)
class FieldParams:
    """Cut-offs and grids of one sampled field.

    The t-grid consists of nodes ``-Ts, -Ts + dt, ..., Ts``; the ell-grid of
    cell centres ``L0 + (j + 1/2) dl`` covering ``[L0, Linf]``.
    """

    d: int = 1
    m: float = 1.0
    L0: float = 1.0
    Linf: float = 2.5
    M: float = 2.5
    kappa: float = 5.0
    Ts: float = 0.5
    dt: float = 0.25
    dl: float = 0.0375
    seed: int = 0

    def violations(self):
        out = []
        if self.d < 1:
            out.append("d >= 1 required")
        if not self.m > 0:
            out.append("m > 0 required")
        if not 0 < self.L0 < self.Linf:
            out.append("0 < L0 < Linf required")
        if self.M < 0:
            out.append("M >= 0 required")
        if not self.kappa > 0:
            out.append("kappa > 0 required")
        if not (self.dt > 0 and self.Ts > 0):
            out.append("t-grid needs dt > 0 and Ts > 0")
        if not self.dl > 0:
            out.append("ell-grid needs dl > 0")
        elif self.kappa > 0 and not self.dl < 1 / (4 * self.kappa):
            out.append(f"dl < 1/(4 kappa) required to resolve the mollifier "
                       f"(dl={self.dl}, 1/(4 kappa)={1 / (4 * self.kappa):.6g})")
        if not 0 <= self.seed < 2 ** 64:
            out.append("seed must be a 64-bit unsigned integer")
        if not out:
            for span, step, what in ((2 * self.Ts, self.dt, "t-grid"),
                                     (self.Linf - self.L0, self.dl, "ell-grid")):
                try:
                    _grid_count(span, step, what)
                except ConfigError as exc:
                    out.extend(exc.violations)
        return out

    def __post_init__(self):
        bad = self.violations()
        if bad:
            raise ConfigError(bad)

    @property
    def n_t(self):
        return _grid_count(2 * self.Ts, self.dt, "t-grid") + 1

    @property
    def n_l(self):
        return _grid_count(self.Linf - self.L0, self.dl, "ell-grid")

    @property
    def t_grid(self):
        return -self.Ts + self.dt * np.arange(self.n_t)

    @property
    def ell_grid(self):
        return self.L0 + self.dl * (np.arange(self.n_l) + 0.5)

    def t_index(self, t):
        i = (t + self.Ts) / self.dt
        if abs(i - round(i)) > 1e-7 or not 0 <= round(i) < self.n_t:
            raise UsageError(f"t={t} is not a node of the t-grid")
        return int(round(i))

    @cached_property
    def basis(self):
        return fock.enumerate_basis(self.d, self.m, self.L0, self.M)

    @cached_property
    def energies(self):
        """State energies on the ell cells, shape (n_l, dim)."""
        return np.stack([self.basis.energies(ell) for ell in self.ell_grid])

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class MollifierSpec:
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ConfigError("kappa > 0 required")

    def weights(self, dl):
        """Grid-sampled delta_kappa renormalized to unit discrete mass.

        Returns the offsets (in cells) and weights ``w`` with
        ``sum(w) * dl == 1``.
        """
        half = int(math.ceil(1.0 / (self.kappa * dl)))
        offsets = np.arange(-half, half + 1)
        w = delta_kappa(offsets * dl, self.kappa)
        w /= w.sum() * dl
        return offsets, w

    def matrix(self, n_l, dl):
        """Convolution matrix on n_l cells with zero extension."""
        offsets, w = self.weights(dl)
        out = np.zeros((n_l, n_l))
        for off, wk in zip(offsets, w):
            out += np.eye(n_l, k=int(off)) * (wk * dl)
        return out


@dataclass
class StringFieldSample:
    """Field amplitudes of shape (..., n_t, n_l, dim); leading axes index samples."""

    amplitudes: np.ndarray
    params: FieldParams
    mollified: bool = False
    kappa: float | None = None
    basis: fock.FockBasis | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.basis is None:
            self.basis = self.params.basis
        shape = (self.params.n_t, self.params.n_l, self.basis.dim)
        if self.amplitudes.shape[-3:] != shape:
            raise UsageError(f"amplitude shape {self.amplitudes.shape} does not end in {shape}")
        if not np.all(np.isfinite(self.amplitudes)):
            raise NumericError("non-finite field amplitudes")

    @property
    def n_samples(self):
        return int(np.prod(self.amplitudes.shape[:-3], dtype=int))

    def __getitem__(self, i):
        if self.amplitudes.ndim == 3:
            raise UsageError("single sample is not indexable")
        return replace(self, amplitudes=self.amplitudes[i])

    def scaled(self, c):
        return replace(self, amplitudes=c * self.amplitudes)

    def restricted(self, basis):
        """Apply p_M: keep the components of a smaller basis."""
        idx = fock.restriction_indices(basis, self.basis)
        return replace(self, amplitudes=self.amplitudes[..., idx], basis=basis)


def sample_seed(master, index):
    """Independent, splittable seed for sample ``index``."""
    return np.random.SeedSequence(entropy=master, spawn_key=(int(index),))


def _ou_paths(rng, rho, sigma, n_t):
    """Stationary complex OU paths; rho, sigma of shape S, output (n_t,) + S."""
    shape = rho.shape
    out = np.empty((n_t,) + shape, dtype=complex)
    noise = (rng.standard_normal((n_t,) + shape) + 1j * rng.standard_normal((n_t,) + shape))
    noise *= math.sqrt(0.5)
    out[0] = sigma * noise[0]
    innov = sigma * np.sqrt(np.maximum(1.0 - rho ** 2, 0.0))
    for i in range(1, n_t):
        out[i] = rho * out[i - 1] + innov * noise[i]
    return out


def sample_field(params, index=0):
    """One raw sample of the cut-off field (exact OU recursion on the t-grid)."""
    rng = np.random.default_rng(sample_seed(params.seed, index))
    rho = np.exp(-params.energies * params.dt)
    sigma = np.full_like(rho, 1.0 / math.sqrt(params.dl))
    return StringFieldSample(_ou_paths(rng, rho, sigma, params.n_t), params)


def sample_batch(params, n, start=0, workers=1):
    """Samples ``start, ..., start+n-1`` stacked along a leading axis.

    The result does not depend on ``workers``: every sample draws from its
    own seed.
    """
    if n < 1:
        raise UsageError("need at least one sample")
    idx = range(start, start + n)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda i: sample_field(params, i).amplitudes, idx))
    else:
        parts = [sample_field(params, i).amplitudes for i in idx]
    return StringFieldSample(np.stack(parts), params)


def mollify(sample, spec):
    """Convolve in ell with delta_kappa (zero extension outside [L0, Linf])."""
    if sample.mollified:
        raise UsageError("sample is already mollified")
    p = sample.params
    if not p.dl < 1 / (4 * spec.kappa):
        raise ConfigError(f"dl={p.dl} does not resolve kappa={spec.kappa}")
    K = spec.matrix(p.n_l, p.dl)
    amp = K @ sample.amplitudes
    return replace(sample, amplitudes=amp, mollified=True, kappa=spec.kappa)


def mollified_covariance(params, spec, state, i, j, lag):
    """E[conj(Psi_k(ell_i, t)) Psi_k(ell_j, t + lag)] for a mollified field."""
    K = spec.matrix(params.n_l, params.dl)
    s = params.basis.index(state) if not isinstance(state, (int, np.integer)) else state
    heat = np.exp(-params.energies[:, s] * abs(lag))
    return float(np.sum(K[i] * K[j] * heat) / params.dl)


@dataclass(frozen=True)
class Estimate:
    """Monte-Carlo mean with batch-means standard error.

    ``stderr`` is the standard error of the complex mean, i.e.
    ``sqrt(stderr_re**2 + stderr_im**2)``.
    """

    value: complex
    stderr: float
    n: int
    stderr_re: float = 0.0
    stderr_im: float = 0.0

    def within(self, target, nsigma=3.0, extra=0.0):
        return abs(self.value - target) <= nsigma * self.stderr + extra

    def row(self):
        return {"estimate_re": self.value.real, "estimate_im": self.value.imag,
                "stderr": self.stderr, "n": self.n}


def batch_means(values, n_batches=30):
    """Mean and batch-means standard error of a 1D sample of (complex) values."""
    values = np.asarray(values)
    n = values.shape[0]
    if n == 0:
        raise UsageError("empty sample set")
    b = min(n_batches, n)
    means = np.array([chunk.mean() for chunk in np.array_split(values, b)])
    mean = complex(values.mean())
    if b < 2:
        return Estimate(mean, math.inf, n, math.inf, math.inf)
    sizes = np.array([len(c) for c in np.array_split(values, b)])
    # weighted batch-means variance of the overall mean
    w = sizes / n
    var_re = np.sum(w ** 2 * (means.real - mean.real) ** 2) * b / (b - 1)
    var_im = np.sum(w ** 2 * (means.imag - mean.imag) ** 2) * b / (b - 1)
    return Estimate(mean, float(math.sqrt(var_re + var_im)), n,
                    float(math.sqrt(var_re)), float(math.sqrt(var_im)))


def smeared(samples, state, g, t):
    """Phi_{v,g,t} = sum_j dl g(ell_j) Psi_v(ell_j, t) for every sample."""
    p = samples.params
    s = samples.basis.index(state) if not isinstance(state, (int, np.integer)) else state
    gv = np.asarray(g(p.ell_grid) if callable(g) else g, dtype=complex)
    if gv.shape == ():
        gv = np.full(p.n_l, gv)
    amp = samples.amplitudes[..., p.t_index(t), :, s]
    return p.dl * amp @ gv


def two_point_estimate(samples, v, g, t, v2, g2, t2, n_batches=30):
    """Monte-Carlo estimate of E[conj(Phi_{v,g,t}) Phi_{v2,g2,t2}]."""
    if samples.n_samples == 0 or samples.amplitudes.ndim < 4:
        raise UsageError("two-point estimation needs a non-empty batch of samples")
    vals = np.conj(smeared(samples, v, g, t)) * smeared(samples, v2, g2, t2)
    return batch_means(vals.reshape(-1), n_batches)


def two_point_exact(params, v, g, t, v2, g2, t2):
    """Discrete analytic value of the two-point function on the ell-grid."""
    if v != v2:
        return 0.0
    s = params.basis.index(v) if not isinstance(v, (int, np.integer)) else v
    ell = params.ell_grid
    gv = g(ell) if callable(g) else np.broadcast_to(g, ell.shape)
    gv2 = g2(ell) if callable(g2) else np.broadcast_to(g2, ell.shape)
    heat = np.exp(-params.energies[:, s] * abs(t - t2))
    return complex(params.dl * np.sum(np.conj(gv) * gv2 * heat))


def covariance_kernel_check(omega, tau, tol=1e-10):
    """(1/2pi) int 2 omega exp(i p tau) / (p^2 + omega^2) dp against exp(-omega |tau|).

    Returns ``(numeric, analytic)``.
    """
    if not omega > 0:
        raise UsageError("omega > 0 required")
    tau = abs(float(tau))
    s = omega * tau
    # in u = p / omega the integral is (1/pi) int_0^inf 2 cos(s u) / (1 + u^2) du
    f = lambda u: 2.0 / (1.0 + u * u)
    if s >= 1:
        # Fourier-weighted rule on the half line (QAWF)
        val, err = integrate.quad(f, 0, np.inf, weight="cos", wvar=s, epsabs=1e-12, limlst=100)
    else:
        # below one period substitute u = tan(theta) up to u = 1/s ...
        top = math.atan(1 / s) if s > 0 else math.pi / 2
        val, err = integrate.quad(lambda th: 2.0 * math.cos(s * math.tan(th)), 0, top,
                                  epsabs=1e-13, epsrel=1e-13)
        if 0 < s and 1 / s < 1e150:
            # ... and finish with QAWF on u = 1/s + x: cos(s x + 1) = cos(s x) cos 1 - sin(s x) sin 1
            g = lambda x: f(x + 1 / s)
            c, ec = integrate.quad(g, 0, np.inf, weight="cos", wvar=s, epsabs=1e-13, limlst=100)
            sn, es = integrate.quad(g, 0, np.inf, weight="sin", wvar=s, epsabs=1e-13, limlst=100)
            val += c * math.cos(1.0) - sn * math.sin(1.0)
            err += ec + es
    numeric = val / math.pi
    if not np.isfinite(numeric) or err / math.pi > tol:
        raise NumericError("Fourier quadrature did not converge",
                           {"omega": omega, "tau": tau, "abserr": err / math.pi})
    return numeric, math.exp(-omega * tau)


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic 2D lattice: n_x sites on the circle of length ell, n_t time sites of spacing b."""

    n_x: int = 16
    n_t: int = 512
    b: float = 0.05

    @property
    def extent(self):
        return self.n_t * self.b


@dataclass(frozen=True)
class FeynmanKacResult:
    estimate: Estimate
    lattice_value: complex
    continuum_value: complex

    @property
    def lattice_bias(self):
        return self.lattice_value - self.continuum_value

    def passes(self, nsigma=3.0):
        return self.estimate.within(self.continuum_value, nsigma, abs(self.lattice_bias))


def _mode_data(f, n_x):
    """Fourier data {k: coefficient} of a finite Fourier sum on the unit circle."""
    if isinstance(f, dict):
        return {int(k): complex(c) for k, c in f.items()}
    return {int(f): 1.0}


def feynman_kac_2d(ell, m, f, f2, t, t2, lattice=LatticeSpec(), n_samples=4000, seed=0,
                   chunk=256, n_batches=30):
    """Two-point pairing of the 2D massive free field on a periodic lattice.

    ``f`` and ``f2`` are Fourier data on the unit circle: an integer ``k``
    (the mode exp(2 pi i k x)) or a dict ``{k: coefficient}``.  The pairing is
    ``Phi_f(t) = int_0^ell phi(s, t) f(s/ell) ds / sqrt(ell)``.  The estimate
    is compared with ``(1/2) <f, exp(-|t-t'| A) A^{-1} f'>``; the exact lattice
    expectation is returned too so the discretization bias can be separated
    from statistical error.
    """
    fa, fb = _mode_data(f, lattice.n_x), _mode_data(f2, lattice.n_x)
    bad = []
    for k in list(fa) + list(fb):
        if 2 * abs(k) >= lattice.n_x:
            bad.append(f"mode {k} is not resolved by n_x={lattice.n_x} lattice sites")
    lag = abs(t - t2) / lattice.b
    if abs(lag - round(lag)) > 1e-7:
        bad.append(f"|t - t'| = {abs(t - t2)} is not a multiple of the time spacing {lattice.b}")
    if abs(t - t2) > lattice.extent / 4:
        bad.append("time window too small for the requested separation")
    if bad:
        raise ConfigError(bad)
    lag = int(round(lag))
    a = ell / lattice.n_x
    b = lattice.b
    px = np.arange(lattice.n_x)
    pt = np.arange(lattice.n_t)
    lam = (4 / a ** 2) * np.sin(np.pi * px / lattice.n_x) ** 2
    lam_t = (4 / b ** 2) * np.sin(np.pi * pt / lattice.n_t) ** 2
    eig = lam_t[:, None] + lam[None, :] + m * m
    amp = 1.0 / np.sqrt(eig * lattice.n_x * lattice.n_t * a * b)

    s = np.arange(lattice.n_x) / lattice.n_x
    weights = lambda fd: sum(c * np.exp(2j * np.pi * k * s) for k, c in fd.items())
    wa = a / math.sqrt(ell) * weights(fa)
    wb = a / math.sqrt(ell) * weights(fb)

    rng = np.random.default_rng(seed)
    vals = []
    done = 0
    while done < n_samples:
        c = min(chunk, n_samples - done)
        xi = (rng.standard_normal((c, lattice.n_t, lattice.n_x))
              + 1j * rng.standard_normal((c, lattice.n_t, lattice.n_x))) * math.sqrt(0.5)
        phi = np.fft.fft2(xi * amp) * math.sqrt(2)
        # real and imaginary parts are independent real free fields
        for part in (phi.real, phi.imag):
            rows_a = part[:, 0, :]
            rows_b = part[:, lag, :]
            vals.append(np.conj(rows_a @ wa) * (rows_b @ wb))
        done += c
    est = batch_means(np.concatenate(vals), n_batches)

    # exact lattice value: only matching spatial modes pair up
    lattice_value = 0j
    continuum = 0j
    phase = np.exp(2j * np.pi * pt * lag / lattice.n_t)
    for k, ca in fa.items():
        for k2, cb in fb.items():
            if (k - k2) % lattice.n_x:
                continue
            p = k % lattice.n_x
            lattice_value += np.conj(ca) * cb * np.sum(phase / eig[:, p]) / (b * lattice.n_t)
            if k == k2:
                w = fock.omega(k, ell, m)
                continuum += np.conj(ca) * cb * 0.5 * math.exp(-w * abs(t - t2)) / w
    return FeynmanKacResult(est, complex(lattice_value), complex(continuum))


def write_samples(directory, params, n_samples, chunk=1000, start=0, workers=1):
    """Stream samples to ``directory`` as chunked ``.npy`` files plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, lo in enumerate(range(start, start + n_samples, chunk)):
        n = min(chunk, start + n_samples - lo)
        batch = sample_batch(params, n, start=lo, workers=workers)
        name = f"chunk_{k:05d}.npy"
        np.save(directory / name, batch.amplitudes)
        files.append({"file": name, "first": lo, "count": n})
    manifest = {"params": params.to_json(), "seed": params.seed, "start": start,
                "n_samples": n_samples, "shape": [params.n_t, params.n_l, params.basis.dim],
                "basis": params.basis.to_json(), "chunks": files, "dtype": "complex128"}
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def read_samples(directory):
    """Iterate over the chunks written by :func:`write_samples`."""
    directory = Path(directory)
    with open(directory / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    params = FieldParams.from_json(manifest["params"])
    for entry in manifest["chunks"]:
        yield StringFieldSample(np.load(directory / entry["file"]), params)


def write_estimates_csv(path, rows):
    """CSV with columns label, estimate_re, estimate_im, stderr, n."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "estimate_re", "estimate_im", "stderr", "n"])
        for label, est in rows:
            w.writerow([label, repr(est.value.real), repr(est.value.imag),
                        repr(est.stderr), est.n])
