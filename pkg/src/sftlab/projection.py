"""String-splitting projection and its second quantization F -> F (x) F.

A loop of length ``ell`` parametrized by [0, 1] is restricted to [0, l1] and
[ell - l2, ell]; each piece is rescaled back to [0, 1]:

    (pi f)_1(x) = sqrt(r1) f(r1 x),          r1 = l1 / ell
    (pi f)_2(x) = sqrt(r2) f(1 - r2 + r2 x), r2 = l2 / ell

In the Fourier basis e_p(x) = exp(2 pi i p x) its matrix elements are closed
form (see :func:`l2_split_matrix`).  Second quantization Gamma(A) is built by
pushing creation operators through A; the expansion is done once,
symbolically in the single-particle coefficients, and then evaluated for any
number of split geometries at numpy speed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import fock
from .errors import DomainError, UsageError

NORM_TOL = 1e-9


@dataclass(frozen=True)
class SplitSpec:
    l1: float
    l2: float
    ell: float

    def __post_init__(self):
        if min(self.l1, self.l2, self.ell) <= 0:
            raise DomainError("split lengths must be positive")
        if self.l1 + self.l2 > self.ell * (1 + 1e-12):
            raise DomainError(f"need l1 + l2 <= ell, got {self.l1} + {self.l2} > {self.ell}")

    @property
    def ratios(self):
        return self.l1 / self.ell, self.l2 / self.ell

    def check_range(self, L0, Linf):
        for x in (self.l1, self.l2, self.ell):
            if not L0 <= x <= Linf:
                raise DomainError(f"length {x} outside [{L0}, {Linf}]")


def _unit_integral(a):
    """Integral over [0, 1] of exp(2 pi i a x)."""
    a = np.asarray(a, dtype=float)
    return np.exp(1j * np.pi * a) * np.sinc(a)


def split_coefficients(r1, r2, q, p):
    """Closed-form matrix elements <e_q, pi e_p> for both blocks.

    ``r1``, ``r2`` may be arrays (broadcast against the mode grids); returns
    an array of shape ``r.shape + (2, len(q), len(p))``.
    """
    r1 = np.asarray(r1, dtype=float)[..., None, None]
    r2 = np.asarray(r2, dtype=float)[..., None, None]
    q = np.asarray(q, dtype=float)[:, None]
    p = np.asarray(p, dtype=float)[None, :]
    b1 = np.sqrt(r1) * _unit_integral(p * r1 - q)
    b2 = np.sqrt(r2) * np.exp(-2j * np.pi * p * r2) * _unit_integral(p * r2 - q)
    return np.stack(np.broadcast_arrays(b1, b2), axis=-3)


@dataclass
class L2Matrix:
    """One-particle matrix of the split, target window x source window."""

    spec: SplitSpec
    target_window: int
    source_window: int
    blocks: np.ndarray  # (2, 2*Kt+1, 2*Ks+1)

    @property
    def stacked(self):
        return np.concatenate([self.blocks[0], self.blocks[1]], axis=0)

    def singular_values(self):
        return np.linalg.svd(self.stacked, compute_uv=False)

    def norm(self):
        return float(self.singular_values()[0])

    def entry(self, block, q, p):
        return self.blocks[block - 1, q + self.target_window, p + self.source_window]


def l2_split_matrix(spec, K, source_window=None):
    """Matrix of the split projection on Fourier modes.

    Parameters
    ----------
    spec : SplitSpec
    K : int
        Target window; rows are q in -K..K for each of the two blocks.
    source_window : int, optional
        Column window (default ``K``).
    """
    if K < 0:
        raise DomainError("mode window must be >= 0")
    Ks = K if source_window is None else source_window
    q = np.arange(-K, K + 1)
    p = np.arange(-Ks, Ks + 1)
    r1, r2 = spec.ratios
    return L2Matrix(spec, K, Ks, split_coefficients(r1, r2, q, p))


def _interval_exp_integral(alpha, a, b):
    """Integral over [a, b] of exp(2 pi i alpha y)."""
    if b <= a:
        return 0.0 + 0.0j
    return (b - a) * np.exp(1j * np.pi * alpha * (a + b)) * np.sinc(alpha * (b - a))


def adjoint_gram(spec, K):
    """Gram matrix of the adjoint images pi^* e_q of the target modes.

    Computed from the explicit adjoint (extension by zero of the rescaled
    target functions) with exact interval integrals; pi pi^* = 1 iff this is
    the identity.
    """
    r1, r2 = spec.ratios
    pieces = [(0.0, r1, r1), (1.0 - r2, 1.0, r2)]  # (start, end, scale)
    qs = np.arange(-K, K + 1)
    labels = [(b, q) for b in range(2) for q in qs]
    G = np.zeros((len(labels), len(labels)), dtype=complex)
    for i, (b, q) in enumerate(labels):
        sa, ea, ra = pieces[b]
        for j, (bb, qq) in enumerate(labels):
            sb, eb, rb = pieces[bb]
            # conj(e_q((y - sa)/ra)) * e_qq((y - sb)/rb) / sqrt(ra rb)
            alpha = qq / rb - q / ra
            phase = np.exp(2j * np.pi * (q * sa / ra - qq * sb / rb))
            G[i, j] = phase * _interval_exp_integral(alpha, max(sa, sb), min(ea, eb)) / math.sqrt(ra * rb)
    return G


def coisometry_defect(spec, K):
    return float(np.max(np.abs(adjoint_gram(spec, K) - np.eye(2 * (2 * K + 1)))))


class SecondQuantizer:
    """Symbolic creation-recursion expansion of Gamma(A) between truncated bases.

    ``targets`` is one basis (square A, a single block) or a pair of bases
    (split, two blocks).  Polarization is carried through unchanged.  Every
    matrix entry is stored as a sum of monomials in the one-particle
    coefficients ``C[block, q, p]``; :meth:`evaluate` substitutes numbers.
    """

    def __init__(self, domain, targets):
        self.domain = domain
        self.pair = isinstance(targets, (tuple, list))
        self.targets = tuple(targets) if self.pair else (targets,)
        self.n_blocks = len(self.targets)
        self.Kt = max(t.K for t in self.targets)
        self.Ks = domain.K
        self.nq = 2 * self.Kt + 1
        self.np_ = 2 * self.Ks + 1
        if self.pair:
            self.codomain = fock.ProductBasis(*self.targets)
        else:
            self.codomain = self.targets[0]
        self._expand()

    def _symbol(self, block, q, p):
        return (block * self.nq + (q + self.Kt)) * self.np_ + (p + self.Ks)

    @property
    def n_symbols(self):
        return self.n_blocks * self.nq * self.np_

    def _expand(self):
        rows, cols, factors, monos = [], [], [], []
        dims = [t.dim for t in self.targets]
        for j, state in enumerate(self.domain.states):
            norm = 1.0 / math.sqrt(math.prod(math.factorial(n) for _, _, n in state.occ))
            particles = [(k, pol) for k, pol, n in state.occ for _ in range(n)]
            # key: (target states..., monomial) -> coefficient
            terms = {(tuple(fock.VACUUM for _ in self.targets), ()): norm}
            for p, pol in particles:
                new = {}
                for (tstates, mono), c in terms.items():
                    for b in range(self.n_blocks):
                        tb = self.targets[b]
                        for q in range(-tb.K, tb.K + 1):
                            mode = fock.ModeIndex(q, pol)
                            grown = tstates[b].shifted(mode, 1)
                            if grown not in tb:
                                continue
                            amp = c * math.sqrt(grown.count(mode))
                            key = (tstates[:b] + (grown,) + tstates[b + 1:],
                                   tuple(sorted(mono + (self._symbol(b, q, p),))))
                            new[key] = new.get(key, 0.0) + amp
                terms = new
            for (tstates, mono), c in terms.items():
                if self.pair:
                    row = self.targets[0].index(tstates[0]) * dims[1] + self.targets[1].index(tstates[1])
                else:
                    row = self.targets[0].index(tstates[0])
                rows.append(row)
                cols.append(j)
                factors.append(c)
                monos.append(mono)
        width = max((len(m) for m in monos), default=0)
        one = self.n_symbols  # padding slot holding the constant 1
        self._rows = np.array(rows, dtype=int)
        self._cols = np.array(cols, dtype=int)
        self._factors = np.array(factors, dtype=float)
        self._monos = np.full((len(monos), max(width, 1)), one, dtype=int)
        for i, m in enumerate(monos):
            self._monos[i, :len(m)] = m
        self._flat = self._rows * self.domain.dim + self._cols

    @property
    def n_terms(self):
        return len(self._factors)

    def coefficient_grid(self):
        """Fourier labels (q, p) at which coefficients must be supplied."""
        return np.arange(-self.Kt, self.Kt + 1), np.arange(-self.Ks, self.Ks + 1)

    def evaluate(self, coeffs):
        """Matrices of Gamma(A) for coefficient arrays of shape (..., n_blocks, nq, np).

        Returns an array of shape ``(..., codomain.dim, domain.dim)``.
        """
        coeffs = np.asarray(coeffs)
        batch = coeffs.shape[:-3]
        if coeffs.shape[-3:] != (self.n_blocks, self.nq, self.np_):
            raise UsageError(f"coefficient shape {coeffs.shape[-3:]} does not match "
                             f"{(self.n_blocks, self.nq, self.np_)}")
        flat = coeffs.reshape(batch + (self.n_symbols,))
        flat = np.concatenate([flat, np.ones(batch + (1,), dtype=flat.dtype)], axis=-1)
        vals = self._factors * np.prod(flat[..., self._monos], axis=-1)
        size = self.codomain.dim * self.domain.dim
        vals2 = vals.reshape(-1, self.n_terms)
        out = np.zeros((vals2.shape[0], size), dtype=complex)
        for b in range(vals2.shape[0]):
            out[b] = np.bincount(self._flat, weights=vals2[b].real, minlength=size) \
                + 1j * np.bincount(self._flat, weights=vals2[b].imag, minlength=size)
        return out.reshape(batch + (self.codomain.dim, self.domain.dim))

    def split_coefficients(self, l1, l2, ell):
        """Coefficient arrays of the split for (broadcastable) length arrays."""
        if not self.pair:
            raise UsageError("split coefficients need a pair of target bases")
        q, p = self.coefficient_grid()
        return split_coefficients(np.asarray(l1) / np.asarray(ell),
                                  np.asarray(l2) / np.asarray(ell), q, p)


def _check_contraction(mat, what):
    if mat.size and np.linalg.norm(mat, 2) > 1 + NORM_TOL:
        raise DomainError(f"{what} has norm {np.linalg.norm(mat, 2):.6g} > 1; "
                          "its second quantization is unbounded")


def second_quantize(A, domain, codomain=None):
    """Matrix of Gamma(A) on truncated bases.

    ``A`` is either an :class:`L2Matrix` (codomain: pair of bases, default
    ``(domain, domain)``) or a square per-polarization Fourier matrix of shape
    ``(2*Kc+1, 2*Kd+1)`` (codomain: one basis, default ``domain``).
    """
    if isinstance(A, L2Matrix):
        targets = codomain or (domain, domain)
        sq = SecondQuantizer(domain, targets)
        q, p = sq.coefficient_grid()
        _check_contraction(A.stacked, "split matrix")
        r1, r2 = A.spec.ratios
        coeffs = split_coefficients(r1, r2, q, p)
    else:
        target = codomain or domain
        sq = SecondQuantizer(domain, target)
        A = np.asarray(A)
        if A.shape != (sq.nq, sq.np_):
            raise UsageError(f"one-particle matrix must have shape {(sq.nq, sq.np_)}")
        _check_contraction(A, "one-particle matrix")
        coeffs = A[None]
    return fock.TruncatedOperator(domain, sq.codomain, matrix=sq.evaluate(coeffs))


def smoothed_family(alphas, masses, spec, domain, targets=None, sq=None):
    """(exp(-a1 H_{l1,m1}) (x) exp(-a2 H_{l2,m2})) Gamma(pi) exp(-a3 H_{ell,m3})."""
    a1, a2, a3 = alphas
    m1, m2, m3 = masses
    if min(alphas) <= 0:
        raise DomainError("heat-smoothing times must be positive")
    targets = targets or (domain, domain)
    sq = sq or SecondQuantizer(domain, targets)
    gamma = sq.evaluate(sq.split_coefficients(spec.l1, spec.l2, spec.ell))
    left = np.kron(targets[0].energies(spec.l1, m1) * a1, np.ones(targets[1].dim)) \
        + np.kron(np.ones(targets[0].dim), targets[1].energies(spec.l2, m2) * a2)
    right = domain.energies(spec.ell, m3) * a3
    mat = np.exp(-left)[:, None] * gamma * np.exp(-right)[None, :]
    return fock.TruncatedOperator(domain, sq.codomain, matrix=mat)


def save_operator(op, path, spec=None, K=None):
    """Binary container: ``<path>.npy`` matrix plus ``<path>.json`` header."""
    np.save(f"{path}.npy", op.dense())
    header = {"domain": op.domain.to_json(), "codomain": op.codomain.to_json(),
              "shape": list(op.shape)}
    if spec is not None:
        header["spec"] = {"l1": spec.l1, "l2": spec.l2, "ell": spec.ell}
    if K is not None:
        header["K"] = K
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=1)


def load_operator(path):
    with open(f"{path}.json", encoding="utf-8") as fh:
        header = json.load(fh)
    mat = np.load(f"{path}.npy")
    dom = fock.FockBasis.from_json(header["domain"])
    cod = header["codomain"]
    if "product" in cod:
        codomain = fock.ProductBasis(*(fock.FockBasis.from_json(c) for c in cod["product"]))
    else:
        codomain = fock.FockBasis.from_json(cod)
        if codomain.same_as(dom):
            codomain = dom
    return fock.TruncatedOperator(dom, codomain, matrix=mat), header
