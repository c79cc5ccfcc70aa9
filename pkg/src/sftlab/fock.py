"""Truncated bosonic Fock space over L2(S^1) x R^d.

One-particle modes are Fourier labels ``k`` (momentum 2*pi*k) carrying a
polarization ``pol`` in ``1..d``.  A basis vector is an occupation state,
stored as a sorted tuple of ``(k, pol, count)`` triples; the vacuum is the
empty tuple.  The truncated space F_M keeps every state whose energy under
H_{L0,m} is at most M.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, DomainError

#: Default bound on the number of basis states.
MAX_BASIS_DIM = 20000

# relative slack when comparing an energy against the cutoff
_CUTOFF_RTOL = 1e-12


def omega(k, ell, m):
    """Single-mode frequency sqrt((2 pi k / ell)^2 + m^2).

    Accepts scalars or numpy arrays for ``k``.
    """
    if not ell > 0:
        raise DomainError(f"length must be positive, got {ell}")
    if not m > 0:
        raise DomainError(f"mass must be positive, got {m}")
    k = np.asarray(k, dtype=float)
    out = np.sqrt((2.0 * np.pi * k / ell) ** 2 + m * m)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, order=True)
class ModeIndex:
    k: int
    pol: int = 1

    def check(self, d):
        if not 1 <= self.pol <= d:
            raise DomainError(f"polarization {self.pol} outside 1..{d}")


@dataclass(frozen=True)
class OccupationState:
    """Occupation numbers of finitely many modes; absent modes are empty."""

    occ: tuple = ()

    def __post_init__(self):
        for k, pol, n in self.occ:
            if n < 1:
                raise DomainError("occupation counts must be >= 1")
        keys = [(k, p) for k, p, _ in self.occ]
        if keys != sorted(set(keys)):
            raise DomainError("occupation triples must be sorted and unique")

    @classmethod
    def from_counts(cls, counts):
        """Build from a mapping ``{ModeIndex or (k, pol): count}``."""
        items = []
        for mode, n in counts.items():
            k, pol = (mode.k, mode.pol) if isinstance(mode, ModeIndex) else mode
            if n:
                items.append((int(k), int(pol), int(n)))
        return cls(tuple(sorted(items)))

    @property
    def is_vacuum(self):
        return not self.occ

    @property
    def n_particles(self):
        return sum(n for _, _, n in self.occ)

    @property
    def momentum(self):
        """Total Fourier label sum(k * count)."""
        return sum(k * n for k, _, n in self.occ)

    def count(self, mode):
        for k, pol, n in self.occ:
            if (k, pol) == (mode.k, mode.pol):
                return n
        return 0

    def shifted(self, mode, delta):
        """State with ``delta`` particles added to ``mode``; None if that is negative."""
        counts = {(k, p): n for k, p, n in self.occ}
        key = (mode.k, mode.pol)
        new = counts.get(key, 0) + delta
        if new < 0:
            return None
        counts[key] = new
        return OccupationState.from_counts(counts)

    def __repr__(self):
        if self.is_vacuum:
            return "Ω"
        return "|" + ",".join(f"{k}.{p}^{n}" for k, p, n in self.occ) + ">"


VACUUM = OccupationState()


def state_energy(state, ell, m):
    """Energy of an occupation state under H_{ell,m} (exactly rounded sum)."""
    return math.fsum(n * omega(k, ell, m) for k, _, n in state.occ)


def mode_window(m, L0, M):
    """Smallest K with omega(K+1, L0, m) > M."""
    K = 0
    while omega(K + 1, L0, m) <= M * (1 + _CUTOFF_RTOL):
        K += 1
    return K


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Ordered basis of F_M.

    States are sorted by (energy at L0, occupation tuple); the vacuum is
    always index 0.
    """

    states: tuple
    d: int
    m: float
    L0: float
    M: float
    K: int
    _index: dict = field(default=None, repr=False, compare=False)
    _counts: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})
        modes = self.modes
        pos = {(md.k, md.pol): j for j, md in enumerate(modes)}
        counts = np.zeros((len(self.states), len(modes)))
        for i, s in enumerate(self.states):
            for k, pol, n in s.occ:
                counts[i, pos[(k, pol)]] = n
        object.__setattr__(self, "_counts", counts)

    @property
    def dim(self):
        return len(self.states)

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __contains__(self, state):
        return state in self._index

    def index(self, state):
        return self._index[state]

    def get_index(self, state):
        return self._index.get(state)

    @property
    def modes(self):
        return tuple(ModeIndex(k, p) for k in range(-self.K, self.K + 1)
                     for p in range(1, self.d + 1))

    @property
    def counts(self):
        """Occupation matrix, shape (dim, n_modes), columns ordered as ``modes``."""
        return self._counts

    def energies(self, ell, m=None):
        """Vector of state energies under H_{ell,m} (default mass: the basis mass)."""
        m = self.m if m is None else m
        w = np.array([omega(md.k, ell, m) for md in self.modes])
        return self._counts @ w

    def momenta(self):
        ks = np.array([md.k for md in self.modes], dtype=float)
        return self._counts @ ks

    def key(self):
        return (self.d, self.m, self.L0, self.M)

    def same_as(self, other):
        return self.key() == other.key() and self.states == other.states

    def to_json(self):
        return {
            "d": self.d, "m": self.m, "L0": self.L0, "M": self.M, "K": self.K,
            "states": [[list(t) for t in s.occ] for s in self.states],
        }

    @classmethod
    def from_json(cls, data):
        states = tuple(OccupationState(tuple(tuple(t) for t in s)) for s in data["states"])
        return cls(states, data["d"], data["m"], data["L0"], data["M"], data["K"])


def enumerate_basis(d, m, L0, M, max_dim=MAX_BASIS_DIM):
    """All occupation states with energy_{L0,m} <= M, in canonical order.

    Raises
    ------
    CapacityError
        If the basis would exceed ``max_dim`` states.
    """
    if d < 1 or int(d) != d:
        raise DomainError(f"d must be a positive integer, got {d}")
    if not m > 0:
        raise DomainError("m > 0 required")
    if not L0 > 0:
        raise DomainError("L0 > 0 required")
    if M < 0:
        raise DomainError("M >= 0 required")
    d = int(d)
    K = mode_window(m, L0, M)
    budget = M * (1 + _CUTOFF_RTOL)
    modes = [ModeIndex(k, p) for k in range(-K, K + 1) for p in range(1, d + 1)]
    freqs = [omega(md.k, L0, m) for md in modes]

    found = []

    def extend(i, energy, acc):
        if i == len(modes):
            found.append(tuple(acc))
            if len(found) > max_dim:
                raise CapacityError(f"Fock basis exceeds max_dim={max_dim} at M={M}")
            return
        n = 0
        w = freqs[i]
        while energy + n * w <= budget:
            if n:
                acc.append((modes[i].k, modes[i].pol, n))
            extend(i + 1, energy + n * w, acc)
            if n:
                acc.pop()
            n += 1

    extend(0, 0.0, [])
    states = [OccupationState(tuple(sorted(occ))) for occ in found]
    states.sort(key=lambda s: (state_energy(s, L0, m), s.occ))
    return FockBasis(tuple(states), d, float(m), float(L0), float(M), K)


class ProductBasis:
    """Tensor product basis of two truncated Fock spaces, row-major (i1, i2)."""

    def __init__(self, first, second):
        self.first = first
        self.second = second

    @property
    def dim(self):
        return self.first.dim * self.second.dim

    def index(self, s1, s2):
        return self.first.index(s1) * self.second.dim + self.second.index(s2)

    def to_json(self):
        return {"product": [self.first.to_json(), self.second.to_json()]}


@dataclass
class TruncatedOperator:
    """Matrix of an operator between truncated bases.

    Exactly one of ``diag`` (real or complex vector, square case only) and
    ``matrix`` (dense, shape ``(codomain.dim, domain.dim)``) is set.
    """

    domain: object
    codomain: object
    matrix: np.ndarray = None
    diag: np.ndarray = None

    def __post_init__(self):
        if (self.matrix is None) == (self.diag is None):
            raise DomainError("exactly one of matrix / diag must be given")
        if self.diag is not None:
            if self.codomain is not self.domain:
                raise DomainError("diagonal form requires codomain == domain")
            if self.diag.shape != (self.domain.dim,):
                raise DomainError("diagonal length does not match basis")
        elif self.matrix.shape != (self.codomain.dim, self.domain.dim):
            raise DomainError(
                f"matrix shape {self.matrix.shape} != ({self.codomain.dim}, {self.domain.dim})")

    @property
    def shape(self):
        return (self.codomain.dim, self.domain.dim)

    def dense(self):
        if self.matrix is not None:
            return self.matrix
        return np.diag(self.diag)

    def apply(self, vec):
        vec = np.asarray(vec)
        if self.diag is not None:
            return self.diag * vec
        return self.matrix @ vec

    def __matmul__(self, other):
        if not isinstance(other, TruncatedOperator):
            return self.apply(other)
        if other.codomain is not self.domain:
            raise DomainError("operator composition across different bases")
        if self.diag is not None and other.diag is not None:
            return TruncatedOperator(other.domain, self.codomain, diag=self.diag * other.diag)
        if self.diag is not None:
            return TruncatedOperator(other.domain, self.codomain,
                                     matrix=self.diag[:, None] * other.matrix)
        if other.diag is not None:
            return TruncatedOperator(other.domain, self.codomain,
                                     matrix=self.matrix * other.diag[None, :])
        return TruncatedOperator(other.domain, self.codomain, matrix=self.matrix @ other.matrix)

    def adjoint(self):
        if self.diag is not None:
            return TruncatedOperator(self.domain, self.domain, diag=np.conj(self.diag))
        return TruncatedOperator(self.codomain, self.domain, matrix=self.matrix.conj().T)

    def norm(self):
        """Operator (spectral) norm."""
        if self.diag is not None:
            return float(np.max(np.abs(self.diag))) if self.diag.size else 0.0
        return float(np.linalg.norm(self.matrix, 2)) if self.matrix.size else 0.0

    def to_json(self):
        out = {"domain": self.domain.to_json(), "codomain": self.codomain.to_json()}
        if self.diag is not None:
            out["diag"] = _complex_list(self.diag)
        else:
            out["matrix"] = [_complex_list(row) for row in self.matrix]
        return out


def _complex_list(arr):
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        return [[float(z.real), float(z.imag)] for z in arr]
    return [float(x) for x in arr]


def heat_operator(basis, ell, m, t):
    """Diagonal matrix of exp(-t H_{ell,m}) on ``basis``."""
    if t < 0:
        raise DomainError(f"heat time must be >= 0, got {t}")
    if t == 0:
        return TruncatedOperator(basis, basis, diag=np.ones(basis.dim))
    return TruncatedOperator(basis, basis, diag=np.exp(-t * basis.energies(ell, m)))


def heat_trace_oracle(d, ell, m, t, K):
    """Tr exp(-t H) restricted to modes |k| <= K, by the product formula."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    ks = np.arange(-K, K + 1)
    w = omega(ks, ell, m)
    return float(np.exp(-d * np.sum(np.log1p(-np.exp(-t * np.atleast_1d(w))))))


def ladder_matrix(basis, mode, which):
    """Matrix of a(mode) or a*(mode) on the truncated basis.

    a|n> = sqrt(n)|n-1>; the creation matrix is the adjoint, so images
    above the cutoff are dropped.
    """
    if which not in ("create", "annihilate"):
        raise DomainError("which must be 'create' or 'annihilate'")
    mode.check(basis.d)
    a = np.zeros((basis.dim, basis.dim))
    for j, s in enumerate(basis.states):
        n = s.count(mode)
        if n == 0:
            continue
        i = basis.get_index(s.shifted(mode, -1))
        if i is not None:
            a[i, j] = math.sqrt(n)
    mat = a if which == "annihilate" else a.T.copy()
    return TruncatedOperator(basis, basis, matrix=mat)


def rotation_operator(basis, theta):
    """Unitary diagonal R(theta); a particle of mode k picks up exp(-i k theta)."""
    phase = np.exp(-1j * theta * basis.momenta())
    return TruncatedOperator(basis, basis, diag=phase)


def vacuum_projector(basis):
    diag = np.zeros(basis.dim)
    diag[0] = 1.0
    return TruncatedOperator(basis, basis, diag=diag)


def restriction_indices(small, large):
    """Positions of ``small``'s states inside ``large`` (p_M as an index map)."""
    idx = [large.get_index(s) for s in small.states]
    if any(i is None for i in idx):
        raise DomainError("basis is not contained in the larger basis")
    return np.array(idx, dtype=int)


def dump_basis(basis, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(basis.to_json(), fh, indent=1)
