"""Directed trivalent ribbon graphs and their Feynman-rule evaluation.

Moments of the interaction are Gaussian integrals of products of ``I`` and
``conj(I)``.  Each factor is a vertex:

* ``split`` (from ``I``): slot 0 carries the conjugated incoming field,
  slots 1 and 2 the two plain outgoing fields;
* ``join`` (from ``conj(I)``): the mirror image, slot 0 plain, slots 1 and 2
  conjugated.

The slot order 0, 1, 2 is the cyclic order at the vertex.  For a circular
complex Gaussian only conjugate-plain pairs contract, so every complete Wick
pairing is a bijection from conjugate legs to plain legs.  A graph is such a
pairing up to relabelling vertices of the same kind.

Evaluation contracts one tensor per vertex with one diagonal propagator per
edge.  Leg indices run over (white-noise cell, Fock state); the vertex tensor
has the vertex operator, the split weight and the mollifier folded in.  This
reproduces the Monte-Carlo discretization exactly, so graph sums and sample
averages estimate the same number.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import opt_einsum

from . import interaction, measure
from .errors import CapacityError, UsageError

SPLIT = "split"
JOIN = "join"
CONJ_SLOTS = {SPLIT: (0,), JOIN: (1, 2)}
PLAIN_SLOTS = {SPLIT: (1, 2), JOIN: (0,)}
MAX_ORDER = 2
MAX_INTERMEDIATE = 2 ** 26


@dataclass(frozen=True)
class RibbonGraph:
    """Vertices by kind; edges as ((v, slot) conjugate leg, (v, slot) plain leg).

    ``aut_order`` counts kind- and slot-preserving vertex bijections that map
    the edge set to itself.  ``multiplicity`` is the number of Wick pairings
    of ``I^n conj(I)^n`` that produce this graph (0 when unknown).
    """

    kinds: tuple
    edges: tuple
    aut_order: int = 1
    multiplicity: int = 0

    @property
    def n_vertices(self):
        return len(self.kinds)

    @property
    def n(self):
        return self.n_vertices // 2

    @property
    def n_edges(self):
        return len(self.edges)

    def half_edges(self):
        return [(v, s) for v in range(self.n_vertices) for s in range(3)]

    def is_conj(self, v, slot):
        return slot in CONJ_SLOTS[self.kinds[v]]

    def adjacency(self):
        adj = {v: set() for v in range(self.n_vertices)}
        for (u, _), (w, _) in self.edges:
            adj[u].add(w)
            adj[w].add(u)
        return adj

    def components(self):
        """Connected components, each relabelled as its own graph."""
        adj = self.adjacency()
        seen, comps = set(), []
        for start in range(self.n_vertices):
            if start in seen:
                continue
            stack, comp = [start], []
            seen.add(start)
            while stack:
                v = stack.pop()
                comp.append(v)
                for w in adj[v] - seen:
                    seen.add(w)
                    stack.append(w)
            comp.sort(key=lambda v: (self.kinds[v] != SPLIT, v))
            relabel = {v: i for i, v in enumerate(comp)}
            edges = tuple(sorted(((relabel[u], a), (relabel[w], b))
                                 for (u, a), (w, b) in self.edges if u in relabel))
            comps.append(canonical_graph(tuple(self.kinds[v] for v in comp), edges))
        return comps

    @property
    def is_connected(self):
        return self.n_vertices == 0 or len(self.components()) == 1

    @property
    def has_self_loop(self):
        return any(u == w for (u, _), (w, _) in self.edges)

    def to_json(self):
        return {
            "vertices": [{"kind": k, "cyclic_order": [0, 1, 2],
                          "conjugate": [s in CONJ_SLOTS[k] for s in range(3)]}
                         for k in self.kinds],
            "edges": [{"from": list(a), "to": list(b)} for a, b in self.edges],
            "aut_order": self.aut_order,
            "multiplicity": self.multiplicity,
        }

    @classmethod
    def from_json(cls, data):
        kinds = tuple(v["kind"] for v in data["vertices"])
        edges = tuple((tuple(e["from"]), tuple(e["to"])) for e in data["edges"])
        return cls(kinds, edges, data["aut_order"], data.get("multiplicity", 0))


def _legs(kinds):
    conj = [(v, s) for v, k in enumerate(kinds) for s in CONJ_SLOTS[k]]
    plain = [(v, s) for v, k in enumerate(kinds) for s in PLAIN_SLOTS[k]]
    return conj, plain


def _kind_permutations(kinds):
    groups = {}
    for v, k in enumerate(kinds):
        groups.setdefault(k, []).append(v)
    blocks = [groups[k] for k in sorted(groups)]
    for images in itertools.product(*(itertools.permutations(b) for b in blocks)):
        perm = {}
        for block, image in zip(blocks, images):
            perm.update(zip(block, image))
        yield perm


def _relabel(edges, perm):
    return tuple(sorted(((perm[u], a), (perm[w], b)) for (u, a), (w, b) in edges))


def canonical_graph(kinds, edges):
    """Canonical representative (lexicographically least relabelling) with |Aut|."""
    edges = tuple(sorted(edges))
    best, aut = None, 0
    for perm in _kind_permutations(kinds):
        img = _relabel(edges, perm)
        if img == edges:
            aut += 1
        if best is None or img < best:
            best = img
    return RibbonGraph(tuple(kinds), best if best is not None else (), aut)


def standard_kinds(n):
    return (SPLIT,) * n + (JOIN,) * n


def wick_pairings(n):
    """All complete pairings of I^n conj(I)^n as edge tuples on standard vertices."""
    kinds = standard_kinds(n)
    conj, plain = _legs(kinds)
    for image in itertools.permutations(plain):
        yield tuple(sorted(zip(conj, image)))


def enumerate_graphs(n, max_order=MAX_ORDER):
    """Isomorphism classes of directed trivalent ribbon graphs with 2n vertices.

    Classes are found by canonicalizing every Wick pairing; ``multiplicity``
    is the number of pairings in each class.  Canonical order: by edge table.
    """
    if n < 0:
        raise UsageError("n >= 0 required")
    if n > max_order:
        raise CapacityError(f"graph enumeration for n={n} exceeds the configured bound "
                            f"max_order={max_order}")
    kinds = standard_kinds(n)
    classes, counts = {}, Counter()
    for edges in wick_pairings(n):
        g = canonical_graph(kinds, edges)
        classes[g.edges] = g
        counts[g.edges] += 1
    return [RibbonGraph(kinds, key, classes[key].aut_order, counts[key])
            for key in sorted(classes)]


def genus(graph):
    """Genus of the closed surface glued from one pair of pants per vertex.

    Pants have Euler characteristic -1 and tubes 0, so a connected graph with
    2n vertices gives chi = -2n and genus n + 1.
    """
    if not graph.is_connected:
        raise UsageError("genus is defined per connected component")
    chi = -graph.n_vertices
    return (2 - chi) // 2


def weight_table(n):
    """Pairing-derived weights next to automorphism data for every graph in G_2n."""
    rows = []
    norm = math.comb(2 * n, n) / 4 ** n
    for g in enumerate_graphs(n):
        rows.append({
            "edges": [list(map(list, e)) for e in g.edges],
            "connected": g.is_connected,
            "aut_order": g.aut_order,
            "pairings": g.multiplicity,
            "orbit_size": math.factorial(n) ** 2 // g.aut_order,
            "moment_weight": norm * g.multiplicity,
            "aut_over_vertex_factorial": g.aut_order / math.factorial(g.n_vertices),
        })
    return rows


# ---------------------------------------------------------------- evaluation


@dataclass
class FeynmanModel:
    """Vertex tensor and propagator data for one discretization.

    ``cells`` are the white-noise cells the propagators live on: the field
    grid for finite kappa, the quadrature cells for point evaluation
    (kappa = inf).
    """

    geometry: interaction.VertexGeometry
    kappa: float
    tensor: np.ndarray = field(repr=False)     # split vertex, legs (cell, state) x 3
    energies: np.ndarray = field(repr=False)   # per active leg
    dl: float = 0.0
    legs: np.ndarray = field(default=None, repr=False)  # active flat (cell, state) indices
    dim: int = 1
    max_intermediate: int = MAX_INTERMEDIATE

    @property
    def leg_dim(self):
        return self.energies.size

    @property
    def n_cells(self):
        g = self.geometry
        return len(g.ell) if math.isinf(self.kappa) else g.field.n_l

    def leg_index(self, cell, state=None):
        """Active-leg positions of a white-noise cell (optionally one state)."""
        flat = self.legs
        hit = flat // self.dim == cell
        if state is not None:
            hit &= flat % self.dim == state
        return np.flatnonzero(hit)

    @property
    def t_values(self):
        g = self.geometry
        return g.field.t_grid[g.t_idx]

    @property
    def t_weights(self):
        return self.geometry.t_w

    def vertex_tensor(self, kind):
        return self.tensor if kind == SPLIT else np.conj(self.tensor)

    def propagator(self, lag, cell=None):
        p = np.exp(-self.energies * abs(lag)) / self.dl
        if cell is not None:
            mask = np.zeros_like(p)
            mask[self.leg_index(cell)] = 1.0
            p = p * mask
        return p

    def echo(self):
        g = self.geometry
        return {"vertex": asdict(g.params), "field": g.field.to_json(), "kappa": self.kappa,
                "M": g.basis.M, "dim": g.basis.dim}


def feynman_model(field_params, vparams, basis=None, kappa=None,
                  max_intermediate=MAX_INTERMEDIATE):
    """Build the vertex tensor T[(c0,a),(c1,b),(c2,c)].

    ``T = sum_triples w conj(V[b,c,a]) K[j,c0] K[j1,c1] K[j2,c2]`` with ``K``
    the mollified (and interpolated) field in terms of white-noise cells, so
    that ``I = sum_t w_t T . conj(X_a) X_b X_c`` for the raw field ``X``.
    """
    geo = interaction.vertex_geometry(field_params, vparams, basis)
    kappa = field_params.kappa if kappa is None else kappa
    dim = geo.basis.dim
    if math.isinf(kappa):
        K = np.eye(len(geo.ell))
        cells = geo.ell
        dl = field_params.dl * vparams.l_stride
    else:
        K = geo.interp @ measure.MollifierSpec(kappa).matrix(field_params.n_l, field_params.dl)
        cells = field_params.ell_grid
        dl = field_params.dl
    n_c = len(cells)
    D = n_c * dim
    if D ** 3 > max_intermediate * 8:
        raise CapacityError(f"vertex tensor with leg dimension {D} is too large")
    n_q = len(geo.ell)
    core = np.zeros((n_q, n_q, n_q, dim, dim, dim), dtype=complex)
    j, j1, j2 = geo.triples.T
    # each triple occurs once; V[r, b, c, a] -> core[j, j1, j2, a, b, c]
    core[j, j1, j2] = (np.conj(geo.V) * geo.weights[:, None, None, None]).transpose(0, 3, 1, 2)
    for axis in range(3):
        core = np.moveaxis(np.tensordot(K, core, axes=([0], [axis])), 0, axis)
    T = core.transpose(0, 3, 1, 4, 2, 5).reshape(D, D, D)
    E = np.stack([geo.basis.energies(x) for x in cells]).ravel()
    # drop legs no vertex slot touches; propagators are diagonal, so this is exact
    mag = np.abs(T)
    active = np.flatnonzero((mag.sum(axis=(1, 2)) + mag.sum(axis=(0, 2)) + mag.sum(axis=(0, 1))) > 0)
    T = T[np.ix_(active, active, active)]
    return FeynmanModel(geo, kappa, T, E[active], dl, active, dim, max_intermediate)


_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"


def _network(graph, model, times, cells=None):
    """einsum operands for one labelled graph."""
    letter = {}
    for e, (a, b) in enumerate(graph.edges):
        letter[a] = letter[b] = _LETTERS[e]
    ops, subs = [], []
    for v, kind in enumerate(graph.kinds):
        ops.append(model.vertex_tensor(kind))
        subs.append("".join(letter[(v, s)] for s in range(3)))
    for e, ((u, _), (w, _)) in enumerate(graph.edges):
        ops.append(model.propagator(times[u] - times[w],
                                    None if cells is None else cells[e]))
        subs.append(_LETTERS[e])
    return ",".join(subs) + "->", ops


def _contract(graph, model, times, cells=None):
    if graph.n_vertices == 0:
        return 1.0 + 0j
    expr, ops = _network(graph, model, times, cells)
    return _run(expr, ops, model)


def _run(expr, ops, model):
    inputs = expr.split("->")[0].split(",")
    path, info = opt_einsum.contract_path(expr, *ops, optimize="greedy")
    if info.largest_intermediate > model.max_intermediate:
        raise CapacityError(f"tensor network intermediate exceeds {model.max_intermediate} "
                            "entries; coarsen the grids or lower M")
    terms = [_diagonal(sub, arr) for sub, arr in zip(inputs, ops)]
    for pair in path:
        picked = [terms[k] for k in sorted(pair, reverse=True)]
        for k in sorted(pair, reverse=True):
            del terms[k]
        keep = set("".join(sub for sub, _ in terms))
        sub, arr = picked[0]
        for sub2, arr2 in picked[1:]:
            sub, arr = _pair(sub, arr, sub2, arr2, keep)
        terms.append((sub, arr))
    (sub, arr), = terms
    return complex(arr.sum())


def _diagonal(sub, arr):
    """Resolve an index repeated within one operand (a self-loop) to its diagonal."""
    for c in set(sub):
        while sub.count(c) > 1:
            i = sub.index(c)
            j = sub.index(c, i + 1)
            arr = np.moveaxis(np.diagonal(arr, axis1=i, axis2=j), -1, 0)
            sub = c + sub[:i] + sub[i + 1:j] + sub[j + 1:]
    return sub, arr


def _reduce(sub, arr, other, keep):
    """Sum out indices that appear nowhere else."""
    drop = tuple(k for k, c in enumerate(sub) if c not in other and c not in keep)
    if not drop:
        return sub, arr
    return "".join(c for k, c in enumerate(sub) if k not in drop), arr.sum(axis=drop)


def _pair(sa, a, sb, b, keep):
    """Contract two tensors with batched matmul; indices in ``keep`` survive."""
    sa, a = _reduce(sa, a, sb, keep)
    sb, b = _reduce(sb, b, sa, keep)
    size = dict(zip(sa, a.shape))
    size.update(zip(sb, b.shape))
    batch = [c for c in sa if c in sb and c in keep]
    inner = [c for c in sa if c in sb and c not in keep]
    left = [c for c in sa if c not in sb]
    right = [c for c in sb if c not in sa]
    a = a.transpose([sa.index(c) for c in batch + left + inner])
    b = b.transpose([sb.index(c) for c in batch + inner + right])
    nb = [size[c] for c in batch]
    n = lambda idx: int(np.prod([size[c] for c in idx]))
    out = np.matmul(a.reshape(nb + [n(left), n(inner)]), b.reshape(nb + [n(inner), n(right)]))
    return "".join(batch + left + right), out.reshape(nb + [size[c] for c in left + right])


@dataclass(frozen=True)
class EdgeLabels:
    """Vertex times and per-edge widths (snapped to white-noise cells)."""

    times: tuple
    widths: tuple

    def check(self, graph, model):
        g = model.geometry
        if len(self.times) != graph.n_vertices or len(self.widths) != graph.n_edges:
            raise UsageError("labels do not match the graph")
        T = g.params.T
        if any(abs(t) > T + 1e-12 for t in self.times):
            raise UsageError(f"vertex times must lie in [-{T}, {T}]")
        f = g.field
        if any(not f.L0 <= w <= f.Linf for w in self.widths):
            raise UsageError(f"widths must lie in [{f.L0}, {f.Linf}]")

    def cells(self, model):
        g = model.geometry
        step = model.dl
        return tuple(min(int((w - g.field.L0) / step), model.n_cells - 1)
                     for w in self.widths)


@dataclass(frozen=True)
class ActivityResult:
    value: complex
    params: dict


def activity_f(graph, labels, model):
    """Feynman-rule integrand of one labelled graph, as a density in the widths.

    The ell-smears at each vertex are already folded into the vertex tensor;
    the labels fix the vertex times and the white-noise cell of every edge.
    The value is the restricted contraction divided by ``dl`` per edge, so
    summing over all cells of every edge times ``dl^n_edges`` gives
    :func:`graph_value`.  Single labels can carry a phase; it cancels
    against the label-swapped term, so sums over labels are real.
    """
    labels.check(graph, model)
    val = _contract(graph, model, labels.times, labels.cells(model)) / model.dl ** graph.n_edges
    echo = model.echo()
    echo.update({"times": list(labels.times), "widths": list(labels.widths)})
    return ActivityResult(val, echo)


def graph_value(graph, model, times):
    """Sum of the activity over every edge cell at fixed vertex times."""
    return _contract(graph, model, times)


def graph_integral(graph, model, factorize=True):
    """Time quadrature of :func:`graph_value`: one graph's term in E[I^n conj(I)^n].

    Vertex times become extra tensor indices: each propagator carries its two
    endpoint times and each vertex its trapezoid weight, so the whole
    quadrature is one contraction.  Disconnected graphs are evaluated per
    component (Gaussian moments factorize) unless ``factorize`` is False.
    """
    if graph.n_vertices == 0:
        return 1.0 + 0j
    if factorize and not graph.is_connected:
        return complex(np.prod([graph_integral(c, model) for c in graph.components()]))
    tv, tw = model.t_values, model.t_weights
    lag = np.abs(tv[:, None] - tv[None, :])
    letter = {}
    for e, (a, b) in enumerate(graph.edges):
        letter[a] = letter[b] = _LETTERS[e]
    tl = _LETTERS[graph.n_edges:]
    ops, subs = [], []
    for v, kind in enumerate(graph.kinds):
        ops.append(model.vertex_tensor(kind))
        subs.append("".join(letter[(v, s)] for s in range(3)))
        ops.append(tw)
        subs.append(tl[v])
    for e, ((u, _), (w, _)) in enumerate(graph.edges):
        p = np.exp(-model.energies[None, None, :] * lag[:, :, None]) / model.dl
        ops.append(p)
        subs.append(tl[u] + tl[w] + _LETTERS[e] if u != w else tl[u] + _LETTERS[e])
        if u == w:
            ops[-1] = np.ascontiguousarray(np.diagonal(p, axis1=0, axis2=1).T)
    return _run(",".join(subs) + "->", ops, model)


@dataclass
class MomentResult:
    order: int
    value: float
    imag_residual: float
    terms: list


def wick_moment(order, model, max_order=MAX_ORDER, workers=1):
    """E[(Re I)^order] as a sum over graphs with pairing-derived weights.

    Only ``I^n conj(I)^n`` with n = order/2 has complete pairings, so
    ``E[(Re I)^(2n)] = 2^(-2n) C(2n, n) sum_G c_G <G>``.
    """
    if order < 0:
        raise UsageError("order >= 0 required")
    if order % 2:
        return MomentResult(order, 0.0, 0.0, [])
    n = order // 2
    norm = math.comb(2 * n, n) / 4 ** n
    graphs = enumerate_graphs(n, max_order)
    skip = _tadpole_free(model)
    value = lambda g: 0j if g.has_self_loop and skip else graph_integral(g, model)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        values = list(pool.map(value, graphs))
    terms = [(g, g.multiplicity, v) for g, v in zip(graphs, values)]
    total = norm * sum(g.multiplicity * v for g, v in zip(graphs, values))
    return MomentResult(order, float(total.real), float(abs(total.imag)), terms)


def _tadpole_free(model):
    """True when no split or join vertex can contract with itself.

    Legs at one vertex sit at l and l1 <= l - L0; with mollifier support
    1/kappa on both ends they cannot share a white-noise cell once
    2/kappa < L0 (exact zero, so the contraction can be skipped).
    """
    f = model.geometry.field
    return math.isinf(model.kappa) or 2.0 / model.kappa + 2 * f.dl < f.L0


def partition_series(lam, n_max, model, max_order=MAX_ORDER):
    """Partial sums of sum_n (i lam)^(2n)/(2n)! E[(Re I)^(2n)]."""
    if n_max > max_order:
        raise CapacityError(f"n_max={n_max} exceeds the configured bound {max_order}")
    partial, terms = [], []
    s = 0.0
    for n in range(n_max + 1):
        m = wick_moment(2 * n, model, max_order).value
        term = (-1) ** n * lam ** (2 * n) / math.factorial(2 * n) * m
        terms.append(term)
        s += term
        partial.append(s)
    return partial, terms


def write_graphs_json(path, graphs):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([g.to_json() for g in graphs], fh, indent=1)


def read_graphs_json(path):
    with open(path, encoding="utf-8") as fh:
        return [RibbonGraph.from_json(d) for d in json.load(fh)]


def write_rows_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
