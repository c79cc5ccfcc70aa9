"""Flat glued-cylinder surfaces and their triangulations.

Every edge of a graph becomes one flat tube.  At a vertex the boundary
circle of the wide tube (slot 0) is cut into two arcs; each arc is glued to
the whole boundary circle of one narrow tube (slots 1 and 2).  The fixture
cylinders of length ``eps`` are merged into the adjacent edge tubes, so an
edge tube has length ``t_e + 2 eps``.

Two junction conventions are supported:

* ``"mandelstam"``: the arc endpoints P and Q are identified, giving one cone
  point of total angle 4 pi per vertex;
* ``"split"``: the two narrow circles also share a short seam of length
  ``seam``, so P and Q stay distinct and each carries angle 3 pi.  The width
  constraint then reads ``l_i = l_j + l_k - 2 seam``.

Triangles carry their own flat chart coordinates (the unrolled tube), so
the metric is exact: no embedding is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConstraintError, UsageError
from ..graphs import RibbonGraph

WIDTH_TOL = 1e-12
ANGLE_TOL = 1e-9


@dataclass(frozen=True)
class PlumbingFixture:
    """Three cylinders of length ``eps`` meeting at one junction."""

    widths: tuple       # (l_i, l_j, l_k), wide first
    eps: float
    seam: float = 0.0

    def violations(self):
        li, lj, lk = self.widths
        out = []
        if min(self.widths) <= 0 or self.eps <= 0:
            out.append("fixture widths and length must be positive")
        if abs(li - (lj + lk - 2 * self.seam)) > WIDTH_TOL * max(1.0, li):
            out.append(f"width constraint violated: {li} != {lj} + {lk}"
                       + (f" - 2*{self.seam}" if self.seam else ""))
        return out

    @property
    def area(self):
        return self.eps * sum(self.widths)


@dataclass(frozen=True)
class SurfaceLabels:
    """Tube length and width for every edge, in edge order."""

    lengths: tuple
    widths: tuple
    twists: tuple = ()

    def check(self, graph):
        if len(self.lengths) != graph.n_edges or len(self.widths) != graph.n_edges:
            raise UsageError("labels do not match the graph")
        if self.twists and len(self.twists) != graph.n_edges:
            raise UsageError("one twist per edge required")
        if any(t < 0 for t in self.lengths) or any(w <= 0 for w in self.widths):
            raise UsageError("tube lengths must be >= 0 and widths > 0")


def labels_from_times(graph, times, widths, twists=()):
    """Tube lengths |t_u - t_w| from vertex times."""
    lengths = tuple(abs(times[u] - times[w]) for (u, _), (w, _) in graph.edges)
    return SurfaceLabels(lengths, tuple(widths), tuple(twists))


@dataclass
class SurfaceMesh:
    """Closed triangulated surface with per-triangle flat chart coordinates.

    ``triangles`` index ``n_vertices`` global vertices; ``local[t]`` holds the
    chart coordinates of the three corners of triangle ``t`` in the same
    order.  ``cone_angles`` maps cone vertex ids to their target total angle.
    """

    n_vertices: int
    triangles: np.ndarray
    local: np.ndarray
    cone_angles: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def cone_points(self):
        return sorted(self.cone_angles)

    def edges(self):
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def triangle_areas(self):
        p = self.local
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def area(self):
        return float(self.triangle_areas().sum())

    def corner_angles(self):
        p = self.local
        out = np.empty((self.n_triangles, 3))
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
        return out

    def angle_sums(self):
        return np.bincount(self.triangles.ravel(), weights=self.corner_angles().ravel(),
                           minlength=self.n_vertices)

    def angle_defects(self):
        """2 pi minus the total angle at every vertex."""
        return 2 * math.pi - self.angle_sums()

    def oriented_closed(self):
        """Every directed edge occurs once and its reverse once (closed, oriented)."""
        d = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        fwd = {tuple(x) for x in d}
        return len(fwd) == len(d) and all((b, a) in fwd for a, b in fwd)

    def is_connected(self):
        parent = list(range(self.n_vertices))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges():
            parent[find(a)] = find(b)
        return len({find(v) for v in range(self.n_vertices)}) == 1

    def violations(self, flat=True):
        out = []
        if np.any(self.triangle_areas() <= 0):
            out.append("non-positive triangle area")
        if not self.oriented_closed():
            out.append("mesh is not a closed oriented surface")
        if not self.is_connected():
            out.append("mesh is not connected")
        if flat:
            sums = self.angle_sums()
            target = np.full(self.n_vertices, 2 * math.pi)
            for v, ang in self.cone_angles.items():
                target[v] = ang
            bad = np.flatnonzero(np.abs(sums - target) > ANGLE_TOL)
            if len(bad):
                out.append(f"angle sums off target at {len(bad)} vertices")
        return out

    def to_ascii(self, path):
        """Write the documented ASCII format (see :func:`read_ascii`)."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# sftlab surface mesh v1\n")
            fh.write(f"vertices {self.n_vertices}\n")
            fh.write(f"triangles {self.n_triangles}\n")
            for tri, loc in zip(self.triangles, self.local):
                coords = " ".join(repr(float(x)) for x in loc.ravel())
                fh.write(f"{tri[0]} {tri[1]} {tri[2]} {coords}\n")
            fh.write(f"cones {len(self.cone_angles)}\n")
            for v in self.cone_points:
                fh.write(f"{v} {self.cone_angles[v]!r}\n")


def read_ascii(path):
    """Read a mesh written by :meth:`SurfaceMesh.to_ascii`.

    Format: a header line, ``vertices N``, ``triangles T`` followed by T
    lines ``i j k x_i y_i x_j y_j x_k y_k`` (corner ids and their chart
    coordinates), then ``cones C`` followed by C lines ``id total_angle``.
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    n_v = int(lines[0].split()[1])
    n_t = int(lines[1].split()[1])
    rows = [ln.split() for ln in lines[2:2 + n_t]]
    tri = np.array([[int(x) for x in r[:3]] for r in rows], dtype=int).reshape(-1, 3)
    loc = np.array([[float(x) for x in r[3:]] for r in rows]).reshape(-1, 3, 2)
    n_c = int(lines[2 + n_t].split()[1])
    cones = {int(a): float(b) for a, b in (ln.split() for ln in lines[3 + n_t:3 + n_t + n_c])}
    return SurfaceMesh(n_v, tri, loc, cones)


# ------------------------------------------------------------------ builders

def torus_mesh(L, beta, h, shift=0.0):
    """Structured flat torus L x beta; ``shift`` offsets alternate rows (another triangulation)."""
    nx, ny = max(3, int(round(L / h))), max(3, int(round(beta / h)))
    b = _Builder()
    xs = np.arange(nx) * L / nx
    rows = []
    for j in range(ny):
        off = shift * (L / nx) * (j % 2)
        rows.append(b.ring(xs + off, L, j * beta / ny))
    for j in range(ny):
        top = rows[(j + 1) % ny]
        b.zip_rows(rows[j], top, L, beta / ny)
    mesh = b.mesh()
    mesh.metadata = {"kind": "torus", "L": L, "beta": beta, "h": h, "shift": shift}
    return mesh


class _Ring:
    """A cycle of vertex ids at chart height ``y`` with positions in [0, width)."""

    def __init__(self, ids, pos, width, y):
        self.ids, self.pos, self.width, self.y = list(ids), np.asarray(pos, float), width, y


class _Builder:
    def __init__(self):
        self.n = 0
        self.tris, self.local = [], []

    def new(self, k):
        ids = list(range(self.n, self.n + k))
        self.n += k
        return ids

    def ring(self, pos, width, y, ids=None):
        return _Ring(self.new(len(pos)) if ids is None else ids, pos, width, y)

    def zip_rows(self, lo, hi, width=None, dy=None):
        """Triangulate the band between two rings (lo below hi), counter-clockwise.

        Works for rings with different node counts, offsets and widths; the
        chart coordinates of the upper ring are rescaled to the lower width.
        """
        y0 = lo.y
        y1 = lo.y + dy if dy is not None else hi.y
        scale = lo.width / hi.width
        a = list(lo.pos)
        b = list(hi.pos * scale)
        na, nb = len(a), len(b)
        # start the upper ring at the node nearest the first lower node
        j0 = int(np.argmin([min(abs(x - a[0]), lo.width - abs(x - a[0])) for x in b]))
        bu = [b[(j0 + k) % nb] for k in range(nb + 1)]
        for k in range(1, nb + 1):
            while bu[k] < bu[k - 1]:
                bu[k] += lo.width
        if bu[0] - a[0] > lo.width / 2:
            bu = [x - lo.width for x in bu]
        au = a + [a[0] + lo.width]
        bid = [hi.ids[(j0 + k) % nb] for k in range(nb + 1)]
        aid = lo.ids + [lo.ids[0]]
        i = j = 0
        while i < na or j < nb:
            if j == nb or (i < na and au[i + 1] <= bu[j + 1]):
                self._tri((aid[i], aid[i + 1], bid[j]),
                          ((au[i], y0), (au[i + 1], y0), (bu[j], y1)))
                i += 1
            else:
                self._tri((aid[i], bid[j + 1], bid[j]),
                          ((au[i], y0), (bu[j + 1], y1), (bu[j], y1)))
                j += 1

    def _tri(self, ids, coords):
        self.tris.append(ids)
        self.local.append(coords)

    def mesh(self):
        return SurfaceMesh(self.n, np.array(self.tris, dtype=int).reshape(-1, 3),
                           np.array(self.local, dtype=float).reshape(-1, 3, 2))


def width_violations(graph, widths, seam=0.0):
    """Per-vertex width constraint failures as readable strings."""
    slot_edge = _slot_edges(graph)
    out = []
    for v in range(graph.n_vertices):
        wi, wj, wk = (widths[slot_edge[(v, s)]] for s in range(3))
        if abs(wi - (wj + wk - 2 * seam)) > WIDTH_TOL * max(1.0, wi):
            out.append(f"vertex {v} ({graph.kinds[v]}): width {wi} != {wj} + {wk}"
                       + (f" - 2*{seam}" if seam else ""))
    return out


def fixtures(graph, widths, eps):
    """The plumbing fixture at every vertex (wide slot first)."""
    slot_edge = _slot_edges(graph)
    return [PlumbingFixture(tuple(widths[slot_edge[(v, s)]] for s in range(3)), eps)
            for v in range(graph.n_vertices)]


def complete_widths(graph, given):
    """Solve the vertex constraints for all edge widths from a partial assignment.

    ``given`` maps edge index -> width.  Raises ConstraintError when the
    constraints are inconsistent, underdetermined or force a non-positive width.
    """
    slot_edge = _slot_edges(graph)
    rows, rhs = [], []
    for v in range(graph.n_vertices):
        r = np.zeros(graph.n_edges)
        r[slot_edge[(v, 0)]] += 1
        r[slot_edge[(v, 1)]] -= 1
        r[slot_edge[(v, 2)]] -= 1
        rows.append(r)
        rhs.append(0.0)
    for e, w in given.items():
        r = np.zeros(graph.n_edges)
        r[e] = 1
        rows.append(r)
        rhs.append(w)
    A, y = np.array(rows), np.array(rhs)
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    if np.linalg.matrix_rank(A) < graph.n_edges:
        raise ConstraintError("widths are underdetermined; fix more edges")
    if np.max(np.abs(A @ sol - y)) > 1e-10 or np.any(sol <= 0):
        raise ConstraintError("no positive widths satisfy every vertex constraint")
    return tuple(float(x) for x in sol)


def _slot_edges(graph):
    out = {}
    for e, (a, b) in enumerate(graph.edges):
        out[a] = e
        out[b] = e
    return out


def build_surface(graph: RibbonGraph, labels: SurfaceLabels, eps, h,
                  convention="mandelstam", seam=None, strict_widths=True):
    """Glue flat tubes along ``graph`` into a closed surface.

    Tube ``e`` runs from the conjugate leg (chart bottom) to the plain leg
    (chart top); ``labels.twists[e]`` rotates the top gluing by that angle.

    Parameters
    ----------
    graph : connected RibbonGraph
    labels : tube lengths t_e (>= 0) and widths l_e per edge
    eps : fixture cylinder length
    h : target mesh spacing
    convention : ``"mandelstam"`` (one 4 pi cone per vertex) or ``"split"``
        (two 3 pi cones joined by a seam of length ``seam``, default ``h``)
    strict_widths : when False, vertices whose widths violate the constraint
        are still built with tapered tubes (wide end width = sum of the
        narrow ones).  The result has the right topology but is not flat.
    """
    if not graph.is_connected:
        raise UsageError("build one surface per connected component")
    labels.check(graph)
    if eps <= 0 or h <= 0:
        raise UsageError("eps and h must be positive")
    if convention not in ("mandelstam", "split"):
        raise UsageError(f"unknown junction convention {convention!r}")
    z = 0.0 if convention == "mandelstam" else (h if seam is None else seam)
    bad = width_violations(graph, labels.widths, z)
    if bad and strict_widths:
        raise ConstraintError("; ".join(bad))
    slot_edge = _slot_edges(graph)
    twists = labels.twists or (0.0,) * graph.n_edges
    b = _Builder()

    # narrow slots keep their edge width; the wide slot width follows from the junction
    def seg(length):
        return max(3, int(round(length / h)))

    junction = {}   # (v, slot) -> (ids, positions, circumference) in traversal order
    cones = {}
    for v in range(graph.n_vertices):
        w1 = labels.widths[slot_edge[(v, 1)]]
        w2 = labels.widths[slot_edge[(v, 2)]]
        a1, a2 = w1 - z, w2 - z
        if min(a1, a2) <= 0:
            raise ConstraintError(f"vertex {v}: seam longer than a narrow width")
        n1, n2 = seg(a1), seg(a2)
        if z == 0:
            P = Q = b.new(1)[0]
            cones[P] = 4 * math.pi
        else:
            P, Q = b.new(2)
            cones[P] = cones[Q] = 3 * math.pi
        in1, in2 = b.new(n1 - 1), b.new(n2 - 1)
        p1 = [k * a1 / n1 for k in range(n1)]
        p2 = [a1 + k * a2 / n2 for k in range(n2)]
        junction[(v, 0)] = ([P] + in1 + [Q] + in2, p1 + p2, a1 + a2)
        # narrow circles: the arc, closed by the seam when present
        if z == 0:
            junction[(v, 1)] = ([P] + in1, p1, a1)
            junction[(v, 2)] = ([Q] + in2, [p - a1 for p in p2], a2)
        else:
            junction[(v, 1)] = ([P] + in1 + [Q], p1 + [a1], a1 + z)
            junction[(v, 2)] = ([Q] + in2 + [P], [p - a1 for p in p2] + [a2], a2 + z)

    for e, ((u, su), (w, sw)) in enumerate(graph.edges):
        length = labels.lengths[e] + 2 * eps
        n_rows = max(2, int(math.ceil(length / h)))
        ys = np.linspace(0.0, length, n_rows + 1)
        # bottom end (y=0) induces +x on its boundary, top end -x; gluing to a
        # junction traversed in +x must reverse orientation
        bottom = _end_ring(junction[(u, su)], ys[0], wide=su == 0, at_bottom=True)
        top = _end_ring(junction[(w, sw)], ys[-1], wide=sw == 0, at_bottom=False)
        if twists[e]:
            top = _rotate(top, twists[e] / (2 * math.pi) * top.width)
        rings = [bottom]
        half = n_rows // 2
        for r in range(1, n_rows):
            src = bottom if r <= half else top
            rings.append(b.ring(src.pos, src.width, ys[r]))
        rings.append(top)
        for lo, hi in zip(rings[:-1], rings[1:]):
            b.zip_rows(lo, hi)

    mesh = b.mesh()
    mesh.cone_angles = cones
    mesh.metadata = {"kind": "graph", "graph": graph.to_json(), "lengths": list(labels.lengths),
                     "widths": list(labels.widths), "twists": list(twists), "eps": eps, "h": h,
                     "convention": convention, "seam": z, "flat": not bad}
    return mesh


def _rotate(ring, shift):
    """Rotate a ring by ``shift`` along its circle, keeping positions ascending."""
    pos = (ring.pos + shift) % ring.width
    order = np.argsort(pos, kind="stable")
    return _Ring([ring.ids[i] for i in order], pos[order], ring.width, ring.y)


def _end_ring(junction, y, wide, at_bottom):
    """Ring of a tube end glued to a junction circle with reversed orientation.

    Wide circles are traversed in their own +x direction.  Narrow circles
    are glued to arcs of the wide circle, which itself sits at some tube end;
    the junction stores everything in traversal order, and every tube end is
    oriented so that its induced boundary direction opposes the traversal of
    the partner it is glued to.  Wide ends use +x = traversal at the bottom
    and the reverse at the top; narrow ends the opposite.
    """
    ids, pos, width = junction
    pos = np.asarray(pos, float)
    forward = at_bottom == wide
    if forward:
        return _Ring(ids, pos, width, y)
    # mirror: x -> width - x keeps node 0 in place
    rev_ids = [ids[0]] + ids[:0:-1]
    rev_pos = np.concatenate([[0.0], width - pos[:0:-1]])
    return _Ring(rev_ids, rev_pos, width, y)


def area_formula(graph, labels, eps):
    """Sum of tube areas t_e l_e plus fixture areas eps (l_i + l_j + l_k)."""
    return float(sum(t * w for t, w in zip(labels.lengths, labels.widths))
                 + sum(f.area for f in fixtures(graph, labels.widths, eps)))


def rebuild(mesh, h):
    """The same surface triangulated at spacing ``h``."""
    md = mesh.metadata
    if md.get("kind") == "torus":
        return torus_mesh(md["L"], md["beta"], h, md.get("shift", 0.0))
    if md.get("kind") == "graph":
        g = RibbonGraph.from_json(md["graph"])
        lab = SurfaceLabels(tuple(md["lengths"]), tuple(md["widths"]), tuple(md["twists"]))
        return build_surface(g, lab, md["eps"], h, md["convention"],
                             md["seam"] if md["convention"] == "split" else None,
                             strict_widths=md["flat"])
    raise UsageError("mesh carries no builder metadata")


__all__ = ["PlumbingFixture", "SurfaceLabels", "SurfaceMesh", "area_formula", "build_surface",
           "complete_widths", "fixtures", "labels_from_times", "read_ascii", "rebuild", "torus_mesh",
           "width_violations"]
