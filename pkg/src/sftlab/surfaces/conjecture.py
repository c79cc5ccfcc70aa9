"""Compare graph activities with determinant powers of the glued surfaces.

For each point (m, v) of a schedule the harness computes

* ``F``: the activity of a connected graph at fixed vertex times and fixed
  widths, integrated over the width of one chosen edge (the direction the
  vertex smearing of width v acts on, so ``F`` grows as v shrinks);
* ``lhs = v m^d F`` and ``rhs = det(-Laplace + m^2)^{-d/2}`` on the surface
  glued from the same labels with the constraint-satisfying widths;
* their ratio.

No target value is asserted; the table is evidence only.  The only checks
are finiteness, positivity and the sign of the v-trend of ``F``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .. import graphs
from ..errors import UsageError
from .determinant import DetSpec, logdet_regularized
from .mesh import build_surface, complete_widths, labels_from_times


@dataclass(frozen=True)
class ScanRow:
    m: float
    v: float
    F: float
    F_imag: float
    lhs: float
    log_det: float
    rhs: float
    ratio: float


@dataclass
class ScanResult:
    rows: list
    trend: dict         # per mass: F increases as v decreases
    surface: dict

    @property
    def finite_positive(self):
        return all(math.isfinite(x) and x > 0 for r in self.rows for x in (r.lhs, r.rhs))

    @property
    def trend_ok(self):
        return all(self.trend.values())

    def to_json(self):
        return {"rows": [asdict(r) for r in self.rows], "trend": {str(k): v for k, v in self.trend.items()},
                "surface": self.surface, "finite_positive": self.finite_positive,
                "trend_ok": self.trend_ok}


def default_scan_edge(graph):
    """First edge attached to a wide slot at both ends (the theta graph's wide edge)."""
    for e, ((_, a), (_, b)) in enumerate(graph.edges):
        if a == 0 and b == 0:
            return e
    for e, ((_, a), (_, b)) in enumerate(graph.edges):
        if a == 0 or b == 0:
            return e
    raise UsageError("graph has no wide edge")


def smeared_activity(graph, model, times, widths, edge):
    """Activity integrated over the width of ``edge`` on the model's cell grid."""
    g = model.geometry.field
    total = 0.0
    for cell in range(model.n_cells):
        w = list(widths)
        w[edge] = g.L0 + (cell + 0.5) * model.dl
        labels = graphs.EdgeLabels(tuple(times), tuple(w))
        total += graphs.activity_f(graph, labels, model).value * model.dl
    return complex(total)


def conjecture_scan(graph, times, widths, field_params, vparams, masses, vs,
                    h=0.05, det_spec=DetSpec(), edge=None, kappa=None):
    """Tabulate v m^d F against det^{-d/2} over the (m, v) schedule.

    Parameters
    ----------
    graph : connected RibbonGraph
    times : vertex times (within [-T, T])
    widths : edge widths; the entry of ``edge`` is ignored for the activity
        (it is integrated over) and recomputed from the vertex constraints
        for the surface
    masses, vs : decreasing schedules
    h : surface mesh spacing
    """
    if not graph.is_connected:
        raise UsageError("the comparison needs a connected graph")
    if list(masses) != sorted(masses, reverse=True) or list(vs) != sorted(vs, reverse=True):
        raise UsageError("mass and v schedules must be decreasing")
    edge = default_scan_edge(graph) if edge is None else edge
    given = {e: w for e, w in enumerate(widths) if e != edge}
    surf_widths = complete_widths(graph, given)
    labels = labels_from_times(graph, times, surf_widths)
    mesh = build_surface(graph, labels, vparams.eps, h)
    d = field_params.d
    rows, trend = [], {}
    for m in masses:
        det = logdet_regularized(mesh, m, det_spec)
        rhs = math.exp(-0.5 * d * det.log_det)
        fs = []
        for v in vs:
            model = graphs.feynman_model(replace(field_params, m=m), replace(vparams, v=v),
                                         kappa=kappa)
            F = smeared_activity(graph, model, times, widths, edge)
            fs.append(F.real)
            lhs = v * m ** d * F.real
            rows.append(ScanRow(m, v, F.real, F.imag, lhs, det.log_det, rhs,
                                lhs / rhs if rhs else math.inf))
        trend[m] = bool(np.all(np.diff(fs) > 0))
    surface = {"widths": list(surf_widths), "lengths": list(labels.lengths), "eps": vparams.eps,
               "h": h, "area": mesh.area, "euler_characteristic": mesh.euler_characteristic(),
               "n_vertices": mesh.n_vertices, "cones": len(mesh.cone_angles)}
    return ScanResult(rows, trend, surface)


def theta_graph():
    """The connected n=1 graph whose wide legs are joined to each other."""
    for g in graphs.enumerate_graphs(1):
        if g.is_connected and any(a[1] == 0 and b[1] == 0 for a, b in g.edges) \
                and not g.has_self_loop:
            return g
    raise RuntimeError("theta graph missing from the n=1 enumeration")


__all__ = ["ScanResult", "ScanRow", "conjecture_scan", "default_scan_edge", "smeared_activity",
           "theta_graph"]
