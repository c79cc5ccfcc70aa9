"""Command-line experiment runner.

Every subcommand reads the YAML configuration (defaults < ``--config`` <
``--set``), writes CSV/JSON artifacts into the output directory and a
``manifest.json`` listing them with checksums.  Errors are reported as one
JSON object on stderr (and ``error.json``) with exit codes 2 (configuration
or domain), 3 (numerics) and 4 (capacity).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config, fock, graphs, interaction, measure
from .errors import SFTError, UsageError

COMMANDS = ("fock-dump", "twopoint", "fk-check", "vertex", "partition", "cauchy", "graphs",
            "moment", "activity", "surface", "spectrum", "detlap", "conjecture")


class Run:
    """Output directory plus the list of artifacts written so far."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["output"]["dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.summary = {}

    def path(self, name):
        p = self.out / name
        self.files.append(p)
        return p

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(x) for x in row])

    def json(self, name, data):
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1, sort_keys=True, default=_jsonable)
            fh.write("\n")

    def manifest(self, started):
        entries = []
        for p in self.files:
            entries.append({"file": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                            "bytes": p.stat().st_size})
        data = {"command": self.command, "config_hash": config.config_hash(self.cfg),
                "code_version": __version__, "started": started,
                "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "files": entries,
                "config": self.cfg, "summary": self.summary}
        with open(self.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1, default=_jsonable)
            fh.write("\n")
        return data


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


# ------------------------------------------------------------------ commands

def cmd_fock_dump(run):
    cfg = run.cfg
    g, f = cfg["global"], cfg["fock"]
    basis = fock.enumerate_basis(g["d"], g["m"], g["L0"], f["M"])
    fock.dump_basis(basis, run.path("basis.json"))
    rows = []
    for M in f["trace_M"]:
        b = fock.enumerate_basis(g["d"], g["m"], f["ell"], M)
        tr = float(fock.heat_operator(b, f["ell"], g["m"], f["t"]).diag.sum())
        oracle = fock.heat_trace_oracle(g["d"], f["ell"], g["m"], f["t"], b.K)
        rows.append((M, b.dim, b.K, tr, oracle, (oracle - tr) / oracle))
    run.csv("heat_trace.csv", ["M", "dim", "K", "trace", "oracle", "rel_gap"], rows)
    run.summary = {"dim": basis.dim, "K": basis.K, "last_rel_gap": rows[-1][-1]}


def cmd_twopoint(run):
    cfg = run.cfg
    p = config.field_params(cfg)
    tp = cfg["twopoint"]
    state = fock.OccupationState(((tp["k"], 1, 1),))
    samples = measure.sample_batch(p, cfg["measure"]["n_samples"], workers=cfg["global"]["workers"])
    est = measure.two_point_estimate(samples, state, 1.0, tp["t1"], state, 1.0, tp["t2"])
    exact = measure.two_point_exact(p, state, 1.0, tp["t1"], state, 1.0, tp["t2"])
    sigmas = abs(est.value - exact) / est.stderr if est.stderr else math.inf
    run.csv("twopoint.csv", ["k", "t1", "t2", "estimate_re", "estimate_im", "stderr", "n",
                             "analytic", "n_sigma"],
            [(tp["k"], tp["t1"], tp["t2"], est.value.real, est.value.imag, est.stderr, est.n,
              exact.real, sigmas)])
    run.summary = {"estimate": est.value.real, "stderr": est.stderr, "analytic": exact.real,
                   "n_sigma": sigmas, "within_3sigma": bool(est.within(exact))}
    print(f"two-point estimate {est.value.real:.6f} +- {est.stderr:.6f}, analytic {exact.real:.6f}")


def cmd_fk_check(run):
    fk = run.cfg["feynman_kac"]
    lat = measure.LatticeSpec(n_x=fk["n_x"], n_t=fk["n_t"], b=fk["b"])
    r = measure.feynman_kac_2d(fk["ell"], run.cfg["global"]["m"], fk["k"], fk["k2"], fk["t1"],
                               fk["t2"], lattice=lat, n_samples=fk["n_samples"],
                               seed=run.cfg["global"]["seed"])
    run.csv("feynman_kac.csv", ["estimate_re", "estimate_im", "stderr", "n", "lattice_value",
                                "continuum_value", "lattice_bias", "passes"],
            [(r.estimate.value.real, r.estimate.value.imag, r.estimate.stderr, r.estimate.n,
              r.lattice_value.real, r.continuum_value.real, r.lattice_bias.real,
              int(r.passes()))])
    run.summary = {"passes": bool(r.passes()), "estimate": r.estimate.value.real,
                   "continuum": r.continuum_value.real}


def cmd_vertex(run):
    cfg = run.cfg
    p, vp = config.field_params(cfg), config.vertex_params(cfg)
    batch = measure.sample_batch(p, cfg["vertex"]["n_samples"], workers=cfg["global"]["workers"])
    value = interaction.interaction_I(batch, vp)
    first = measure.sample_field(p, 0)
    ref = interaction.refinement_study(first, vp, tuple(cfg["vertex"]["refine"]))
    interaction.write_vertex_json(run.path("vertex.json"), value, ref)
    run.summary = {"mean": value.value, "stderr": value.stderr, "refinement_order": ref[1]}


def cmd_partition(run):
    cfg = run.cfg
    pts = interaction.partition_Z(cfg["partition"]["lambdas"], cfg["partition"]["n_samples"],
                                  config.field_params(cfg), config.vertex_params(cfg),
                                  workers=cfg["global"]["workers"])
    run.csv("partition.csv", ["lambda", "re_Z", "im_Z", "stderr"],
            [(p.lam, p.Z.real, p.Z.imag, p.stderr) for p in pts])
    run.summary = {"max_abs_Z": max(abs(p.Z) for p in pts)}


def cmd_cauchy(run):
    cfg = run.cfg
    sched = cfg["cauchy"]["schedule"]
    top = max(M for M, _ in sched), max(k for _, k in sched)
    field = config.field_params(cfg, M=top[0], kappa=top[1])
    steps = interaction.cauchy_schedule(sched, cfg["cauchy"]["n_samples"], field,
                                        config.vertex_params(cfg),
                                        workers=cfg["global"]["workers"])
    rows = []
    for s in steps:
        drop = (s.drop.value.real, s.drop.stderr) if s.drop else ("", "")
        rows.append((*s.cut_a, *s.cut_b, s.estimate.value.real, s.estimate.stderr, *drop))
    run.csv("cauchy.csv", ["M", "kappa", "M2", "kappa2", "mean_sq_diff", "stderr", "drop",
                           "drop_stderr"], rows)
    run.summary = {"monotone_3sigma": interaction.cauchy_trend(steps)}


def _select_graph(spec, n):
    if spec in ("theta", None):
        from .surfaces import theta_graph
        return theta_graph()
    gs = graphs.enumerate_graphs(n)
    if not isinstance(spec, int) or not 0 <= spec < len(gs):
        raise UsageError(f"graph must be 'theta' or an index below {len(gs)}")
    return gs[spec]


def cmd_graphs(run):
    n = run.cfg["graphs"]["n"]
    gs = graphs.enumerate_graphs(n)
    graphs.write_graphs_json(run.path(f"graphs_n{n}.json"), gs)
    run.json(f"weights_n{n}.json", graphs.weight_table(n))
    run.summary = {"n": n, "count": len(gs), "connected": sum(g.is_connected for g in gs)}


def _model(cfg, kappa=None):
    return graphs.feynman_model(config.field_params(cfg), config.vertex_params(cfg), kappa=kappa,
                                max_intermediate=cfg["graphs"]["max_intermediate"])


def cmd_moment(run):
    cfg = run.cfg
    order = cfg["graphs"]["order"]
    res = graphs.wick_moment(order, _model(cfg), workers=cfg["global"]["workers"])
    row = [order, res.value, res.imag_residual]
    if cfg["graphs"]["mc"]:
        p, vp = config.field_params(cfg), config.vertex_params(cfg)
        vals = []
        n = cfg["measure"]["n_samples"]
        for lo in range(0, n, 1000):
            batch = measure.sample_batch(p, min(1000, n - lo), lo, cfg["global"]["workers"])
            vals.append(np.atleast_1d(interaction.interaction_values(batch, vp)))
        est = measure.batch_means(np.concatenate(vals).real ** order)
        row += [est.value.real, est.stderr, est.n]
    else:
        row += ["", "", ""]
    run.csv("moment.csv", ["order", "graph_value", "imag_residual", "mc_estimate", "mc_stderr",
                           "mc_n"], [row])
    run.summary = {"graph_value": res.value, "n_graphs": len(res.terms)}


def cmd_activity(run):
    cfg = run.cfg
    a = cfg["activity"]
    g = _select_graph(a["graph"], a["n"])
    kappa = math.inf if a["kappa"] in ("inf", math.inf) else a["kappa"]
    res = graphs.activity_f(g, graphs.EdgeLabels(tuple(a["times"]), tuple(a["widths"])),
                            _model(cfg, kappa))
    run.json("activity.json", {"graph": g.to_json(), "value": res.value, "params": res.params})
    run.summary = {"value": res.value}


def _surface(cfg):
    from .surfaces import mesh as sm
    s = cfg["surfaces"]
    if s["graph"] == "torus":
        return sm.torus_mesh(s["L"], s["beta"], s["h"])
    g = _select_graph(s["graph"], 1)
    labels = sm.labels_from_times(g, s["times"], s["widths"], tuple(s["twists"]))
    return sm.build_surface(g, labels, cfg["vertex"]["eps"], s["h"], s["convention"],
                            strict_widths=s["strict_widths"])


def cmd_surface(run):
    msh = _surface(run.cfg)
    msh.to_ascii(run.path("surface.mesh"))
    summary = {"euler_characteristic": msh.euler_characteristic(), "area": msh.area,
               "n_vertices": msh.n_vertices, "n_triangles": msh.n_triangles,
               "cone_angles_over_pi": [msh.cone_angles[v] / math.pi for v in msh.cone_points],
               "violations": msh.violations(flat=msh.metadata.get("flat", True)),
               "metadata": msh.metadata}
    run.json("surface.json", summary)
    run.summary = {k: summary[k] for k in ("euler_characteristic", "area", "violations")}


def cmd_spectrum(run):
    from .surfaces import fem
    s = run.cfg["surfaces"]
    m = run.cfg["global"]["m"]
    msh = _surface(run.cfg)
    lam = fem.fem_spectrum(msh, m, s["count"])
    exact = fem.torus_eigenvalues(s["L"], s["beta"], m, s["count"]) \
        if s["graph"] == "torus" else [""] * len(lam)
    weyl = fem.weyl_ratio(lam, msh.area, m)
    run.csv("spectrum.csv", ["index", "eigenvalue", "exact", "weyl_ratio"],
            [(i, x, e, w if np.isfinite(w) else "") for i, (x, e, w) in
             enumerate(zip(lam, exact, weyl))])
    run.summary = {"count": len(lam), "first": float(lam[0])}


def cmd_detlap(run):
    from .surfaces import determinant as dt
    s = run.cfg["surfaces"]
    m = run.cfg["global"]["m"]
    spec = dt.DetSpec(u0=s["u0"], cutoff=s["cutoff"], constant=s["constant"],
                      richardson=s["richardson"])
    msh = _surface(run.cfg)
    res = dt.logdet_regularized(msh, m, spec)
    oracle = dt.torus_logdet_modes(s["L"], s["beta"], m) if s["graph"] == "torus" else ""
    run.csv("detlap.csv", ["m", "log_det", "n_eigs", "oracle", "rel_error"],
            [(m, res.log_det, res.n_eigs, oracle,
              abs(res.log_det - oracle) / abs(oracle) if oracle != "" else "")])
    run.json("detlap.json", {"log_det": res.log_det, "n_eigs": res.n_eigs,
                             "report": res.report, "oracle": oracle})
    run.summary = {"log_det": res.log_det, "oracle": oracle}


def cmd_conjecture(run):
    from .surfaces import conjecture as cj
    cfg = run.cfg
    s, c = cfg["surfaces"], cfg["conjecture"]
    g = _select_graph(s["graph"], 1)
    res = cj.conjecture_scan(g, s["times"], s["widths"], config.field_params(cfg, dl=c["dl"]),
                             config.vertex_params(cfg), c["masses"], c["vs"], h=s["h"])
    run.csv("conjecture.csv", ["m", "v", "F", "F_imag", "lhs", "log_det", "rhs", "ratio"],
            [(r.m, r.v, r.F, r.F_imag, r.lhs, r.log_det, r.rhs, r.ratio) for r in res.rows])
    run.json("conjecture.json", res.to_json())
    run.summary = {"finite_positive": res.finite_positive, "trend_ok": res.trend_ok}


HANDLERS = {
    "fock-dump": cmd_fock_dump, "twopoint": cmd_twopoint, "fk-check": cmd_fk_check,
    "vertex": cmd_vertex, "partition": cmd_partition, "cauchy": cmd_cauchy,
    "graphs": cmd_graphs, "moment": cmd_moment, "activity": cmd_activity,
    "surface": cmd_surface, "spectrum": cmd_spectrum, "detlap": cmd_detlap,
    "conjecture": cmd_conjecture,
}


# ------------------------------------------------------------------ entry point

def parser():
    ap = argparse.ArgumentParser(prog="sftlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("validate",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one dotted config key (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help="output directory")
        if name in ("graphs", "moment"):
            sp.add_argument("--n", type=int, help="graph order n (vertices 2n)")
        if name == "moment":
            sp.add_argument("--order", type=int)
        if name == "partition":
            sp.add_argument("--lambdas", type=float, nargs="+")
    return ap


def _fail(exc, out_dir=None):
    code = getattr(exc, "exit_code", 1)
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if hasattr(exc, "violations"):
        err["violations"] = exc.violations
    if getattr(exc, "diagnostics", None):
        err["diagnostics"] = exc.diagnostics
    text = json.dumps(err, default=_jsonable, ensure_ascii=False)
    print(text, file=sys.stderr)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            (Path(out_dir) / "error.json").write_text(text + "\n", encoding="utf-8")
        except OSError:
            pass
    return code


def main(argv=None):
    args = parser().parse_args(argv)
    overrides = list(args.set)
    if getattr(args, "n", None) is not None:
        overrides.append(f"graphs.n={args.n}")
    order = getattr(args, "order", None)
    if args.command == "moment" and order is None and args.n is not None:
        order = 2 * args.n
    if order is not None:
        overrides.append(f"graphs.order={order}")
    if getattr(args, "lambdas", None):
        overrides.append(f"partition.lambdas={json.dumps(args.lambdas)}")
    out_dir = args.out
    try:
        cfg = config.build(args.config, overrides, args.seed, args.workers, args.out)
        out_dir = cfg["output"]["dir"]
        if args.command == "validate":
            bad = config.violations(cfg)
            print(json.dumps({"violations": bad, "config_hash": config.config_hash(cfg)},
                             indent=1, ensure_ascii=False))
            return 2 if bad else 0
        config.check(cfg)
        started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        run = Run(cfg, args.command)
        HANDLERS[args.command](run)
        run.manifest(started)
        print(json.dumps({"command": args.command, "out": str(run.out), "summary": run.summary},
                         default=_jsonable))
        return 0
    except SFTError as exc:
        return _fail(exc, out_dir)
    except MemoryError as exc:
        exc.exit_code = 4
        return _fail(exc, out_dir)


if __name__ == "__main__":
    sys.exit(main())
