"""Command-line entry point: ``qgdefect <command> --config run.json --out DIR``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import constructions as C
from . import output as out
from . import spectral, verify
from .config import ConfigError
from .energy import SolverOptions, el_residual, lagrange_multiplier, minimize
from .experiments import Setup, critical_mass, energy_curve, qstar_scan
from .fem import assemble, mesh, node_distances

EXIT_CONFIG = 2
EXIT_FAILURE = 3


class RunFailure(RuntimeError):
    pass


# ------------------------------------------------------------ helpers

def _grid(x) -> list[float]:
    return [float(v) for v in (x if isinstance(x, list) else [x])]


def _setup(cfg) -> Setup:
    g, spec = cfgmod.build_graph(cfg)
    m = cfg["mesh"]
    if m["lumped"]:
        forms = assemble(mesh(g, m["h"]), m["truncation"], lumped=True)
        return Setup(g, m["h"], m["truncation"], spec, _forms=forms)
    return Setup(g, m["h"], m["truncation"], spec)


def _opts(cfg, seed) -> SolverOptions:
    s = dict(cfg["solver"])
    s["widths"] = tuple(s["widths"])
    return SolverOptions(seed=seed, **s)


class Run:
    """Accumulates the artifacts of one command."""

    def __init__(self, command, cfg, args):
        self.command, self.cfg, self.args = command, cfg, args
        self.dir = Path(args.out)
        self.name = cfg["output"]["name"]
        self.written: list[Path] = []
        self.resolved = {**cfg, "seed": args.seed, "threads": args.threads, "format": args.format}

    def json(self, result):
        doc = out.envelope(self.command, self.resolved, result, __version__)
        self.written.append(out.write(self.dir / f"{self.name}.json", out.dumps(doc)))

    def csv(self, rows, suffix="", columns=None):
        text = out.csv_text(rows, out.provenance_lines(self.resolved, __version__), columns)
        self.written.append(out.write(self.dir / f"{self.name}{suffix}.csv", text))

    def svg(self, series, suffix="", **kw):
        meta = out.dumps({"version": __version__, "config": self.resolved})
        self.written.append(out.write(self.dir / f"{self.name}{suffix}.svg", out.svg_plot(series, metadata=meta, **kw)))

    @property
    def fmt(self):
        return self.args.format


# ------------------------------------------------------------ commands

def _profile_rows(forms, u):
    g = forms.graph
    m = forms.mesh
    full = forms.expand(np.asarray(u))
    anchor = g.defects[0] if g.defects else 0
    d = node_distances(m, anchor)
    edge = m.node_edge
    rows = []
    for i in range(m.n_dofs):
        r = {"node": i, "edge": int(edge[i]), "t": float(m.node_t[i]), "distance": float(d[i]),
             "value": float(full[i])}
        if m.node_xy is not None:
            r["x"], r["y"] = float(m.node_xy[i, 0]), float(m.node_xy[i, 1])
        rows.append(r)
    return rows


def cmd_solve(run: Run):
    cfg = run.cfg
    s = _setup(cfg)
    forms = s.forms()
    opts = _opts(cfg, run.args.seed)
    results = []
    for q in _grid(cfg["q"]):
        for mu in _grid(cfg["mu"]):
            r = minimize(forms, q, mu, opts=opts)
            if not np.all(np.isfinite(r.u.values)):
                raise RunFailure(f"solver produced non-finite values at q={q}, mu={mu}")
            lam = lagrange_multiplier(forms, r.u.values, q, None, mu)
            rec = {"q": q, "mu": mu, **r.to_record(), "lambda": lam,
                   "el_residual": el_residual(forms, r.u.values, lam, q),
                   "candidates": r.candidates, "setup": s.provenance()}
            if cfg["output"]["profile"] or run.fmt in ("csv", "svg"):
                rec["function"] = r.u.to_record()
            results.append((rec, r))
    single = len(results) == 1
    run.json(results[0][0] if single else [rec for rec, _ in results])
    if run.fmt == "csv" or cfg["output"]["profile"]:
        for k, (rec, r) in enumerate(results):
            run.csv(_profile_rows(forms, r.u.values), "_profile" if single else f"_profile{k}")
    if run.fmt == "svg":
        series = {}
        for rec, r in results:
            rows = sorted(_profile_rows(forms, r.u.values), key=lambda x: x["distance"])
            series[f"q={rec['q']:g} mu={rec['mu']:g}"] = ([x["distance"] for x in rows], [x["value"] for x in rows])
        run.svg(series, xlabel="distance to defect", ylabel="u", title="ground-state profile")
    return {"energy": [rec["energy"] for rec, _ in results]}


def cmd_sweep(run: Run):
    cfg = run.cfg
    s = _setup(cfg)
    opts = _opts(cfg, run.args.seed)
    curves = []
    for q in _grid(cfg["q"]):
        cur = energy_curve(s, q, _grid(cfg["mu"]), opts, cfg["threshold"]["families"], run.args.threads)
        curves.append(cur)
    rows = [{"q": c.q, **r} for c in curves for r in c.rows()]
    run.json({"setup": s.provenance(),
              "curves": [{"q": c.q, "concave": c.concave, "ratio_monotone": c.ratio_monotone,
                          "points": c.points} for c in curves]})
    if run.fmt == "csv":
        run.csv(rows, columns=["q", "mu", "energy", "window_energy", "lambda", "source", "certified",
                               "status", "residual"])
    if run.fmt == "svg":
        run.svg({f"q={c.q:g}": ([p["mu"] for p in c.points], [p["energy"] for p in c.points]) for c in curves},
                xlabel="mass", ylabel="energy upper bound", title="energy curve")
    return {"points": len(rows)}


def _threshold_args(cfg):
    t = cfg["threshold"]
    return dict(bracket=tuple(t["bracket"]), rel_tol=t["rel_tol"], families=t["families"])


def cmd_threshold(run: Run):
    cfg = run.cfg
    s = _setup(cfg)
    opts = _opts(cfg, run.args.seed)
    t = cfg["threshold"]
    ests = [critical_mass(s, q, opts=opts, mu_min=t["mu_min"], mu_max=t["mu_max"], **_threshold_args(cfg))
            for q in _grid(cfg["q"])]
    recs = [e.to_record() for e in ests]
    run.json(recs[0] if len(recs) == 1 else recs)
    if run.fmt == "csv":
        rows = [{"q": e.q, **ev} for e in ests for ev in e.evaluations]
        run.csv(rows, columns=["q", "mu", "certified", "energy", "source"])
    if run.fmt == "svg":
        run.svg({f"q={e.q:g}": (sorted(ev["mu"] for ev in e.evaluations),
                                [ev["energy"] for ev in sorted(e.evaluations, key=lambda v: v["mu"])])
                 for e in ests}, xlabel="mass", ylabel="best energy bound", title="threshold bisection", logx=True)
    return {"estimates": [e.estimate for e in ests]}


def cmd_qscan(run: Run):
    cfg = run.cfg
    s = _setup(cfg)
    opts = _opts(cfg, run.args.seed)
    t = cfg["threshold"]
    res = qstar_scan(s, _grid(cfg["q"]), opts=opts, threads=run.args.threads, mu_min=t["mu_min"],
                     **_threshold_args(cfg))
    rows = [e.to_record() for e in res["estimates"]]
    run.json({k: (rows if k == "estimates" else v) for k, v in res.items()})
    if run.fmt == "csv":
        run.csv(rows, columns=["q", "mu_lo", "mu_hi", "estimate", "status", "delta"])
    if run.fmt == "svg":
        pts = [(r["q"], r["estimate"]) for r in rows if r["estimate"] is not None]
        run.svg({"threshold": ([p[0] for p in pts], [p[1] for p in pts])}, xlabel="q",
                ylabel="critical mass estimate", title="q scan")
    return {"transition_after": res.get("transition_after")}


def cmd_spectrum(run: Run):
    cfg = run.cfg
    s = _setup(cfg)
    forms = s.forms()
    sp = cfg["spectrum"]
    v = sp["vertex"]
    if isinstance(v, list):
        v = tuple(v)
    base = spectral.bottom_eigen(forms, sp["tol"])
    rows = []
    for a in _grid(sp["alpha"]):
        r = spectral.delta_eigen(forms, a, v, sp["tol"])
        rows.append({"alpha": a, **r.to_record()})
    rec = {"setup": s.provenance(), "bottom": base.to_record(), "delta": rows[0] if len(rows) == 1 else rows}
    if len(rows) == 1:
        rec["lambda"] = rows[0]["lambda"]
    run.json(rec)
    if run.fmt == "csv":
        run.csv(rows, columns=["alpha", "lambda", "residual", "iterations", "shift", "below", "vertex"])
    if run.fmt == "svg":
        run.svg({"lowest eigenvalue": ([r["alpha"] for r in rows], [r["lambda"] for r in rows])},
                xlabel="alpha", ylabel="lambda", title="delta-potential eigenvalue")
    return {"lambda": [r["lambda"] for r in rows]}


_FAMILY_FN = {
    "star_exp": C.star_exp_family, "star_exponential": C.star_exponential, "star_soliton": C.star_soliton,
    "tent": C.tent_family, "zper_exp": C.zper_exp_family, "grid_exp": C.grid_exp_family,
    "grid_log": C.grid_log_family, "appendix_loglinear": C.appendix_loglinear,
    "appendix_plateau": C.appendix_plateau,
}


def cmd_construct(run: Run):
    cfg = run.cfg
    cc = cfg["construct"]
    fn = _FAMILY_FN[cc["family"]]
    params = dict(cc.get("params", {}))
    forms = None
    if cc.get("attach", False) or cc["family"] == "appendix_plateau":
        if "graph" not in cfg:
            raise ConfigError("this family needs a graph", ["graph"])
        forms = _setup(cfg).forms()
    sweep = cc.get("sweep")
    values = sweep["values"] if sweep else [None]
    rows = []
    for val in values:
        p = dict(params)
        if sweep:
            p[sweep["name"]] = val
        try:
            fe = fn(**p, forms=forms) if forms is not None else fn(**p)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for {cc['family']}: {exc}", ["construct", "params"]) from None
        rec = fe.to_record()
        kin = fe.extras.get("kinetic")
        if kin is not None and fe.closed_form_mass:
            rec["kinetic_over_mass"] = kin / fe.closed_form_mass
        if fe.function is not None:
            qv = p.get("q")
            quad = fe.quadrature(qv)
            rec.update({f"quadrature_{k}": v for k, v in quad.items()})
        rows.append(rec)
    run.json(rows[0] if len(rows) == 1 else rows)
    if run.fmt == "csv":
        run.csv(rows)
    if run.fmt == "svg" and sweep:
        run.svg({"closed-form energy": (values, [r["closed_form_energy"] for r in rows])},
                xlabel=sweep["name"], ylabel="energy", title=cc["family"])
    return {"members": len(rows)}


def cmd_verify(run: Run):
    groups = run.cfg["verify"]["groups"]
    unknown = sorted(set(groups) - set(verify.GROUPS))
    if unknown:
        raise ConfigError(f"unknown verify groups {unknown}", ["verify", "groups"])
    checks = verify.run(groups or None, seed=run.args.seed,
                        progress=lambda c: print(c.line(), file=sys.stderr, flush=True))
    recs = [c.to_record() for c in checks]
    for r in recs:
        r.pop("seconds")     # timing would break byte-identical reruns
    failed = [f"{c.group}.{c.name}" for c in checks if not c.passed]
    run.json({"checks": recs, "passed": not failed, "failed": failed})
    if run.fmt == "csv":
        run.csv([{k: r[k] for k in ("group", "name", "passed")} for r in recs])
    if failed:
        raise RunFailure(f"{len(failed)} invariant check(s) failed: {', '.join(failed)}")
    return {"checks": len(checks)}


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "threshold": cmd_threshold, "qscan": cmd_qscan,
            "spectrum": cmd_spectrum, "construct": cmd_construct, "verify": cmd_verify}


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qgdefect", description=__doc__)
    p.add_argument("--version", action="version", version=f"qgdefect {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--format", choices=("json", "csv", "svg"), default="json",
                        help="extra artifact next to the JSON record")
    return p


def _error(args, kind, exc, path=None) -> dict:
    doc = {"error": kind, "message": str(exc), "command": args.command, "version": __version__}
    if path is not None:
        doc["path"] = [str(x) for x in path]
    return doc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        args.threads = 1
    try:
        raw = cfgmod.load(args.config) if args.config else {}
        cfg = cfgmod.resolve(raw, args.command)
        run = Run(args.command, cfg, args)
        COMMANDS[args.command](run)
    except ConfigError as exc:
        err = _error(args, "config", exc, exc.path)
        code = EXIT_CONFIG
    except RunFailure as exc:
        err = _error(args, "failure", exc)
        code = EXIT_FAILURE
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        err = _error(args, "failure", f"{type(exc).__name__}: {exc}")
        code = EXIT_FAILURE
    else:
        for pth in run.written:
            print(pth)
        return 0
    text = out.dumps(err)
    sys.stderr.write(text)
    try:
        out.write(Path(args.out) / "error.json", text)
    except OSError:
        pass
    return code


if __name__ == "__main__":
    sys.exit(main())
