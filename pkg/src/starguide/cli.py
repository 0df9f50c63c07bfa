"""Command-line front end.

Each subcommand reads a TOML config and reads/writes a shared artifact
directory, so long sweeps can be resumed stage by stage::

    starguide rasterize cfg.toml
    starguide scan cfg.toml
    starguide classify cfg.toml
    starguide extract cfg.toml
    starguide graph cfg.toml
    starguide experiment cfg.toml
    starguide report artifacts/strip
    starguide run cfg.toml          # all stages in order

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 verdict
Undetermined.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .config import PipelineConfig, load_config
from .eigensolve import EigenPairs, SolverConfig, _blocks
from .errors import ConfigError, MissingManifest, NumericalError, StarguideError
from .experiments import (
    PacketParams,
    run_decoupling,
    run_relaxation,
    run_resolvent_comparison,
    run_scattering_comparison,
    run_vertex_suppression,
)
from .geometry import build_mesoscopic, save_raster
from .qgraph import VertexCondition, s_matrix
from .resonance import (
    GAP,
    RESONANT,
    UNDETERMINED,
    Classification,
    SpectrumScan,
    analyze,
    classify,
    count_bound_states,
    scan_spectrum,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_UNDETERMINED = 4

MANIFEST = "manifest.json"


class Undetermined(Exception):
    pass


def _dump(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _load(path):
    with open(path) as f:
        return json.load(f)


class Artifacts:
    """Artifact directory with a manifest of stage keys and timings."""

    def __init__(self, cfg: PipelineConfig, outdir: str | None = None):
        self.cfg = cfg
        self.dir = outdir or cfg.output
        os.makedirs(self.dir, exist_ok=True)
        path = self.path(MANIFEST)
        self.manifest = _load(path) if os.path.exists(path) else {"stages": {}}
        self.manifest.update(
            config_hash=cfg.block_hash(),
            config=cfg.to_dict(),
            versions={"starguide": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                      "python": platform.python_version()},
        )

    def path(self, *parts) -> str:
        return os.path.join(self.dir, *parts)

    def save(self) -> None:
        _dump(self.path(MANIFEST), self.manifest)

    def stage(self, name: str, key: str, outputs: list, fn) -> bool:
        """Run ``fn`` unless the stage key and outputs are cached; returns True on a cache hit."""
        rec = self.manifest["stages"].get(name, {})
        if rec.get("key") == key and all(os.path.exists(self.path(o)) for o in outputs):
            rec["cache_hits"] = rec.get("cache_hits", 0) + 1
            self.manifest["stages"][name] = rec
            self.save()
            return True
        t0 = time.perf_counter()
        fn()
        self.manifest["stages"][name] = {"key": key, "seconds": round(time.perf_counter() - t0, 3),
                                         "outputs": outputs, "cache_hits": 0}
        self.save()
        return False


# ---------------------------------------------------------------- stages


def stage_rasterize(a: Artifacts) -> None:
    cfg = a.cfg
    names = [f"rasters/meso_L{i}.npz" for i in range(len(cfg.scan.L))]

    def run():
        os.makedirs(a.path("rasters"), exist_ok=True)
        for name, L in zip(names, cfg.scan.L):
            save_raster(a.path(name), build_mesoscopic(cfg.spec, L, cfg.scan.h))

    a.stage("rasterize", cfg.block_hash("geometry", "scan"), names, run)


def _vector_files(cfg):
    return [f"vectors/L{i}.npz" for i in range(len(cfg.scan.L))]


def stage_scan(a: Artifacts) -> None:
    cfg = a.cfg

    def run():
        scan = scan_spectrum(cfg.spec, cfg.scan.L, cfg.scan.h, cfg.scan.n_eigs,
                             SolverConfig(tol=cfg.scan.tol, seed=cfg.seed), workers=cfg.workers)
        _dump(a.path("scan.json"), scan.to_dict())
        with open(a.path("scan.csv"), "w") as f:
            f.write(scan.to_csv())
        os.makedirs(a.path("vectors"), exist_ok=True)
        for name, p in zip(_vector_files(cfg), scan.pairs):
            np.savez_compressed(a.path(name), values=p.values, vectors=p.vectors, residuals=p.residuals,
                                mass=p.mass, iterations=np.array(p.iterations))

    a.stage("scan", cfg.block_hash("geometry", "scan", "seed"), ["scan.json", "scan.csv"] + _vector_files(cfg), run)


def load_scan(a: Artifacts, with_vectors: bool = True) -> SpectrumScan:
    if not os.path.exists(a.path("scan.json")):
        stage_scan(a)
    scan = SpectrumScan.from_dict(_load(a.path("scan.json")))
    if with_vectors:
        pairs = []
        for name in _vector_files(a.cfg):
            with np.load(a.path(name)) as z:
                vals = z["values"]
                pairs.append(EigenPairs(vals, z["vectors"], z["residuals"], z["mass"], _blocks(vals),
                                        int(z["iterations"])))
        scan.pairs = pairs
    return scan


def stage_classify(a: Artifacts) -> dict:
    cfg = a.cfg

    def run():
        scan = load_scan(a, with_vectors=False)
        bound = count_bound_states(scan)
        if bound.failed:
            cls = Classification(bound.k, UNDETERMINED, {}, {"reason": "bound-state fit failed"})
        else:
            cls = classify(scan, bound.k)
        d = cls.to_dict()
        d["bound_states"] = bound.to_dict()
        d["n_branches"] = len(cfg.spec.branch_angles)
        _dump(a.path("classification.json"), d)

    stage_scan(a)
    a.stage("classify", cfg.block_hash("geometry", "scan", "seed"), ["classification.json"], run)
    return _load(a.path("classification.json"))


def stage_extract(a: Artifacts) -> dict:
    cfg = a.cfg

    def run():
        rep = analyze(load_scan(a))
        d = rep.to_dict()
        d["n_branches"] = len(cfg.spec.branch_angles)
        _dump(a.path("report.json"), d)
        if rep.verdict == RESONANT:
            cp = rep.c_projection
            np.savez_compressed(a.path("c_projection.npz"), vector=cp["vector"], L=cp["L"], h=cp["h"], k=cp["k"])

    stage_scan(a)
    a.stage("extract", cfg.block_hash("geometry", "scan", "seed"), ["report.json"], run)
    return _load(a.path("report.json"))


def vertex_condition(report: dict) -> VertexCondition:
    return VertexCondition.from_report(report)


def stage_graph(a: Artifacts) -> dict:
    cfg = a.cfg

    def run():
        report = _load(a.path("report.json"))
        if report["verdict"] == UNDETERMINED:
            raise Undetermined("no vertex condition for an undetermined verdict")
        vc = vertex_condition(report)
        _dump(a.path("vertex.json"), vc.to_dict())
        rows = ["k,from,to,re,im,abs2"]
        for k in cfg.experiments.k:
            S = s_matrix(vc, k)
            for i in range(vc.n):
                for j in range(vc.n):
                    s = S[j, i]
                    rows.append(f"{k!r},{i},{j},{s.real!r},{s.imag!r},{abs(s) ** 2!r}")
        with open(a.path("smatrix.csv"), "w") as f:
            f.write("\n".join(rows) + "\n")

    stage_extract(a)
    a.stage("graph", cfg.block_hash("geometry", "scan", "seed", "experiments"), ["vertex.json", "smatrix.csv"], run)
    return _load(a.path("vertex.json"))


def stage_experiment(a: Artifacts) -> dict:
    cfg = a.cfg
    e = cfg.experiments
    outputs = [f"experiments/{n}.json" for n in _report_names(e.run)]

    def run():
        report = _load(a.path("report.json"))
        cls = Classification(report["k"], report["verdict"], {}, {})
        spec = cfg.spec
        packet = PacketParams(**e.packet)
        vc = vertex_condition(report) if report["verdict"] != UNDETERMINED else None
        outdir = a.path("experiments")
        for name in e.run:
            if name == "decoupling":
                rep = run_decoupling(spec, e.eps, packet, e.n_width)
            elif name == "vertex_suppression":
                rep = run_vertex_suppression(spec, cls, e.eps, packet, e.n_width)
            elif name == "relaxation":
                rep = run_relaxation(spec, cls, e.eps, packet, e.n_width)
            elif name == "resolvent":
                if vc is None:
                    raise Undetermined("resolvent comparison needs a vertex condition")
                wrong = None if e.wrong_beta is None else VertexCondition.resonant(
                    np.asarray(e.wrong_beta) / np.linalg.norm(e.wrong_beta), vc.theta)
                rep = run_resolvent_comparison(spec, vc, e.eps, [complex(*z) for z in e.z], wrong,
                                               n_width=e.n_width)
            else:
                if vc is None:
                    raise Undetermined("scattering comparison needs a vertex condition")
                rep = run_scattering_comparison(spec, vc, e.eps, e.k, e.n_width)
            rep.write(outdir)

    stage_graph(a)
    a.stage("experiment", cfg.block_hash(), outputs, run)
    out = {}
    for n, o in zip(_report_names(e.run), outputs):
        out[n] = _load(a.path(o))
    return out


def _report_names(run):
    names = {"resolvent": "resolvent", "scattering": "scattering", "decoupling": "decoupling",
             "vertex_suppression": "vertex_suppression", "relaxation": "relaxation"}
    return [names[r] for r in run]


# ---------------------------------------------------------------- reporting


def _fmt_beta(beta) -> str:
    parts = []
    for b in beta:
        if isinstance(b, list):
            parts.append(f"{b[0]:.4f}{b[1]:+.4f}i")
        else:
            parts.append(f"{b:.4f}")
    return "(" + ",".join(parts) + ")"


def _fmt_theta(theta) -> str:
    return "0" if theta == 0 else f"{theta:.4g}"


def summary_lines(outdir: str) -> list[str]:
    """Human-readable summary of an artifact directory."""
    mpath = os.path.join(outdir, MANIFEST)
    if not os.path.exists(mpath):
        raise MissingManifest(f"no {MANIFEST} in {outdir}")
    lines = []
    rpath = os.path.join(outdir, "report.json")
    cpath = os.path.join(outdir, "classification.json")
    src = rpath if os.path.exists(rpath) else cpath if os.path.exists(cpath) else None
    if src is not None:
        d = _load(src)
        v = d["verdict"]
        if v == RESONANT:
            if "beta" in d:
                lines.append(f"verdict=Resonant θ={_fmt_theta(max(d['theta_eig'], 0.0))} β={_fmt_beta(d['beta'])}")
                lines.append(f"theta_eig={d['theta_eig']:.6g} theta_bdry={d['theta_bdry']:.6g} k={d['k']}")
                kap = d.get("kappa")
                if kap:
                    lines.append(f"kappa_beta={kap['kappa_beta']} (R2={kap['r2_beta']:.3f}) "
                                 f"kappa_theta={kap['kappa_theta']} (R2={kap['r2_theta']:.3f})")
            else:
                lines.append(f"verdict=Resonant k={d['k']}")
        elif v == GAP:
            lines.append("verdict=SpectralGap ⇒ Dirichlet vertex")
            p = d.get("classification", d).get("params", {})
            if p:
                lines.append(f"mu0={p['mu0']:.4g} gamma={p['gamma']:.4g} k={d['k']}")
        else:
            reason = d.get("classification", d).get("diagnostics", {}).get("reason", "")
            lines.append(f"verdict=Undetermined {reason}".rstrip())
    edir = os.path.join(outdir, "experiments")
    if os.path.isdir(edir):
        rows = []
        for name in sorted(os.listdir(edir)):
            if not name.endswith(".json"):
                continue
            r = _load(os.path.join(edir, name))
            for fk, f in r["fits"].items():
                rows.append(f"  {r['name']}.{fk}: slope={f['slope']:.4g} R2={f['r2']:.4f}"
                            + ("" if f["reliable"] else " (unreliable)"))
            for ck, ok in r["checks"].items():
                rows.append(f"  {r['name']}.{ck}: {'PASS' if ok else 'FAIL'}")
        if rows:
            lines.append("experiments:")
            lines.extend(rows)
    return lines


def emit_report(outdir: str) -> str:
    text = "\n".join(summary_lines(outdir))
    print(text)
    return text


# ---------------------------------------------------------------- entry point


STAGES = {
    "rasterize": stage_rasterize,
    "scan": stage_scan,
    "classify": stage_classify,
    "extract": stage_extract,
    "graph": stage_graph,
    "experiment": stage_experiment,
}


def run_config(path: str, outdir: str | None = None, workers: int | None = None, stage: str = "run") -> int:
    """Execute ``stage`` (or the whole pipeline) for a config; returns the exit code."""
    err_dir = outdir
    try:
        cfg = load_config(path)
        if workers is not None:
            from dataclasses import replace

            cfg = replace(cfg, workers=workers)
        a = Artifacts(cfg, outdir)
        err_dir = a.dir
        if stage == "run":
            stage_rasterize(a)
            stage_extract(a)
            stage_classify(a)
            if _load(a.path("report.json"))["verdict"] == UNDETERMINED:
                raise Undetermined("classification is Undetermined")
            stage_graph(a)
            if cfg.experiments.run:
                stage_experiment(a)
            emit_report(a.dir)
            return EXIT_OK
        result = STAGES[stage](a)
        if isinstance(result, dict) and result.get("verdict") == UNDETERMINED:
            raise Undetermined("classification is Undetermined")
        return EXIT_OK
    except Undetermined as exc:
        return _fail(err_dir, EXIT_UNDETERMINED, "Undetermined", str(exc))
    except NumericalError as exc:
        return _fail(err_dir, EXIT_NUMERIC, type(exc).__name__, str(exc))
    except (StarguideError, ValueError, KeyError, TypeError) as exc:
        return _fail(err_dir, EXIT_CONFIG, type(exc).__name__, str(exc))


def _fail(outdir, code, kind, message) -> int:
    err = {"exit_code": code, "error": kind, "message": message}
    print(json.dumps(err), file=sys.stderr)
    if outdir and os.path.isdir(outdir):
        _dump(os.path.join(outdir, "error.json"), err)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starguide", description="Thin star-waveguide limit analysis.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["run"]:
        s = sub.add_parser(name)
        s.add_argument("config")
        s.add_argument("--out", default=None, help="artifact directory (default: config output)")
        s.add_argument("--workers", type=int, default=None, help="worker-pool size")
    r = sub.add_parser("report")
    r.add_argument("artifacts")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        try:
            emit_report(args.artifacts)
        except MissingManifest as exc:
            return _fail(None, EXIT_CONFIG, "MissingManifest", str(exc))
        return EXIT_OK
    return run_config(args.config, args.out, args.workers, args.command)


if __name__ == "__main__":
    sys.exit(main())
