"""Pipeline configuration: TOML schema, validation and hashing.

Example::

    seed = 0
    output = "artifacts/strip"
    workers = 1

    [geometry]
    kind = "StraightStrip"

    [scan]
    L = [4, 5, 6, 8]
    h = 0.0625
    n_eigs = 3

    [experiments]
    run = ["resolvent"]
    eps = [0.125, 0.0625, 0.03125]
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import JunctionSpec, WaveguideSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("decoupling", "vertex_suppression", "relaxation", "resolvent", "scattering")

_TOP = {"seed", "output", "workers", "geometry", "scan", "experiments"}
_GEOMETRY = {"kind", "r1", "r2", "bitmap", "pixels_per_width", "faces", "n_branches", "branch_angles",
             "eps", "truncation_length"}
_SCAN = {"L", "h", "n_eigs", "tol"}
_EXPERIMENTS = {"run", "eps", "k", "z", "packet", "n_width", "wrong_beta"}
_PACKET = {"width", "k0", "x0", "branch", "dt", "t_final", "samples"}


@dataclass(frozen=True)
class ScanConfig:
    L: tuple
    h: float
    n_eigs: int = 3
    tol: float = 1e-10


@dataclass(frozen=True)
class ExperimentConfig:
    run: tuple = ()
    eps: tuple = (1 / 8, 1 / 12, 1 / 16, 1 / 24)
    k: tuple = (0.5, 1.0, 2.0)
    z: tuple = ((0.0, 1.0),)
    packet: dict = field(default_factory=dict)
    n_width: int = 16
    wrong_beta: tuple | None = None


@dataclass(frozen=True)
class PipelineConfig:
    geometry: dict
    scan: ScanConfig
    experiments: ExperimentConfig
    output: str = "artifacts"
    seed: int = 0
    workers: int = 1

    @property
    def spec(self) -> WaveguideSpec:
        return waveguide_spec(self.geometry)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output": self.output,
            "workers": self.workers,
            "geometry": self.geometry,
            "scan": asdict(self.scan),
            "experiments": asdict(self.experiments),
        }

    def block_hash(self, *blocks: str) -> str:
        """Stable hash of the named top-level blocks (all when none given)."""
        d = self.to_dict()
        d.pop("output")
        d.pop("workers")
        if blocks:
            d = {b: d[b] for b in blocks}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _reject_unknown(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _positive(x, name):
    if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x) or x <= 0:
        raise ConfigError(f"{name} must be a positive number")
    return float(x)


def waveguide_spec(g: dict) -> WaveguideSpec:
    j = {k: g[k] for k in ("kind", "r1", "r2", "pixels_per_width") if k in g}
    if "bitmap" in g:
        j["bitmap"] = np.asarray(g["bitmap"], dtype=bool)
    if "faces" in g:
        j["faces"] = tuple((str(s), int(o)) for s, o in g["faces"])
    w = {k: g[k] for k in ("n_branches", "eps", "truncation_length") if k in g}
    if "branch_angles" in g:
        w["branch_angles"] = tuple(float(a) for a in g["branch_angles"])
    return WaveguideSpec(JunctionSpec(**j), **w)


def parse_config(d: dict) -> PipelineConfig:
    """Validate a config mapping; raises ConfigError before any computation."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a table")
    _reject_unknown(d, _TOP, "config")
    for b in ("geometry", "scan"):
        if b not in d:
            raise ConfigError(f"missing [{b}] block")
    g = dict(d["geometry"])
    _reject_unknown(g, _GEOMETRY, "[geometry]")
    try:
        waveguide_spec(g)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid geometry: {exc}") from exc

    s = dict(d["scan"])
    _reject_unknown(s, _SCAN, "[scan]")
    if "L" not in s or "h" not in s:
        raise ConfigError("[scan] needs L and h")
    L = tuple(_positive(x, "scan.L") for x in s["L"])
    if len(L) < 3 or any(b <= a for a, b in zip(L, L[1:])):
        raise ConfigError("scan.L must be ascending with at least 3 values")
    n_eigs = s.get("n_eigs", 3)
    if not isinstance(n_eigs, int) or n_eigs < 2:
        raise ConfigError("scan.n_eigs must be an integer >= 2")
    scan = ScanConfig(L, _positive(s["h"], "scan.h"), n_eigs, _positive(s.get("tol", 1e-10), "scan.tol"))

    e = dict(d.get("experiments", {}))
    _reject_unknown(e, _EXPERIMENTS, "[experiments]")
    run = tuple(e.get("run", ()))
    bad = [r for r in run if r not in EXPERIMENTS]
    if bad:
        raise ConfigError(f"unknown experiment(s): {', '.join(bad)}")
    packet = dict(e.get("packet", {}))
    _reject_unknown(packet, _PACKET, "[experiments.packet]")
    z = tuple((float(a), float(b)) for a, b in e.get("z", [(0.0, 1.0)]))
    if any(b == 0 for _, b in z):
        raise ConfigError("experiments.z needs nonzero imaginary parts")
    wrong = e.get("wrong_beta")
    exp = ExperimentConfig(
        run,
        tuple(_positive(x, "experiments.eps") for x in e.get("eps", ExperimentConfig.eps)),
        tuple(_positive(x, "experiments.k") for x in e.get("k", ExperimentConfig.k)),
        z,
        packet,
        int(e.get("n_width", 16)),
        None if wrong is None else tuple(float(x) for x in wrong),
    )
    ppw = g.get("pixels_per_width")
    if g.get("kind") == "CustomMask" and isinstance(ppw, int) and ppw > 0:
        # rasters need a whole number of grid cells per pixel
        if abs(1 / scan.h - round(1 / scan.h)) > 1e-9 or round(1 / scan.h) % ppw:
            raise ConfigError("1/scan.h must be a multiple of geometry.pixels_per_width")
        if run and exp.n_width % ppw:
            raise ConfigError("experiments.n_width must be a multiple of geometry.pixels_per_width")
    seed = d.get("seed", 0)
    workers = d.get("workers", 1)
    if not isinstance(seed, int) or not isinstance(workers, int) or workers < 1:
        raise ConfigError("seed and workers must be integers, workers >= 1")
    return PipelineConfig(g, scan, exp, str(d.get("output", "artifacts")), seed, workers)


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "rb") as f:
            d = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return parse_config(d)
