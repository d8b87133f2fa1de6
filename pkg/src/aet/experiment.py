"""Config-driven experiments: synthesize data, reconstruct, write artifacts.

A config is an INI file. Every key has a default, unknown sections or keys
are rejected, and the fully resolved configuration is echoed into each
``summary.json`` so that every constant a run depended on is on record.

Example::

    [mesh]
    fine_h = 0.01
    coarse_h = 0.015625

    [noise]
    delta_e = 0.08, 0.04
    seed = 0

    [penalty]
    kind = L1

    [algorithm]
    mode = TPG

    [shape:disk]
    type = disk
    center = 0.15, 0.12
    radius = 0.09
    value = 3.0

With several noise levels each level gets its own subdirectory
``delta_<level>`` and a ``sweep.json`` table is written at the top.
"""
from __future__ import annotations

import concurrent.futures
import configparser
import json
import logging
import math
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import read_pgm, write_residuals_csv, write_vtk
from .mesh import generate_disk_mesh
from .metrics import evaluate
from .operator import forward, norm_y
from .penalty import PenaltySpec
from .phantom import (
    Disk,
    Ellipse,
    GeometrySpec,
    Polygon,
    add_noise,
    currents_full,
    currents_limited,
    default_geometry,
    geometric_phantom,
    image_phantom,
    synthesize_data,
)
from .tpg import AlgoConfig, run

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DEFAULTS",
    "load_config",
    "parse_config",
    "run_experiment",
    "compare",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NOT_CONVERGED",
]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 1, 2

DEFAULTS = {
    "mesh": {"radius": "0.5", "fine_h": "0.01", "coarse_h": "0.015625"},
    "phantom": {"kind": "geometry", "background": "1.0", "default_shapes": "yes",
                "raster": "", "value_min": "1.0", "value_max": "3.0"},
    "currents": {"family": "full", "alpha": str(2 * math.pi), "count": "4"},
    "noise": {"delta_e": "0.08, 0.04, 0.02, 0.008", "seed": "0"},
    "penalty": {"kind": "L1", "beta": "1.0", "tv_tol": "1e-4", "tv_max_iter": "5000"},
    "algorithm": {"mode": "TPG", "q": "2.2", "tau": "1.05", "mu0": "", "mu1": "1.0",
                  "alpha": "3.0", "M": "1.0", "max_sweeps": "500", "sigma_min": "0.05",
                  "sigma_max": "20.0", "eta": "0.0", "backend": "direct"},
    "output": {"directory": "out"},
}
_SHAPE_KEYS = {"type", "center", "axes", "radius", "vertices", "value"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    radius: float
    fine_h: float
    coarse_h: float
    phantom_kind: str
    geometry: GeometrySpec | None
    raster: Path | None
    value_range: tuple
    current_family: str
    current_alpha: float
    current_count: int
    delta_levels: tuple
    seed: int
    penalty: PenaltySpec
    algo: AlgoConfig
    output: Path
    echo: dict = field(default_factory=dict, compare=False)

    def currents(self):
        if self.current_family == "full":
            return currents_full()
        return currents_limited(self.current_alpha, self.current_count)


def _floats(text, n=None, what="value"):
    try:
        vals = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse {what} {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what} needs {n} numbers, got {text!r}")
    return vals


def _parse_shape(name, sec):
    unknown = set(sec) - _SHAPE_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in [shape:{name}]: {sorted(unknown)}")
    kind = sec.get("type", "").strip().lower()
    try:
        value = float(sec["value"])
        if kind == "ellipse":
            return Ellipse(_floats(sec["center"], 2, "center"), _floats(sec["axes"], 2, "axes"), value)
        if kind == "disk":
            return Disk(_floats(sec["center"], 2, "center"), float(sec["radius"]), value)
        if kind == "polygon":
            pts = [_floats(p, 2, "vertex") for p in sec["vertices"].split(";") if p.strip()]
            if len(pts) < 3:
                raise ConfigError(f"[shape:{name}] polygon needs at least 3 vertices")
            return Polygon(tuple(pts), value)
    except KeyError as exc:
        raise ConfigError(f"[shape:{name}] is missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(f"[shape:{name}]: {exc}") from None
    raise ConfigError(f"[shape:{name}] has unknown type {kind!r}")


def _shape_echo(s):
    d = {"type": type(s).__name__.lower(), "value": s.value}
    if isinstance(s, Ellipse):
        d.update(center=list(s.center), axes=list(s.axes))
    elif isinstance(s, Disk):
        d.update(center=list(s.center), radius=s.radius)
    else:
        d.update(vertices=[list(v) for v in s.vertices])
    return d


def parse_config(text, base_dir="."):
    """Build an :class:`ExperimentConfig` from INI text.

    Relative paths are resolved against ``base_dir``.

    Raises
    ------
    ConfigError
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    shapes = []
    for name in cp.sections():
        if name.startswith("shape:"):
            shapes.append((name[6:], dict(cp[name])))
        elif name not in DEFAULTS:
            raise ConfigError(f"unknown section [{name}]")
        else:
            unknown = set(cp[name]) - set(DEFAULTS[name])
            if unknown:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    raw = {sec: {k: cp.get(sec, k, fallback=v) for k, v in keys.items()}
           for sec, keys in DEFAULTS.items()}
    base_dir = Path(base_dir)

    def num(sec, key, kind=float):
        try:
            return kind(raw[sec][key])
        except ValueError:
            raise ConfigError(f"[{sec}] {key} = {raw[sec][key]!r} is not a valid {kind.__name__}") from None

    def flag(sec, key):
        v = raw[sec][key].strip().lower()
        if v in ("yes", "true", "1", "on"):
            return True
        if v in ("no", "false", "0", "off"):
            return False
        raise ConfigError(f"[{sec}] {key} must be yes or no")

    try:
        radius, fine_h, coarse_h = num("mesh", "radius"), num("mesh", "fine_h"), num("mesh", "coarse_h")
        for h in (fine_h, coarse_h):
            if not 0 < h < radius:
                raise ConfigError(f"mesh sizes must satisfy 0 < h < radius, got {h}")

        kind = raw["phantom"]["kind"].strip().lower()
        geometry, raster = None, None
        vrange = (num("phantom", "value_min"), num("phantom", "value_max"))
        if kind == "geometry":
            parsed = tuple(_parse_shape(n, s) for n, s in shapes)
            if not parsed and flag("phantom", "default_shapes"):
                parsed = default_geometry().shapes
            geometry = GeometrySpec(num("phantom", "background"), parsed)
            for s in parsed:
                if s.max_radius() > radius:
                    raise ConfigError(f"shape extends outside the disk: {s}")
        elif kind == "image":
            if not raw["phantom"]["raster"]:
                raise ConfigError("[phantom] kind = image needs a raster path")
            raster = (base_dir / raw["phantom"]["raster"]).resolve()
            if not (vrange[0] > 0 and vrange[1] > 0):
                raise ConfigError("image value range must be positive")
        else:
            raise ConfigError(f"[phantom] kind must be geometry or image, got {kind!r}")

        family = raw["currents"]["family"].strip().lower()
        if family not in ("full", "limited"):
            raise ConfigError(f"[currents] family must be full or limited, got {family!r}")
        c_alpha, c_count = num("currents", "alpha"), num("currents", "count", int)
        if family == "limited" and not (0 < c_alpha <= 2 * math.pi and c_count >= 1):
            raise ConfigError("limited currents need 0 < alpha <= 2 pi and count >= 1")

        levels = _floats(raw["noise"]["delta_e"], what="delta_e")
        if not levels or any(d < 0 for d in levels):
            raise ConfigError("delta_e needs one or more non-negative levels")
        seed = num("noise", "seed", int)

        penalty = PenaltySpec(raw["penalty"]["kind"].strip().upper(), num("penalty", "beta"),
                              num("penalty", "tv_tol"), num("penalty", "tv_max_iter", int))
        a = raw["algorithm"]
        algo = AlgoConfig(
            q=num("algorithm", "q"), tau=num("algorithm", "tau"),
            mu0=float(a["mu0"]) if a["mu0"].strip() else None,
            mu1=num("algorithm", "mu1"), alpha=num("algorithm", "alpha"), M=num("algorithm", "M"),
            max_sweeps=num("algorithm", "max_sweeps", int),
            sigma_min=num("algorithm", "sigma_min"), sigma_max=num("algorithm", "sigma_max"),
            mode=a["mode"].strip().upper(), eta=num("algorithm", "eta"),
            backend=a["backend"].strip().lower())
        if algo.backend not in ("direct", "cg"):
            raise ConfigError(f"[algorithm] backend must be direct or cg, got {algo.backend!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    out = base_dir / raw["output"]["directory"]
    echo = {
        "mesh": {"radius": radius, "fine_h": fine_h, "coarse_h": coarse_h},
        "phantom": {"kind": kind, "background": geometry.background if geometry else None,
                    "shapes": [_shape_echo(s) for s in geometry.shapes] if geometry else [],
                    "raster": str(raster) if raster else None, "value_range": list(vrange)},
        "currents": {"family": family, "alpha": c_alpha, "count": c_count},
        "noise": {"delta_e": list(levels), "seed": seed},
        "penalty": {"kind": penalty.kind.value, "beta": penalty.beta,
                    "tv_tol": penalty.tv_tol, "tv_max_iter": penalty.tv_max_iter},
        "algorithm": {"mode": algo.mode.value, "q": algo.q, "tau": algo.tau, "mu0": algo.mu0,
                      "mu1": algo.mu1, "alpha": algo.alpha, "M": algo.M,
                      "max_sweeps": algo.max_sweeps, "sigma_min": algo.sigma_min,
                      "sigma_max": algo.sigma_max, "eta": algo.eta, "backend": algo.backend},
    }
    return ExperimentConfig(radius, fine_h, coarse_h, kind, geometry, raster, vrange, family,
                            c_alpha, c_count, levels, seed, penalty, algo, out, echo)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, base_dir=path.parent)


def _truth(cfg, mesh):
    if cfg.phantom_kind == "geometry":
        return geometric_phantom(mesh, cfg.geometry)
    img, maxval = read_pgm(cfg.raster)
    return image_phantom(img, mesh, cfg.value_range, maxval)


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "exact" if x > 0 else None
    return x


def _level_dir(root, level, n_levels):
    return root if n_levels == 1 else root / f"delta_{level:g}"


def _reconstruct(cfg, fine, coarse, data, fallbacks, sigma_true, h_true, level, outdir, t_synth):
    currents = cfg.currents()
    # seeded by the level itself so a level gives the same noise alone or in a sweep
    rng = np.random.default_rng([cfg.seed, round(level * 1e9)])
    y_delta, deltas = add_noise(coarse, data, level, cfg.algo.q, rng)
    t0 = time.perf_counter()
    res = run(coarse, currents, y_delta, cfg.algo, cfg.penalty, deltas, sigma_true=sigma_true)
    t_rec = time.perf_counter() - t0
    report = evaluate(coarse, res.sigma, sigma_true, res.n_delta, t_rec, [s.R for s in res.sweeps])

    outdir.mkdir(parents=True, exist_ok=True)
    write_residuals_csv(outdir / "residuals.csv", res.residual_table())
    write_vtk(outdir / "sigma_rec.vtk", coarse, point_data={"sigma_rec": res.sigma})
    write_vtk(outdir / "sigma_true.vtk", coarse, point_data={"sigma_true": sigma_true})
    for i, (y, yd) in enumerate(zip(data, y_delta)):
        write_vtk(outdir / f"power_density_{i}.vtk", coarse,
                  cell_data={"H_exact": y, "H_noisy": yd}, title=f"power density {currents[i].name}")
    final = [r for r in res.substeps if r.sweep == res.sweeps[-1].sweep]
    summary = {
        "converged": res.converged,
        "n_delta": res.n_delta,
        "delta_e": level,
        "e_L1": report.e_l1,
        "e_TV": report.e_tv,
        "PSNR": _clean(report.psnr),
        "delta": [float(d) for d in deltas],
        "final_residual_over_delta": [r.residual / d if d > 0 else None for r, d in zip(final, deltas)],
        "final_bregman": res.final_bregman,
        # model plus noise error of the truth itself; the stop needs this near or below tau
        "truth_residual_over_delta": [norm_y(coarse, h - yd, cfg.algo.q) / d if d > 0 else None
                                      for h, yd, d in zip(h_true, y_delta, deltas)],
        "R": [s.R for s in res.sweeps],
        "bregman": [s.bregman for s in res.sweeps],
        "currents": [c.name for c in currents],
        "meshes": {"fine": [fine.n_nodes, fine.n_triangles],
                   "coarse": [coarse.n_nodes, coarse.n_triangles],
                   "centroid_fallbacks": fallbacks},
        "config": cfg.echo,
        "timings": {"synthesis_s": t_synth, "reconstruction_s": t_rec},
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _run_level(args):
    return _reconstruct(*args)


def run_experiment(config, workers=1):
    """Run every noise level of ``config`` (a path or :class:`ExperimentConfig`).

    Returns
    -------
    int
        ``EXIT_OK``, ``EXIT_NOT_CONVERGED`` if any level hit ``max_sweeps``,
        or ``EXIT_CONFIG`` for an invalid config. Outputs of a run that
        raised are removed.
    """
    try:
        cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG

    root = cfg.output
    created = not root.exists()
    try:
        t0 = time.perf_counter()
        fine = generate_disk_mesh(cfg.radius, cfg.fine_h)
        coarse = generate_disk_mesh(cfg.radius, cfg.coarse_h)
        currents = cfg.currents()
        data, fallbacks = synthesize_data(fine, _truth(cfg, fine), currents, coarse)
        sigma_true = _truth(cfg, coarse)
        h_true, _ = forward(coarse, sigma_true, currents, bounds=cfg.algo.bounds, backend=cfg.algo.backend)
        t_synth = time.perf_counter() - t0
        n = len(cfg.delta_levels)
        jobs = [(cfg, fine, coarse, data, fallbacks, sigma_true, h_true, lvl,
                 _level_dir(root, lvl, n), t_synth) for lvl in cfg.delta_levels]
        if workers > 1 and n > 1:
            with concurrent.futures.ProcessPoolExecutor(min(workers, n)) as ex:
                summaries = list(ex.map(_run_level, jobs))
        else:
            summaries = [_run_level(j) for j in jobs]
    except (ValueError, RuntimeError, OSError) as exc:
        log.error("experiment failed: %s", exc)
        if created and root.exists():
            shutil.rmtree(root)
        return EXIT_CONFIG if isinstance(exc, (ValueError, OSError)) else EXIT_NOT_CONVERGED

    if n > 1:
        table = [{k: s[k] for k in ("delta_e", "n_delta", "converged", "e_L1", "e_TV", "PSNR")}
                 for s in summaries]
        (root / "sweep.json").write_text(json.dumps(table, indent=2) + "\n")
    for s in summaries:
        log.info("delta_e=%g n_delta=%d converged=%s e_L1=%.4f PSNR=%s",
                 s["delta_e"], s["n_delta"], s["converged"], s["e_L1"], s["PSNR"])
    return EXIT_OK if all(s["converged"] for s in summaries) else EXIT_NOT_CONVERGED


def compare(config_a, config_b, workers=1):
    """Run two configs and return their summaries side by side.

    Returns
    -------
    int, list of (level, summary_a, summary_b)
        The worse of the two exit codes and the matched rows.
    """
    codes, outs = [], []
    for c in (config_a, config_b):
        try:
            cfg = c if isinstance(c, ExperimentConfig) else load_config(c)
        except ConfigError as exc:
            log.error("%s", exc)
            return EXIT_CONFIG, []
        codes.append(run_experiment(cfg, workers))
        if codes[-1] == EXIT_CONFIG:
            return EXIT_CONFIG, []
        n = len(cfg.delta_levels)
        outs.append({lvl: json.loads((_level_dir(cfg.output, lvl, n) / "summary.json").read_text())
                     for lvl in cfg.delta_levels})
    rows = [(lvl, outs[0][lvl], outs[1].get(lvl)) for lvl in outs[0]]
    return max(codes), rows
