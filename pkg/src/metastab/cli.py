"""Pipeline orchestration and the command-line interface.

A run is described by an INI config (see configs/ for bundled examples):

    [potential]
    expression = (x^2-1)^2
    dim = 1

    [domain]
    kind = interval          ; interval | rectangle | disk
    a = -1.3
    b = 1.3

    [ladder]
    h = 0.20, 0.15, 0.12, 0.10, 0.08   ; strictly decreasing

    [spectral]
    mesh = 4096              ; cells per axis ("nx, ny" in 2D)
    k = 6

    [sde]
    enabled = true
    h = 0.3                  ; simulation temperature
    dt = 1e-3
    n_traj = 4000
    n_particles = 4000
    t_burn = 10.0
    seed = 12345

    [symmetry]
    kind = point             ; none | point | reflect_x | reflect_y
    center = 0.0

    [bins]
    radius = auto            ; exit bin radius, "auto" = half min saddle separation

    [output]
    directory = out
    formats = json,csv,gnuplot

Subcommands: analyze (landscape + regime), predict (asymptotics), spectrum
(one rung), simulate (Monte Carlo), compare (full three-route pipeline).
Exit codes: 0 success, 2 config error, 3 well-hypothesis failure, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import importlib.resources
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import asymptotics as asy
from . import expr, landscape, sde, spectral

SCHEMA = "metastab-report/1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_HWELL = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    expression: str
    dim: int
    domain: object
    ladder: list
    mesh: tuple
    k: int
    sde_enabled: bool
    sde_h: float
    sde_dt: float
    sde_n_traj: int
    sde_n_particles: int
    sde_t_burn: float
    seed: int
    symmetry: object  # SymmetryDecl | None
    bin_radius: float | None  # None = auto
    out_dir: str
    formats: tuple
    grid_density: int = 48
    flood_resolution: int | None = None
    bridge: bool = True

    @classmethod
    def from_file(cls, path, overrides=None):
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        read = cp.read(path)
        if not read:
            raise ConfigError(f"cannot read config file '{path}'")
        try:
            return cls._parse(cp, overrides or {})
        except (KeyError, ValueError, configparser.Error) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def _parse(cls, cp, overrides):
        dim = cp.getint("potential", "dim", fallback=1)
        if dim not in (1, 2):
            raise ConfigError("potential.dim must be 1 or 2")
        expression = cp.get("potential", "expression")

        dk = cp.get("domain", "kind")
        if dk == "interval":
            dom = landscape.Interval(cp.getfloat("domain", "a"), cp.getfloat("domain", "b"))
        elif dk == "rectangle":
            dom = landscape.Rectangle(
                cp.getfloat("domain", "ax"),
                cp.getfloat("domain", "bx"),
                cp.getfloat("domain", "ay"),
                cp.getfloat("domain", "by"),
            )
        elif dk == "disk":
            dom = landscape.Disk(
                cp.getfloat("domain", "cx", fallback=0.0),
                cp.getfloat("domain", "cy", fallback=0.0),
                cp.getfloat("domain", "radius"),
            )
        else:
            raise ConfigError(f"unknown domain kind '{dk}'")
        if dom.dim != dim:
            raise ConfigError("domain dimension does not match potential.dim")

        ladder = [float(tok) for tok in cp.get("ladder", "h").replace(",", " ").split()]
        if "h" in overrides and overrides["h"] is not None:
            ladder = [float(overrides["h"])]
        if not ladder:
            raise ConfigError("ladder.h is empty")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigError("ladder.h must be strictly decreasing")
        if any(h <= 0 for h in ladder):
            raise ConfigError("ladder.h entries must be positive")

        mesh_s = cp.get("spectral", "mesh", fallback="1024")
        if overrides.get("mesh"):
            mesh_s = overrides["mesh"]
        mesh_vals = [int(tok) for tok in str(mesh_s).replace(",", " ").split()]
        mesh = tuple(mesh_vals) if len(mesh_vals) > 1 else (mesh_vals[0],) * dim
        if len(mesh) != dim:
            raise ConfigError("spectral.mesh must give one size per axis")
        k = cp.getint("spectral", "k", fallback=6)

        sde_enabled = cp.getboolean("sde", "enabled", fallback=True)
        sde_h = cp.getfloat("sde", "h", fallback=ladder[0])
        sde_dt = cp.getfloat("sde", "dt", fallback=1e-3)
        sde_n_traj = cp.getint("sde", "n_traj", fallback=2000)
        sde_n_particles = cp.getint("sde", "n_particles", fallback=2000)
        sde_t_burn = cp.getfloat("sde", "t_burn", fallback=10.0)
        seed = cp.getint("sde", "seed", fallback=0)
        if overrides.get("seed") is not None:
            seed = int(overrides["seed"])
        bridge = cp.getboolean("sde", "bridge", fallback=True)

        sym = None
        if cp.has_section("symmetry"):
            kind = cp.get("symmetry", "kind", fallback="none")
            if kind != "none":
                center = [
                    float(tok)
                    for tok in cp.get("symmetry", "center", fallback="0").replace(",", " ").split()
                ]
                sym = asy.SymmetryDecl(kind, tuple(center))

        rad_s = cp.get("bins", "radius", fallback="auto")
        bin_radius = None if rad_s.strip() == "auto" else float(rad_s)

        out_dir = overrides.get("out") or cp.get("output", "directory", fallback="out")
        fmt_s = overrides.get("format") or cp.get("output", "formats", fallback="json,csv,gnuplot")
        formats = tuple(t.strip() for t in fmt_s.split(",") if t.strip())
        bad = set(formats) - {"json", "csv", "gnuplot"}
        if bad:
            raise ConfigError(f"unknown output formats: {sorted(bad)}")

        return cls(
            expression=expression,
            dim=dim,
            domain=dom,
            ladder=ladder,
            mesh=mesh,
            k=k,
            sde_enabled=sde_enabled,
            sde_h=sde_h,
            sde_dt=sde_dt,
            sde_n_traj=sde_n_traj,
            sde_n_particles=sde_n_particles,
            sde_t_burn=sde_t_burn,
            seed=seed,
            symmetry=sym,
            bin_radius=bin_radius,
            out_dir=out_dir,
            formats=formats,
            grid_density=cp.getint("landscape", "grid_density", fallback=48),
            flood_resolution=cp.getint("landscape", "resolution", fallback=0) or None,
            bridge=bridge,
        )

    def to_dict(self):
        return {
            "expression": self.expression,
            "dim": self.dim,
            "domain": self.domain.to_dict(),
            "ladder": list(self.ladder),
            "mesh": list(self.mesh),
            "k": self.k,
            "sde": {
                "enabled": self.sde_enabled,
                "h": self.sde_h,
                "dt": self.sde_dt,
                "n_traj": self.sde_n_traj,
                "n_particles": self.sde_n_particles,
                "t_burn": self.sde_t_burn,
                "seed": self.seed,
                "bridge": self.bridge,
            },
            "symmetry": self.symmetry.to_dict() if self.symmetry else None,
            "bin_radius": self.bin_radius,
        }


def bundled_config_path(name):
    """Filesystem path of a bundled demo config (name without extension)."""
    ref = importlib.resources.files("metastab") / "configs" / f"{name}.cfg"
    return str(ref)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return repr(obj)
    return obj


@dataclass
class ComparisonReport:
    payload: dict  # everything hashed
    meta: dict = field(default_factory=dict)

    def to_json(self):
        doc = dict(self.payload)
        doc["meta"] = self.meta
        return json.dumps(_jsonify(doc), sort_keys=True, indent=1)

    def content_hash(self):
        blob = json.dumps(_jsonify(self.payload), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _mesh_arg(cfg):
    return cfg.mesh[0] if cfg.dim == 1 else cfg.mesh


def _bin_centers(report):
    return [np.asarray(s.location, dtype=float) for s in report.boundary_saddles]


def _auto_radius(report):
    centers = _bin_centers(report)
    if len(centers) < 2:
        return 0.25 * report.domain.diameter()
    dists = [
        float(np.linalg.norm(centers[i] - centers[j]))
        for i in range(len(centers))
        for j in range(i + 1, len(centers))
    ]
    return 0.5 * min(dists)


def _spectral_rung(cfg, pot, report, prediction, h):
    op = spectral.discretize_generator(pot, cfg.domain, h, _mesh_arg(cfg))
    sol = spectral.lowest_spectrum(op, k=min(cfg.k, 6))
    lam = sol.eigenvalues
    n_below = int(np.sum(lam < math.sqrt(h) / 2.0))
    H = report.H
    rescaled1 = 2.0 * math.sqrt(h) * math.exp(2.0 * H / h) * lam[0]
    splitting = float((lam[1] - lam[0]) / (lam[1] + lam[0]))

    labels = report.wells.classify_points(op.mesh.points)
    m = spectral.qsd_measure(sol)
    mass1 = spectral.region_mass(m, labels == 1)
    mass2 = spectral.region_mass(m, labels == 2)

    radius = cfg.bin_radius or _auto_radius(report)
    pts, contrib = spectral.boundary_flux(sol)
    exit_rows = []
    taken = np.zeros(len(pts), dtype=bool)
    for s in report.boundary_saddles:
        z = np.asarray(s.location, dtype=float)
        near = np.linalg.norm(pts - z[None, :], axis=1) <= radius
        exit_rows.append(
            {
                "location": [float(v) for v in z],
                "well": s.well_assignment,
                "spectral": float(contrib[near].sum()),
            }
        )
        taken |= near
    other_flux = float(contrib[~taken].sum())
    norm_check = float(contrib.sum())

    lam1_pred, lam2_pred, note = asy.predict_eigenvalues(
        prediction.model, prediction.regime, h
    )
    return sol, {
        "h": h,
        "eigenvalues_spectral": [float(v) for v in lam],
        "lambda1_predicted": lam1_pred,
        "lambda2_predicted": lam2_pred,
        "rescaled_lambda1": rescaled1,
        "n_below_sqrt_h_half": n_below,
        "relative_splitting": splitting,
        "qsd_mass": {"well1": mass1, "well2": mass2, "elsewhere": 1.0 - mass1 - mass2},
        "exit_weights": exit_rows,
        "exit_other": other_flux,
        "exit_normalization": norm_check,
        "bin_radius": radius,
        "residual_max": float(sol.residuals.max()),
    }


def run_pipeline(cfg, progress=lambda msg: None):
    """Parse, analyze, predict, verify spectrally, simulate, compare."""
    pot = expr.parse_potential(cfg.expression, cfg.dim)
    _validate_finite(pot, cfg.domain)

    progress("landscape analysis")
    report = landscape.analyze_landscape(
        pot, cfg.domain, grid_density=cfg.grid_density, resolution=cfg.flood_resolution
    )
    if not report.passed:
        raise landscape.LandscapeError(f"well hypothesis failed: {report.reason}")

    floor = spectral.admissible_h_floor(report.H)
    bad_rungs = [h for h in cfg.ladder if h < floor]
    if bad_rungs:
        raise ConfigError(
            f"ladder rungs below the admissible floor {floor:.6g}: {bad_rungs} "
            f"(need e^(-2H/h) >= 1e-12 with H={report.H:.6g})"
        )
    if cfg.sde_enabled and cfg.sde_h < floor:
        raise ConfigError(f"sde.h={cfg.sde_h} is below the admissible floor {floor:.6g}")

    progress("asymptotic prediction")
    prediction = asy.predict(report, declared_symmetry=cfg.symmetry)

    rungs = []
    sol_by_h = {}
    for h in cfg.ladder:
        progress(f"spectral solve at h={h}")
        sol, row = _spectral_rung(cfg, pot, report, prediction, h)
        sol_by_h[h] = sol
        rungs.append(row)

    sde_block = {"skipped": None}
    if cfg.sde_enabled:
        progress(f"monte carlo at h={cfg.sde_h}")
        sde_block = _sde_stage(cfg, pot, report, prediction, sol_by_h)
        sde_block.pop("_raw", None)
    else:
        sde_block = {"skipped": "sde disabled in config"}

    diagnostics = _diagnostics(cfg, report, prediction, rungs)

    payload = {
        "schema": SCHEMA,
        "config": cfg.to_dict(),
        "landscape": report.to_dict(),
        "prediction": prediction.to_dict(),
        "rungs": rungs,
        "sde": sde_block,
        "diagnostics": diagnostics,
    }
    rep = ComparisonReport(payload=payload)
    rep.meta = {
        "created_unix": time.time(),
        "content_hash": rep.content_hash(),
        "package_version": __import__("metastab").__version__,
    }
    return rep


def _validate_finite(pot, dom):
    pts = dom.seed_grid(24)
    vals = expr.value_many(pot, pts)
    if not np.all(np.isfinite(vals)):
        raise ConfigError("potential is not finite on the domain probe grid")
    missing = pot.free_vars() - set(pot.variables)
    if missing:
        raise ConfigError(f"undeclared variables {sorted(missing)}")


def _sde_stage(cfg, pot, report, prediction, sol_by_h):
    h = cfg.sde_h
    if h in sol_by_h:
        sol = sol_by_h[h]
    else:
        op = spectral.discretize_generator(pot, cfg.domain, h, _mesh_arg(cfg))
        sol = spectral.lowest_spectrum(op, k=min(cfg.k, 6))
    measure = spectral.qsd_measure(sol)
    scfg = sde.SimConfig(
        h=h,
        dt=cfg.sde_dt,
        n_traj=cfg.sde_n_traj,
        master_seed=cfg.seed,
        bridge_correction=cfg.bridge,
    )

    init = sde.sample_qsd(measure, cfg.sde_n_traj, seed=cfg.seed)
    records = sde.simulate_killed_paths(pot, cfg.domain, init, scfg)
    radius = cfg.bin_radius or _auto_radius(report)
    hist = sde.exit_histogram(records, report, radius=radius)
    freqs, other = hist.frequencies()
    sig = hist.standard_errors()

    # spectral bin weights at the same h and radius
    pts, contrib = spectral.boundary_flux(sol)
    spectral_bins = []
    for c in hist.centers:
        near = np.linalg.norm(pts - c[None, :], axis=1) <= radius
        spectral_bins.append(float(contrib[near].sum()))

    ens = sde.fleming_viot_qsd(
        pot,
        cfg.domain,
        scfg,
        n_particles=cfg.sde_n_particles,
        t_burn=cfg.sde_t_burn,
        wells=report.wells,
    )
    f1m, f2m = ens.mean_occupancy()
    o1, o2, orest = sde.well_occupancy(ens, report.wells)

    labels = report.wells.classify_points(sol.operator.mesh.points)
    spectral_mass = [
        spectral.region_mass(measure, labels == 1),
        spectral.region_mass(measure, labels == 2),
    ]

    raw = {"records": records, "histogram": hist, "ensemble": ens}
    return {
        "_raw": raw,
        "skipped": None,
        "h": h,
        "exit_mc": {
            "n_traj": cfg.sde_n_traj,
            "n_exited": records.n_exited,
            "censored": records.censored,
            "bin_radius": radius,
            "bins": [
                {
                    "location": [float(v) for v in c],
                    "mc": float(f),
                    "mc_sigma": float(s),
                    "spectral": sb,
                }
                for c, f, s, sb in zip(hist.centers, freqs, sig, spectral_bins)
            ],
            "other_mc": float(other),
            "exit_time_stats": records.time_stats(),
        },
        "fleming_viot": {
            "n_particles": cfg.sde_n_particles,
            "t_burn": cfg.sde_t_burn,
            "occupancy_mean": [f1m, f2m],
            "occupancy_final": [o1, o2, orest],
            "respawns": ens.respawns,
            "stationary": ens.stationary,
            "spectral_mass_at_h": spectral_mass,
        },
    }


def _diagnostics(cfg, report, prediction, rungs):
    resc = [r["rescaled_lambda1"] for r in rungs]
    kappa_min = min(prediction.coeffs.kappa10, prediction.coeffs.kappa20)
    devs = [abs(v - kappa_min) for v in resc]
    monotone = all(b <= a + 1e-9 for a, b in zip(devs, devs[1:]))
    diag = {
        "rescaled_lambda1": resc,
        "kappa_target": kappa_min,
        "rescaled_deviations": devs,
        "rescaled_trend_monotone": bool(monotone),
        "splitting_loglog_slope": None,
    }
    if prediction.model.epsilon_kind == "order_sqrt_h" and len(rungs) >= 3:
        hs = np.array([r["h"] for r in rungs])
        sp = np.array([r["relative_splitting"] for r in rungs])
        if np.all(sp > 0):
            slope = float(np.polyfit(np.log(hs), np.log(sp), 1)[0])
            diag["splitting_loglog_slope"] = slope
    return diag


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def emit_report(rep, out_dir, formats=("json", "csv", "gnuplot")):
    """Write the report as JSON, CSV tables and gnuplot two-column files."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []

    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        with open(path, "w") as fh:
            fh.write(rep.to_json())
        written.append(path)

    rungs = rep.payload["rungs"]
    if "csv" in formats:
        path = os.path.join(out_dir, "eigenvalues.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                [
                    "h",
                    "lambda1_spectral",
                    "lambda2_spectral",
                    "lambda1_predicted",
                    "lambda2_predicted",
                    "rescaled_lambda1",
                    "relative_splitting",
                    "n_below_sqrt_h_half",
                ]
            )
            for r in rungs:
                w.writerow(
                    [
                        r["h"],
                        r["eigenvalues_spectral"][0],
                        r["eigenvalues_spectral"][1],
                        r["lambda1_predicted"],
                        r["lambda2_predicted"],
                        r["rescaled_lambda1"],
                        r["relative_splitting"],
                        r["n_below_sqrt_h_half"],
                    ]
                )
        written.append(path)

        qsd_pred = rep.payload["prediction"]["qsd"]
        path = os.path.join(out_dir, "qsd_weights.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "well", "predicted", "spectral", "mc", "skipped"])
            sde_block = rep.payload["sde"]
            for r in rungs:
                for i, key in ((1, "well1"), (2, "well2")):
                    pred = qsd_pred[f"weight_well{i}"] if qsd_pred else ""
                    mc = ""
                    skip = "no simulation at this rung"
                    if sde_block.get("skipped") is None and r["h"] == sde_block["h"]:
                        mc = sde_block["fleming_viot"]["occupancy_mean"][i - 1]
                        skip = ""
                    elif sde_block.get("skipped"):
                        skip = sde_block["skipped"]
                    w.writerow([r["h"], i, pred, r["qsd_mass"][key], mc, skip])
        written.append(path)

        path = os.path.join(out_dir, "exit_weights.csv")
        exit_pred = rep.payload["prediction"]["exit_law"]
        pred_by_loc = {}
        if exit_pred:
            for row in exit_pred["weights"]:
                pred_by_loc[tuple(np.round(row["location"], 9))] = row["weight"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "location", "well", "predicted", "spectral", "mc", "skipped"])
            sde_block = rep.payload["sde"]
            for r in rungs:
                for row in r["exit_weights"]:
                    key = tuple(np.round(row["location"], 9))
                    pred = pred_by_loc.get(key, 0.0)
                    mc = ""
                    skip = "no simulation at this rung"
                    if sde_block.get("skipped") is None and r["h"] == sde_block["h"]:
                        for b in sde_block["exit_mc"]["bins"]:
                            if tuple(np.round(b["location"], 9)) == key:
                                mc = b["mc"]
                                skip = ""
                    elif sde_block.get("skipped"):
                        skip = sde_block["skipped"]
                    w.writerow(
                        [r["h"], row["location"], row["well"], pred, row["spectral"], mc, skip]
                    )
        written.append(path)

    if "gnuplot" in formats:
        path = os.path.join(out_dir, "rescaled_lambda1.dat")
        with open(path, "w") as fh:
            fh.write("# h  2*sqrt(h)*exp(2H/h)*lambda1\n")
            for r in rungs:
                fh.write(f"{r['h']} {r['rescaled_lambda1']}\n")
        written.append(path)
        path = os.path.join(out_dir, "splitting.dat")
        with open(path, "w") as fh:
            fh.write("# h  (lambda2-lambda1)/(lambda2+lambda1)\n")
            for r in rungs:
                fh.write(f"{r['h']} {r['relative_splitting']}\n")
        written.append(path)

    return written


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_analyze(cfg, args):
    pot = expr.parse_potential(cfg.expression, cfg.dim)
    _validate_finite(pot, cfg.domain)
    report = landscape.analyze_landscape(
        pot, cfg.domain, grid_density=cfg.grid_density, resolution=cfg.flood_resolution
    )
    out = {"landscape": report.to_dict(), "regime": None}
    if report.passed:
        coeffs = asy.leading_kappa(report)
        model = asy.interaction_model(report, coeffs)
        regime = asy.classify_regime(coeffs, model, cfg.symmetry, report=report)
        out["regime"] = regime.to_dict()
        out["coeffs"] = coeffs.to_dict()
    print(json.dumps(_jsonify(out), sort_keys=True, indent=1))
    if not report.passed:
        print(f"well hypothesis failed: {report.reason}", file=sys.stderr)
        return EXIT_HWELL
    return EXIT_OK


def _cmd_predict(cfg, args):
    pot = expr.parse_potential(cfg.expression, cfg.dim)
    _validate_finite(pot, cfg.domain)
    report = landscape.analyze_landscape(
        pot, cfg.domain, grid_density=cfg.grid_density, resolution=cfg.flood_resolution
    )
    if not report.passed:
        print(f"well hypothesis failed: {report.reason}", file=sys.stderr)
        return EXIT_HWELL
    prediction = asy.predict(report, declared_symmetry=cfg.symmetry)
    out = prediction.to_dict()
    out["per_h"] = []
    if prediction.regime.tag != "indeterminate":
        for h in cfg.ladder:
            lam1, lam2, note = asy.predict_eigenvalues(prediction.model, prediction.regime, h)
            out["per_h"].append({"h": h, "lambda1": lam1, "lambda2": lam2, "note": note})
    print(json.dumps(_jsonify(out), sort_keys=True, indent=1))
    return EXIT_OK


def _cmd_spectrum(cfg, args):
    pot = expr.parse_potential(cfg.expression, cfg.dim)
    _validate_finite(pot, cfg.domain)
    h = cfg.ladder[0]
    op = spectral.discretize_generator(pot, cfg.domain, h, _mesh_arg(cfg))
    sol = spectral.lowest_spectrum(op, k=min(cfg.k, 6))
    m = spectral.qsd_measure(sol)
    out = {
        "h": h,
        "mesh": list(cfg.mesh),
        "eigenvalues": [float(v) for v in sol.eigenvalues],
        "n_below_sqrt_h_half": int(np.sum(sol.eigenvalues < math.sqrt(h) / 2.0)),
        "residual_max": float(sol.residuals.max()),
        "exit_normalization": spectral.exit_expectation(sol, lambda p: 1.0),
    }
    print(json.dumps(_jsonify(out), sort_keys=True, indent=1))
    if args.out:
        import os

        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "eigenstate.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*("xy"[: cfg.dim]), "u_h", "qsd_weight"])
            u = sol.u_samples()
            for p, ui, wi in zip(op.mesh.points, u, m.weights):
                w.writerow([*p, ui, wi])
        print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_simulate(cfg, args):
    pot = expr.parse_potential(cfg.expression, cfg.dim)
    _validate_finite(pot, cfg.domain)
    report = landscape.analyze_landscape(
        pot, cfg.domain, grid_density=cfg.grid_density, resolution=cfg.flood_resolution
    )
    if not report.passed:
        print(f"well hypothesis failed: {report.reason}", file=sys.stderr)
        return EXIT_HWELL
    prediction = asy.predict(report, declared_symmetry=cfg.symmetry)
    block = _sde_stage(cfg, pot, report, prediction, {})
    raw = block.pop("_raw")
    print(json.dumps(_jsonify(block), sort_keys=True, indent=1))
    if args.out:
        import os

        os.makedirs(args.out, exist_ok=True)
        for path in (
            sde.export_records_csv(raw["records"], os.path.join(args.out, "exit_records.csv")),
            sde.export_histogram_csv(raw["histogram"], os.path.join(args.out, "exit_histogram.csv")),
            sde.export_ensemble_csv(raw["ensemble"], os.path.join(args.out, "ensemble.csv")),
        ):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_compare(cfg, args):
    rep = run_pipeline(cfg, progress=lambda m: print(f"[metastab] {m}", file=sys.stderr))
    written = emit_report(rep, cfg.out_dir, cfg.formats)
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    print(rep.meta["content_hash"])
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="metastab",
        description="Double-well quasi-stationary distribution toolkit: "
        "asymptotic prediction, spectral verification, Monte Carlo simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("analyze", _cmd_analyze),
        ("predict", _cmd_predict),
        ("spectrum", _cmd_spectrum),
        ("simulate", _cmd_simulate),
        ("compare", _cmd_compare),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a run config (INI)")
        p.add_argument("--h", type=float, default=None, help="restrict the ladder to one rung")
        p.add_argument("--mesh", default=None, help="override spectral mesh size")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--format", default=None, help="comma list: json,csv,gnuplot")
        p.set_defaults(fn=fn)

    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.from_file(
            args.config,
            overrides={
                "h": args.h,
                "mesh": args.mesh,
                "seed": args.seed,
                "out": args.out,
                "format": args.format,
            },
        )
        return args.fn(cfg, args)
    except (ConfigError, expr.ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except landscape.LandscapeError as exc:
        print(f"landscape failure: {exc}", file=sys.stderr)
        return EXIT_HWELL
    except (spectral.SpectralError, sde.SdeError, asy.AsymptoticsError, expr.EvalDomainError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
