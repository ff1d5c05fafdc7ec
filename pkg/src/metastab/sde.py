"""Monte Carlo route: killed Langevin paths and a Fleming-Viot particle system.

Trajectories follow Euler-Maruyama with per-trajectory counter-based random
streams (Philox keyed by (master_seed, trajectory index)), so results are
reproducible and independent of batching or scheduling. A step that crosses
the boundary kills the path at the segment-boundary intersection; steps that
stay inside but come near the wall are additionally killed with the
Brownian-bridge probability exp(-2 d(X) d(Y) / (h dt)) against the nearest
wall, which removes the leading discrete-monitoring bias.

The Fleming-Viot system evolves all particles with the same scheme and
respawns an exiting particle at the position of a survivor chosen uniformly
at random; its empirical measure after burn-in approximates the
quasi-stationary distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np

from .expr import gradient_many, value_many
from .landscape import Disk, Interval, Rectangle

__all__ = [
    "SimConfig",
    "ExitRecordSet",
    "ParticleEnsemble",
    "ExitHistogram",
    "SdeError",
    "simulate_killed_paths",
    "fleming_viot_qsd",
    "exit_histogram",
    "well_occupancy",
    "sample_qsd",
]

DT_HARD_CAP = 1e-2
BRIDGE_RANGE = 3.0  # apply the bridge test within 3 sqrt(h dt) of the wall


class SdeError(RuntimeError):
    pass


@dataclass
class SimConfig:
    h: float
    dt: float
    n_traj: int = 1000
    master_seed: int = 0
    bridge_correction: bool = True
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > DT_HARD_CAP:
            raise ValueError(f"dt exceeds the hard cap {DT_HARD_CAP}")
        if self.h <= 0:
            raise ValueError("h must be positive")

    def check_guidance(self, pot, dom):
        pts = dom.seed_grid(32)
        gmax = float(np.linalg.norm(gradient_many(pot, pts), axis=1).max())
        guide = 0.01 * min(1.0, self.h) / max(gmax**2, 1e-12)
        if self.dt > guide:
            warnings.warn(
                f"dt={self.dt:g} exceeds the guidance 0.01*min(1,h)/max|grad f|^2 = {guide:.3g}"
            )


@dataclass(eq=False)
class ExitRecordSet:
    positions: np.ndarray  # (m, d) on the boundary
    times: np.ndarray  # (m,)
    steps: np.ndarray  # (m,)
    censored: int
    n_traj: int
    config: SimConfig

    @property
    def n_exited(self):
        return len(self.times)

    def time_stats(self):
        if self.n_exited == 0:
            return {"mean": None, "var": None}
        return {"mean": float(self.times.mean()), "var": float(self.times.var())}


@dataclass(eq=False)
class ParticleEnsemble:
    positions: np.ndarray  # (N, d), strictly interior
    generations: int
    respawns: int
    series_times: np.ndarray
    series_frac1: np.ndarray
    series_frac2: np.ndarray
    burn_in: float
    stationary: bool  # two halves of the retained series agree within 2 sigma

    def retained(self):
        keep = self.series_times >= self.burn_in
        return self.series_times[keep], self.series_frac1[keep], self.series_frac2[keep]

    def mean_occupancy(self):
        _, f1, f2 = self.retained()
        return float(f1.mean()), float(f2.mean())


@dataclass(eq=False)
class ExitHistogram:
    centers: np.ndarray  # (nbins, d) saddle locations
    counts: np.ndarray
    other: int
    censored: int
    radius: float

    @property
    def total(self):
        return int(self.counts.sum() + self.other)

    def frequencies(self):
        t = max(self.total, 1)
        return self.counts / t, self.other / t

    def standard_errors(self):
        t = max(self.total, 1)
        p = self.counts / t
        return np.sqrt(p * (1.0 - p) / t)


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def _wall_distance(dom, pts):
    """Distance to the boundary and the nearest boundary point, vectorized."""
    p = np.atleast_2d(pts)
    if isinstance(dom, Interval):
        x = p[:, 0]
        dl = x - dom.a
        dr = dom.b - x
        d = np.minimum(dl, dr)
        proj = np.where(dl <= dr, dom.a, dom.b)[:, None]
        return d, proj
    if isinstance(dom, Rectangle):
        cand = np.stack(
            [p[:, 0] - dom.ax, dom.bx - p[:, 0], p[:, 1] - dom.ay, dom.by - p[:, 1]], axis=1
        )
        which = np.argmin(cand, axis=1)
        d = cand[np.arange(len(p)), which]
        proj = p.copy()
        proj[which == 0, 0] = dom.ax
        proj[which == 1, 0] = dom.bx
        proj[which == 2, 1] = dom.ay
        proj[which == 3, 1] = dom.by
        return d, proj
    if isinstance(dom, Disk):
        v = p - np.array([dom.cx, dom.cy])[None, :]
        r = np.linalg.norm(v, axis=1)
        d = dom.radius - r
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, v / np.maximum(r, 1e-300)[:, None], np.array([[1.0, 0.0]]))
        proj = np.array([dom.cx, dom.cy])[None, :] + dom.radius * unit
        return d, proj
    raise ValueError("unsupported domain")


def _crossing_point(dom, x0, x1):
    """Intersection of the segment x0 -> x1 (x1 outside) with the boundary."""
    if isinstance(dom, Interval):
        a, b = dom.a, dom.b
        x = x1[:, 0]
        out = np.where(x <= a, a, b)
        th = (out - x0[:, 0]) / np.where(x1[:, 0] - x0[:, 0] == 0, 1e-300, x1[:, 0] - x0[:, 0])
        return out[:, None], np.clip(th, 0.0, 1.0)
    if isinstance(dom, Rectangle):
        d = x1 - x0
        th = np.full(len(x0), np.inf)
        for axis, lo, hi in ((0, dom.ax, dom.bx), (1, dom.ay, dom.by)):
            for wall in (lo, hi):
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = (wall - x0[:, axis]) / np.where(d[:, axis] == 0, 1e-300, d[:, axis])
                ok = (t >= 0) & (t <= 1)
                th = np.where(ok & (t < th), t, th)
        th = np.where(np.isfinite(th), th, 1.0)
        pts = x0 + th[:, None] * d
        # snap the crossing coordinate exactly onto the wall
        _, proj = _wall_distance(dom, pts)
        return proj, th
    if isinstance(dom, Disk):
        c = np.array([dom.cx, dom.cy])[None, :]
        u = x0 - c
        v = x1 - x0
        a = np.sum(v * v, axis=1)
        b = 2.0 * np.sum(u * v, axis=1)
        cc = np.sum(u * u, axis=1) - dom.radius**2
        disc = np.maximum(b * b - 4 * a * cc, 0.0)
        th = (-b + np.sqrt(disc)) / (2 * np.maximum(a, 1e-300))
        th = np.clip(th, 0.0, 1.0)
        pts = x0 + th[:, None] * v
        d, proj = _wall_distance(dom, pts)
        return proj, th
    raise ValueError("unsupported domain")


def _stream(master_seed, index):
    return np.random.Generator(np.random.Philox(key=[int(master_seed) & (2**64 - 1), int(index)]))


# ---------------------------------------------------------------------------
# killed paths
# ---------------------------------------------------------------------------

_CHUNK = 2048
_BLOCK = 1024


def simulate_killed_paths(pot, dom, init, cfg):
    """Euler-Maruyama paths killed at the boundary.

    init is a strictly interior point or an (n_traj, d) array of starting
    positions (for example a quasi-stationary sample).
    """
    d = dom.dim
    init = np.atleast_2d(np.asarray(init, dtype=float))
    if init.shape[1] != d:
        raise ValueError("initial point dimension does not match the domain")
    if len(init) == 1:
        init = np.repeat(init, cfg.n_traj, axis=0)
    if len(init) != cfg.n_traj:
        raise ValueError("need one initial position per trajectory")
    if not np.all(dom.contains(init, margin=0.0)):
        raise ValueError("initial positions must be strictly interior")
    cfg.check_guidance(pot, dom)

    sqhdt = np.sqrt(cfg.h * cfg.dt)
    bridge_zone = BRIDGE_RANGE * sqhdt
    positions = np.zeros((cfg.n_traj, d))
    times = np.zeros(cfg.n_traj)
    steps = np.zeros(cfg.n_traj, dtype=np.int64)
    exited = np.zeros(cfg.n_traj, dtype=bool)

    for start in range(0, cfg.n_traj, _BLOCK):
        idxs = np.arange(start, min(start + _BLOCK, cfg.n_traj))
        gens = [_stream(cfg.master_seed, i) for i in idxs]
        X = init[idxs].copy()
        active = np.arange(len(idxs))
        step_count = 0
        while len(active) > 0 and step_count < cfg.max_steps:
            chunk = min(_CHUNK, cfg.max_steps - step_count)
            # per-trajectory streams: d normals + 1 uniform per step, always consumed
            noise = np.empty((len(active), chunk, d))
            unis = np.empty((len(active), chunk))
            for a, tr in enumerate(active):
                g = gens[tr]
                noise[a] = g.standard_normal((chunk, d))
                unis[a] = g.random(chunk)
            Xa = X[active]
            alive = np.ones(len(active), dtype=bool)
            for s in range(chunk):
                if not np.any(alive):
                    break
                rows = np.nonzero(alive)[0]
                x0 = Xa[rows]
                grad = gradient_many(pot, x0)
                x1 = x0 - grad * cfg.dt + sqhdt * noise[rows, s]
                inside = dom.contains(x1, margin=0.0)
                gstep = step_count + s
                # crossing exits
                out_rows = rows[~inside]
                if len(out_rows) > 0:
                    cpts, th = _crossing_point(dom, x0[~inside], x1[~inside])
                    gl = active[out_rows]
                    positions[idxs[gl]] = cpts
                    times[idxs[gl]] = (gstep + th) * cfg.dt
                    steps[idxs[gl]] = gstep + 1
                    exited[idxs[gl]] = True
                    alive[out_rows] = False
                # bridge kills among the survivors near the wall; the recorded
                # position projects the closer endpoint so the displacement
                # stays within the delta_wall = 2 sqrt(h dt) contract
                in_rows = rows[inside]
                if cfg.bridge_correction and len(in_rows) > 0:
                    d0, proj0 = _wall_distance(dom, x0[inside])
                    d1, proj1 = _wall_distance(dom, x1[inside])
                    near = np.minimum(d0, d1) <= bridge_zone
                    if np.any(near):
                        p = np.exp(-2.0 * d0[near] * d1[near] / (cfg.h * cfg.dt))
                        disp = np.minimum(d0[near], d1[near])
                        kill = (unis[in_rows, s][near] < p) & (disp <= 2.0 * sqhdt)
                        if np.any(kill):
                            krows = in_rows[near][kill]
                            gl = active[krows]
                            closer0 = (d0[near] <= d1[near])[kill]
                            proj = np.where(
                                closer0[:, None], proj0[near][kill], proj1[near][kill]
                            )
                            positions[idxs[gl]] = proj
                            times[idxs[gl]] = (gstep + 1) * cfg.dt
                            steps[idxs[gl]] = gstep + 1
                            exited[idxs[gl]] = True
                            alive[krows] = False
                # killed rows keep stale coordinates; they are never read again
                if len(in_rows) > 0:
                    Xa[in_rows] = x1[inside]
            X[active] = Xa
            active = active[alive]
            step_count += chunk

    m = exited
    return ExitRecordSet(
        positions=positions[m],
        times=times[m],
        steps=steps[m],
        censored=int(cfg.n_traj - m.sum()),
        n_traj=cfg.n_traj,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Fleming-Viot
# ---------------------------------------------------------------------------


def fleming_viot_qsd(pot, dom, cfg, n_particles, t_burn, t_total=None, record_every=10, wells=None):
    """Fleming-Viot approximation of the QSD with uniform-survivor respawn.

    Runs until t_total (default 2*t_burn), discards the burn-in, and records
    the well-occupancy series (labels from the supplied decomposition;
    without one, by the sign of the first coordinate).
    """
    if n_particles < 100:
        raise ValueError("need at least 100 particles")
    if t_total is None:
        t_total = 2.0 * t_burn
    cfg.check_guidance(pot, dom)
    d = dom.dim
    rng = _stream(cfg.master_seed, 2**32 + 1)

    # deterministic start: uniform over the domain interior
    box = _bounding_box(dom)
    X = np.empty((0, d))
    while len(X) < n_particles:
        cand = rng.uniform(box[0], box[1], size=(2 * n_particles, d))
        cand = cand[dom.contains(cand, margin=1e-9 * dom.diameter())]
        X = np.vstack([X, cand])
    X = X[:n_particles]

    sqhdt = np.sqrt(cfg.h * cfg.dt)
    bridge_zone = BRIDGE_RANGE * sqhdt
    n_steps = int(round(t_total / cfg.dt))
    respawns = 0
    rec_t, rec_f1, rec_f2 = [], [], []

    def labels_of(pts):
        if wells is not None:
            return wells.classify_points(pts)
        return np.where(pts[:, 0] < 0, 1, 2)

    for s in range(n_steps):
        grad = gradient_many(pot, X)
        Y = X - grad * cfg.dt + sqhdt * rng.standard_normal((n_particles, d))
        unis = rng.random(n_particles)
        inside = dom.contains(Y, margin=0.0)
        dead = ~inside
        if cfg.bridge_correction:
            d0, _ = _wall_distance(dom, X)
            d1, _ = _wall_distance(dom, Y)
            near = inside & (np.minimum(d0, np.where(inside, d1, np.inf)) <= bridge_zone)
            if np.any(near):
                p = np.exp(-2.0 * d0[near] * np.maximum(d1[near], 0.0) / (cfg.h * cfg.dt))
                dead[near] |= unis[near] < p
        if np.all(dead):
            raise SdeError(
                "all particles exited in one step: h and dt are grossly mismatched "
                f"(h={cfg.h}, dt={cfg.dt})"
            )
        n_dead = int(dead.sum())
        if n_dead > 0:
            survivors = np.nonzero(~dead)[0]
            donors = survivors[rng.integers(0, len(survivors), size=n_dead)]
            Y[dead] = Y[donors]
            respawns += n_dead
        X = Y
        if (s + 1) % record_every == 0:
            lab = labels_of(X)
            rec_t.append((s + 1) * cfg.dt)
            rec_f1.append(float(np.mean(lab == 1)))
            rec_f2.append(float(np.mean(lab == 2)))

    rec_t = np.asarray(rec_t)
    rec_f1 = np.asarray(rec_f1)
    rec_f2 = np.asarray(rec_f2)
    keep = rec_t >= t_burn
    stationary = True
    if keep.sum() >= 8:
        f1 = rec_f1[keep]
        half = len(f1) // 2
        m1, m2 = f1[:half].mean(), f1[half:].mean()
        # block means absorb the series autocorrelation the plain std misses
        nblk = 8
        blocks = np.array([b.mean() for b in np.array_split(f1, nblk)])
        sig_diff = blocks.std(ddof=1) * np.sqrt(2.0 / (nblk / 2.0))
        stationary = abs(m1 - m2) <= 2.0 * max(sig_diff, 1e-12)
    return ParticleEnsemble(
        positions=X,
        generations=n_steps,
        respawns=respawns,
        series_times=rec_t,
        series_frac1=rec_f1,
        series_frac2=rec_f2,
        burn_in=t_burn,
        stationary=stationary,
    )


def _bounding_box(dom):
    if isinstance(dom, Interval):
        return np.array([dom.a]), np.array([dom.b])
    if isinstance(dom, Rectangle):
        return np.array([dom.ax, dom.ay]), np.array([dom.bx, dom.by])
    return (
        np.array([dom.cx - dom.radius, dom.cy - dom.radius]),
        np.array([dom.cx + dom.radius, dom.cy + dom.radius]),
    )


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def exit_histogram(records, report, radius=None):
    """Bin exits by the nearest boundary saddle within the given radius."""
    saddles = report.boundary_saddles
    if len(saddles) == 0:
        raise SdeError("no boundary saddles to bin against")
    centers = np.vstack([s.location for s in saddles])
    if len(centers) > 1:
        dists = [
            np.linalg.norm(centers[i] - centers[j])
            for i in range(len(centers))
            for j in range(i + 1, len(centers))
        ]
        max_radius = 0.5 * min(dists)
    else:
        max_radius = 0.5 * report.domain.diameter()
    if radius is None:
        radius = max_radius
    if radius > max_radius * (1.0 + 1e-12):
        raise SdeError(f"bin radius {radius:g} overlaps bins (max {max_radius:g})")
    counts = np.zeros(len(centers), dtype=int)
    other = 0
    if records.n_exited > 0:
        dist = np.linalg.norm(
            records.positions[:, None, :] - centers[None, :, :], axis=2
        )
        nearest = np.argmin(dist, axis=1)
        within = dist[np.arange(len(nearest)), nearest] <= radius
        for b in range(len(centers)):
            counts[b] = int(np.sum(within & (nearest == b)))
        other = int(np.sum(~within))
    return ExitHistogram(centers, counts, other, records.censored, float(radius))


def well_occupancy(ens, dec):
    """Fractions of the final ensemble in C_1, C_2 and elsewhere."""
    lab = dec.classify_points(ens.positions)
    n = len(ens.positions)
    f1 = float(np.sum(lab == 1)) / n
    f2 = float(np.sum(lab == 2)) / n
    return f1, f2, 1.0 - f1 - f2


def sample_qsd(measure, n, seed):
    """Draw starting positions from a discrete QSD measure (node sampling)."""
    rng = _stream(seed, 2**33 + 7)
    idx = rng.choice(len(measure.weights), size=n, p=measure.weights)
    return measure.mesh.points[idx].copy()


# ---------------------------------------------------------------------------
# flat-file export
# ---------------------------------------------------------------------------


def export_records_csv(records, path):
    import csv

    d = records.positions.shape[1] if records.n_exited else 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*("xy"[:d]), "exit_time", "steps"])
        for p, t, s in zip(records.positions, records.times, records.steps):
            w.writerow([*p, t, int(s)])
    return path


def export_histogram_csv(hist, path):
    import csv

    freqs, other = hist.frequencies()
    sig = hist.standard_errors()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["center", "count", "frequency", "std_error"])
        for c, n, f, s in zip(hist.centers, hist.counts, freqs, sig):
            w.writerow([" ".join(map(str, c)), int(n), f, s])
        w.writerow(["other", hist.other, other, ""])
        w.writerow(["censored", hist.censored, "", ""])
    return path


def export_ensemble_csv(ens, path):
    import csv

    d = ens.positions.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list("xy"[:d]))
        for p in ens.positions:
            w.writerow(list(p))
    return path
