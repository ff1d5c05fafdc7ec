"""Potential landscape analysis: critical points, boundary saddles, wells.

Everything the double-well hypothesis needs is located and classified here:
interior minima and index-1 saddles (Newton on the exact gradient from grid
seeds), generalized saddle points on the boundary (local minima of the
boundary restriction with positive outward normal derivative), the two
sublevel-set wells with their boundary contacts, and the barrier height.

Conventions:
  - in 1D the tangential Hessian determinant of a boundary point is 1
    (determinant over an empty index set), which keeps the prefactor
    formulas dimension-uniform;
  - in 1D an interior critical point with f'' < 0 has Hessian index 1, so it
    is reported with kind "maximum" but still carries a negative eigenvalue
    and participates in the saddle taxonomy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np

from .expr import ExpressionTree, gradient_many, value_many

__all__ = [
    "Interval",
    "Rectangle",
    "Disk",
    "parse_domain",
    "CriticalPoint",
    "BoundarySaddle",
    "WellDecomposition",
    "HWellReport",
    "LandscapeError",
    "locate_critical_points",
    "locate_boundary_saddles",
    "decompose_wells",
    "check_hwell",
    "analyze_landscape",
]


class LandscapeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("interval needs b > a")

    dim = 1

    def diameter(self):
        return self.b - self.a

    def contains(self, pts, margin=0.0):
        x = np.atleast_2d(pts)[:, 0]
        return (x > self.a + margin) & (x < self.b - margin)

    def seed_grid(self, density):
        xs = np.linspace(self.a, self.b, density + 2)[1:-1]
        return xs[:, None]

    def boundary_probes(self, n=None):
        pts = np.array([[self.a], [self.b]])
        normals = np.array([[-1.0], [1.0]])
        return pts, normals

    def to_dict(self):
        return {"kind": "interval", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Rectangle:
    ax: float
    bx: float
    ay: float
    by: float

    def __post_init__(self):
        if not (self.bx > self.ax and self.by > self.ay):
            raise ValueError("rectangle needs bx > ax and by > ay")

    dim = 2

    def diameter(self):
        return float(np.hypot(self.bx - self.ax, self.by - self.ay))

    def contains(self, pts, margin=0.0):
        p = np.atleast_2d(pts)
        return (
            (p[:, 0] > self.ax + margin)
            & (p[:, 0] < self.bx - margin)
            & (p[:, 1] > self.ay + margin)
            & (p[:, 1] < self.by - margin)
        )

    def seed_grid(self, density):
        xs = np.linspace(self.ax, self.bx, density + 2)[1:-1]
        ys = np.linspace(self.ay, self.by, density + 2)[1:-1]
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def edges(self):
        # (start, unit tangent, length, outward normal)
        return [
            (np.array([self.ax, self.ay]), np.array([1.0, 0.0]), self.bx - self.ax, np.array([0.0, -1.0])),
            (np.array([self.ax, self.by]), np.array([1.0, 0.0]), self.bx - self.ax, np.array([0.0, 1.0])),
            (np.array([self.ax, self.ay]), np.array([0.0, 1.0]), self.by - self.ay, np.array([-1.0, 0.0])),
            (np.array([self.bx, self.ay]), np.array([0.0, 1.0]), self.by - self.ay, np.array([1.0, 0.0])),
        ]

    def boundary_probes(self, n=512):
        pts, normals = [], []
        for start, tang, length, nrm in self.edges():
            ts = np.linspace(0.0, length, n)
            pts.append(start[None, :] + ts[:, None] * tang[None, :])
            normals.append(np.repeat(nrm[None, :], n, axis=0))
        return np.vstack(pts), np.vstack(normals)

    def to_dict(self):
        return {"kind": "rectangle", "ax": self.ax, "bx": self.bx, "ay": self.ay, "by": self.by}


@dataclass(frozen=True)
class Disk:
    cx: float
    cy: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk needs radius > 0")

    dim = 2

    def diameter(self):
        return 2.0 * self.radius

    def contains(self, pts, margin=0.0):
        p = np.atleast_2d(pts)
        r = np.hypot(p[:, 0] - self.cx, p[:, 1] - self.cy)
        return r < self.radius - margin

    def seed_grid(self, density):
        xs = np.linspace(self.cx - self.radius, self.cx + self.radius, density + 2)[1:-1]
        ys = np.linspace(self.cy - self.radius, self.cy + self.radius, density + 2)[1:-1]
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return pts[self.contains(pts, margin=1e-6 * self.radius)]

    def point_at(self, theta):
        return np.column_stack(
            [self.cx + self.radius * np.cos(theta), self.cy + self.radius * np.sin(theta)]
        )

    def boundary_probes(self, n=1024):
        th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        pts = self.point_at(th)
        normals = np.column_stack([np.cos(th), np.sin(th)])
        return pts, normals

    def to_dict(self):
        return {"kind": "disk", "cx": self.cx, "cy": self.cy, "radius": self.radius}


def parse_domain(desc):
    """Build a domain from a dict like {'kind': 'interval', 'a': -1.3, 'b': 1.3}."""
    kind = desc["kind"]
    if kind == "interval":
        return Interval(float(desc["a"]), float(desc["b"]))
    if kind == "rectangle":
        return Rectangle(float(desc["ax"]), float(desc["bx"]), float(desc["ay"]), float(desc["by"]))
    if kind == "disk":
        return Disk(float(desc.get("cx", 0.0)), float(desc.get("cy", 0.0)), float(desc["radius"]))
    raise ValueError(f"unknown domain kind '{kind}'")


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CriticalPoint:
    location: np.ndarray
    value: float
    hessian: np.ndarray
    kind: str  # minimum | saddle_index_1 | maximum
    index: int  # number of negative Hessian eigenvalues
    negative_eigenvalue: float | None
    grad_norm: float

    def to_dict(self):
        return {
            "location": list(map(float, self.location)),
            "value": self.value,
            "kind": self.kind,
            "index": self.index,
            "negative_eigenvalue": self.negative_eigenvalue,
        }


@dataclass(eq=False)
class BoundarySaddle:
    location: np.ndarray
    value: float
    normal_derivative: float
    tangential_hessian_det: float  # 1 when d == 1
    well_assignment: int | None = None  # 1 | 2 | None

    def to_dict(self):
        return {
            "location": list(map(float, self.location)),
            "value": self.value,
            "normal_derivative": self.normal_derivative,
            "tangential_hessian_det": self.tangential_hessian_det,
            "well_assignment": self.well_assignment,
        }


@dataclass(eq=False)
class WellDecomposition:
    threshold: float  # min over the boundary of f
    n_components: int
    minima: list  # the two CriticalPoint minima ordered lexicographically
    contacts: dict  # well index (1|2) -> list of BoundarySaddle
    connecting: list  # z_{3,1..m_3}: CriticalPoint saddles joining the wells
    other_saddles: list  # remaining generalized saddle points (z_{3,m_3+1..n_3})
    grid_points: np.ndarray  # flood-fill mesh nodes, shape (N, d)
    labels: np.ndarray  # 0 none, 1 C_1, 2 C_2 per node
    resolution: int
    minima_in_same_component: bool = False
    well_touches_boundary: tuple = (False, False)

    @property
    def m3(self):
        return len(self.connecting)

    @property
    def counts(self):
        n1 = len(self.contacts.get(1, ()))
        n2 = len(self.contacts.get(2, ()))
        n3 = len(self.connecting) + len(self.other_saddles)
        return {"n1": n1, "n2": n2, "n3": n3, "m3": len(self.connecting)}

    def classify_points(self, pts):
        """Label arbitrary points: 0 outside both wells, else 1 or 2.

        Membership is the sublevel test f < threshold plus the component label
        of the nearest decomposition node, so it is consistent with the flood
        fill at its resolution.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros(len(pts), dtype=int)
        inside = np.nonzero(self._fvals(pts) < self.threshold)[0]
        if len(inside) == 0:
            return out
        labeled = self.labels > 0
        if not np.any(labeled):
            return out
        tree = self._kdtree()
        _, idx = tree.query(pts[inside])
        out[inside] = self._labeled_labels[idx]
        return out

    def _fvals(self, pts):
        return value_many(self._pot, pts)

    def attach(self, pot):
        self._pot = pot
        return self

    def _kdtree(self):
        if not hasattr(self, "_tree"):
            from scipy.spatial import cKDTree

            mask = self.labels > 0
            self._tree = cKDTree(self.grid_points[mask])
            self._labeled_labels = self.labels[mask]
        return self._tree

    def to_dict(self):
        return {
            "threshold": self.threshold,
            "n_components": self.n_components,
            "counts": self.counts,
            "minima": [m.to_dict() for m in self.minima],
            "contacts": {str(k): [s.to_dict() for s in v] for k, v in self.contacts.items()},
            "connecting_saddles": [c.to_dict() for c in self.connecting],
            "other_saddles": [
                s.to_dict() for s in self.other_saddles
            ],
            "well_touches_boundary": list(self.well_touches_boundary),
        }


@dataclass(eq=False)
class HWellReport:
    verdict: str  # "pass" | "fail"
    reason: str | None
    H: float | None
    potential: ExpressionTree
    domain: object
    critical_points: list
    boundary_saddles: list
    wells: WellDecomposition | None
    min_value: float | None = None

    @property
    def passed(self):
        return self.verdict == "pass"

    def minima(self):
        return self.wells.minima

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "H": self.H,
            "min_value": self.min_value,
            "domain": self.domain.to_dict(),
            "potential": self.potential.unparse(),
            "critical_points": [c.to_dict() for c in self.critical_points],
            "boundary_saddles": [s.to_dict() for s in self.boundary_saddles],
            "wells": self.wells.to_dict() if self.wells is not None else None,
        }


# ---------------------------------------------------------------------------
# critical points
# ---------------------------------------------------------------------------

_MAX_NEWTON = 60


def locate_critical_points(pot, dom, grid_density=48):
    """Newton iteration on the exact gradient from every grid seed.

    Converged interior points are deduplicated with merge radius
    1e-8 * domain diameter and classified by Hessian signature. Seeds
    converging outside the closure or onto the boundary are discarded.
    """
    if grid_density < 16:
        raise ValueError("grid_density must be >= 16 per axis")
    seeds = dom.seed_grid(grid_density)
    diam = dom.diameter()
    probe_gnorm = np.linalg.norm(gradient_many(pot, seeds), axis=1).max()
    gtol = 1e-10 * (1.0 + probe_gnorm)
    merge_r = 1e-8 * diam

    found = []
    for seed in seeds:
        x = seed.astype(float).copy()
        ok = False
        for _ in range(_MAX_NEWTON):
            g = pot.grad(x)
            if np.linalg.norm(g) <= gtol:
                ok = True
                break
            H = pot.hess(x)
            try:
                step = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 0.5 * diam:
                break
            x = x + step
            if np.linalg.norm(step) < 1e-14 * diam:
                ok = np.linalg.norm(pot.grad(x)) <= gtol
                break
        if ok and dom.contains(x[None, :], margin=1e-7 * diam)[0]:
            found.append(x)

    # deduplicate by canonical coordinate order so the result is independent
    # of seed scheduling
    found.sort(key=lambda p: tuple(p))
    unique = []
    for x in found:
        if not any(np.linalg.norm(x - u) <= merge_r for u in unique):
            unique.append(x)

    pts = []
    for x in unique:
        H = pot.hess(x)
        eigs = np.linalg.eigvalsh(H)
        if np.min(np.abs(eigs)) <= 1e-8 * np.max(np.abs(eigs)):
            raise LandscapeError(
                f"Morse violation: near-singular Hessian at critical point {x.tolist()}"
            )
        index = int(np.sum(eigs < 0))
        d = len(x)
        kind = "minimum" if index == 0 else ("maximum" if index == d else "saddle_index_1")
        pts.append(
            CriticalPoint(
                location=x,
                value=pot.value(x),
                hessian=H,
                kind=kind,
                index=index,
                negative_eigenvalue=float(eigs[0]) if index == 1 else None,
                grad_norm=float(np.linalg.norm(pot.grad(x))),
            )
        )

    _warn_missed_cells(pot, dom, grid_density, pts)
    return pts


def _warn_missed_cells(pot, dom, grid_density, pts):
    # a sign change of every gradient component across a cell with no converged
    # point nearby suggests Newton missed something there
    seeds = dom.seed_grid(grid_density)
    if dom.dim == 1:
        xs = seeds[:, 0]
        gs = gradient_many(pot, seeds)[:, 0]
        flips = np.nonzero(np.sign(gs[:-1]) * np.sign(gs[1:]) < 0)[0]
        cell = xs[1] - xs[0]
        for i in flips:
            mid = 0.5 * (xs[i] + xs[i + 1])
            if not any(abs(p.location[0] - mid) < 2 * cell for p in pts):
                warnings.warn(f"gradient sign change near x={mid:.6g} with no converged critical point")
    # 2D cell bookkeeping is noisy; converged-seed coverage is checked by tests instead


# ---------------------------------------------------------------------------
# boundary saddles
# ---------------------------------------------------------------------------


def locate_boundary_saddles(pot, dom, probe_density=2048):
    """Generalized saddle points: local minima of f|_boundary with dn f > 0."""
    pts, normals = dom.boundary_probes(probe_density if dom.dim == 2 else None)
    G = gradient_many(pot, pts)
    gnorm = np.linalg.norm(G, axis=1)
    scale = 1.0 + gnorm.max()
    if gnorm.min() <= 1e-9 * scale:
        i = int(np.argmin(gnorm))
        raise LandscapeError(
            f"|grad f| vanishes on the boundary near {pts[i].tolist()} (violates the well hypothesis)"
        )

    out = []
    if dom.dim == 1:
        for p, n in zip(*dom.boundary_probes()):
            dn = float(np.dot(pot.grad(p), n))
            if dn > 0:
                out.append(
                    BoundarySaddle(
                        location=p.astype(float),
                        value=pot.value(p),
                        normal_derivative=dn,
                        tangential_hessian_det=1.0,
                    )
                )
        return out

    if isinstance(dom, Rectangle):
        for start, tang, length, nrm in dom.edges():
            for t in _segment_minima(pot, start, tang, length, probe_density):
                loc = start + t * tang
                dn = float(np.dot(pot.grad(loc), nrm))
                d2 = float(tang @ pot.hess(loc) @ tang)
                if d2 <= 0:
                    raise LandscapeError(
                        f"Morse violation of f|_boundary at {loc.tolist()}: tangential second derivative <= 0"
                    )
                if dn > 0:
                    out.append(BoundarySaddle(loc, pot.value(loc), dn, d2))
    elif isinstance(dom, Disk):
        for th in _circle_minima(pot, dom, probe_density):
            loc = dom.point_at(np.array([th]))[0]
            nrm = np.array([np.cos(th), np.sin(th)])
            tang = np.array([-np.sin(th), np.cos(th)]) * dom.radius
            g = pot.grad(loc)
            # d2/dtheta2 of f(c(theta)), then rescaled to arclength
            d2 = float(tang @ pot.hess(loc) @ tang - dom.radius * np.dot(g, nrm))
            d2s = d2 / dom.radius**2
            dn = float(np.dot(g, nrm))
            if d2s <= 0:
                raise LandscapeError(
                    f"Morse violation of f|_boundary at {loc.tolist()}: tangential second derivative <= 0"
                )
            if dn > 0:
                out.append(BoundarySaddle(loc, pot.value(loc), dn, d2s))
    else:
        raise ValueError("unsupported domain")

    out.sort(key=lambda s: tuple(s.location))
    return out


def _segment_minima(pot, start, tang, length, n):
    ts = np.linspace(0.0, length, n + 1)
    pts = start[None, :] + ts[:, None] * tang[None, :]
    vals = value_many(pot, pts)
    idx = np.nonzero((vals[1:-1] < vals[:-2]) & (vals[1:-1] <= vals[2:]))[0] + 1
    corner_margin = 2.0 * length / n
    found = []
    for i in idx:
        t = _newton_tangent(pot, lambda u: start + u * tang, tang, ts[i], 0.0, length)
        if t is None or t < corner_margin or t > length - corner_margin:
            continue
        if not any(abs(t - u) < corner_margin for u in found):
            found.append(t)
    return sorted(found)


def _newton_tangent(pot, path, tang, t0, lo, hi):
    t = t0
    for _ in range(_MAX_NEWTON):
        p = path(t)
        d1 = float(np.dot(pot.grad(p), tang))
        d2 = float(tang @ pot.hess(p) @ tang)
        if d2 == 0:
            return None
        step = -d1 / d2
        t = t + step
        if t < lo - 0.01 * (hi - lo) or t > hi + 0.01 * (hi - lo):
            return None
        if abs(step) < 1e-14 * max(1.0, hi - lo):
            return min(max(t, lo), hi)
    return None


def _circle_minima(pot, dom, n):
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    vals = value_many(pot, dom.point_at(th))
    prev = np.roll(vals, 1)
    nxt = np.roll(vals, -1)
    idx = np.nonzero((vals < prev) & (vals <= nxt))[0]
    found = []
    for i in idx:
        t = th[i]
        for _ in range(_MAX_NEWTON):
            loc = dom.point_at(np.array([t]))[0]
            g = pot.grad(loc)
            tang = np.array([-np.sin(t), np.cos(t)]) * dom.radius
            nrm = np.array([np.cos(t), np.sin(t)])
            d1 = float(np.dot(g, tang))
            d2 = float(tang @ pot.hess(loc) @ tang - dom.radius * np.dot(g, nrm))
            if d2 == 0:
                break
            step = -d1 / d2
            t = (t + step) % (2 * np.pi)
            if abs(step) < 1e-14:
                break
        if not any(min(abs(t - u), 2 * np.pi - abs(t - u)) < 4 * np.pi / n for u in found):
            found.append(t)
    return sorted(found)


# ---------------------------------------------------------------------------
# wells
# ---------------------------------------------------------------------------


def decompose_wells(pot, dom, resolution=None, critical_points=None, boundary_saddles=None):
    """Flood-fill the strict sublevel set {f < min_boundary f} and label wells.

    Touching wells are separated by cutting a 2-cell ball around interior
    index-1 critical points sitting exactly at the threshold (relative
    tolerance 1e-9); a cut point adjacent to both labels is recorded as a
    connecting saddle z_{3,j}.
    """
    if resolution is None:
        resolution = 1024 if dom.dim == 1 else 512
    if critical_points is None:
        critical_points = locate_critical_points(pot, dom)
    if boundary_saddles is None:
        boundary_saddles = locate_boundary_saddles(pot, dom)

    minima = sorted((c for c in critical_points if c.kind == "minimum"), key=lambda c: tuple(c.location))
    if len(minima) == 0:
        raise LandscapeError("no interior minima found")

    bpts, _ = dom.boundary_probes(4096 if dom.dim == 2 else None)
    probe_min = float(value_many(pot, bpts).min())
    saddle_vals = [s.value for s in boundary_saddles]
    threshold = min(saddle_vals) if saddle_vals else probe_min
    if probe_min < threshold - 1e-12 * (1 + abs(threshold)):
        threshold = probe_min

    pts, shape, spacing = _flood_grid(dom, resolution)
    fv = value_many(pot, pts)
    sub = (fv < threshold) & dom.contains(pts, margin=0.0)

    # cut around threshold-level interior index-1 points so touching wells separate
    cut_candidates = [
        c
        for c in critical_points
        if c.index == 1 and abs(c.value - threshold) <= 1e-9 * max(1.0, abs(threshold))
    ]
    cut_r = 2.05 * max(spacing)
    for c in cut_candidates:
        near = np.linalg.norm(pts - c.location[None, :], axis=1) <= cut_r
        sub = sub & ~near

    comp = _label_components(sub, shape)
    n_components = int(comp.max())

    labels = np.zeros(len(pts), dtype=int)
    well_ids = []
    for i, m in enumerate(minima[:2], start=1):
        j = int(np.argmin(np.linalg.norm(pts - m.location[None, :], axis=1)))
        cid = comp[j]
        if cid == 0:
            # minimum sits in a cut ball or on the threshold; take nearest labeled node
            inside = np.nonzero(comp > 0)[0]
            if len(inside) == 0:
                raise LandscapeError("sublevel set is empty at this resolution")
            j = inside[np.argmin(np.linalg.norm(pts[inside] - m.location[None, :], axis=1))]
            cid = comp[j]
        well_ids.append(cid)
        labels[comp == cid] = i

    same_component = len(minima) >= 2 and len(set(well_ids)) == 1

    # connecting saddles: both labels present around the cut ball
    connecting = []
    for c in cut_candidates:
        near = np.linalg.norm(pts - c.location[None, :], axis=1) <= 2.0 * cut_r
        present = set(labels[near]) - {0}
        if present == {1, 2}:
            connecting.append(c)

    # contacts: nearest labeled node within 2 cells of each boundary saddle
    contact_r = 2.0 * max(spacing) * (1.0 + 1e-9)
    contacts = {1: [], 2: []}
    for s in boundary_saddles:
        d = np.linalg.norm(pts - s.location[None, :], axis=1)
        near = np.nonzero((d <= contact_r) & (labels > 0))[0]
        if len(near) == 0:
            s.well_assignment = None
            continue
        lab = set(labels[near])
        if len(lab) > 1:
            raise LandscapeError(
                f"ambiguous well assignment for boundary saddle at {s.location.tolist()}"
            )
        s.well_assignment = int(lab.pop())
        contacts[s.well_assignment].append(s)

    connecting_ids = {id(c) for c in connecting}
    other = [s for s in boundary_saddles if s.well_assignment is None]
    other += [c for c in critical_points if c.index == 1 and id(c) not in connecting_ids]

    touches = tuple(len(contacts.get(i, [])) > 0 for i in (1, 2))

    dec = WellDecomposition(
        threshold=threshold,
        n_components=n_components,
        minima_in_same_component=same_component,
        minima=minima[:2],
        contacts=contacts,
        connecting=connecting,
        other_saddles=other,
        grid_points=pts,
        labels=labels,
        resolution=resolution,
        well_touches_boundary=touches,
    )
    return dec.attach(pot)


def _flood_grid(dom, resolution):
    if dom.dim == 1:
        xs = np.linspace(dom.a, dom.b, resolution + 1)
        return xs[:, None], (resolution + 1,), (xs[1] - xs[0],)
    if isinstance(dom, Rectangle):
        xs = np.linspace(dom.ax, dom.bx, resolution + 1)
        ys = np.linspace(dom.ay, dom.by, resolution + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return (
            np.column_stack([X.ravel(), Y.ravel()]),
            (resolution + 1, resolution + 1),
            (xs[1] - xs[0], ys[1] - ys[0]),
        )
    # disk: grid over the bounding box, outside nodes never enter the sublevel set
    xs = np.linspace(dom.cx - dom.radius, dom.cx + dom.radius, resolution + 1)
    ys = np.linspace(dom.cy - dom.radius, dom.cy + dom.radius, resolution + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return (
        np.column_stack([X.ravel(), Y.ravel()]),
        (resolution + 1, resolution + 1),
        (xs[1] - xs[0], ys[1] - ys[0]),
    )


def _label_components(mask, shape):
    from scipy import ndimage

    m = mask.reshape(shape)
    if len(shape) == 1:
        lab, _ = ndimage.label(m)
    else:
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
        lab, _ = ndimage.label(m, structure=structure)
    return lab.ravel()


# ---------------------------------------------------------------------------
# the double-well hypothesis
# ---------------------------------------------------------------------------


def check_hwell(pot, dom, critical_points, boundary_saddles, wells):
    """Verify the double-well-with-degenerate-barriers hypothesis clause by clause."""
    minima = [c for c in critical_points if c.kind == "minimum"]

    def fail(reason):
        return HWellReport(
            verdict="fail",
            reason=reason,
            H=None,
            potential=pot,
            domain=dom,
            critical_points=critical_points,
            boundary_saddles=boundary_saddles,
            wells=wells,
        )

    if len(minima) != 2:
        return fail(f"expected exactly two interior minima, found {len(minima)}")
    v1, v2 = minima[0].value, minima[1].value
    if abs(v1 - v2) > 1e-10:
        return fail(f"minimum values differ: barriers not degenerate ({v1:.12g} vs {v2:.12g})")
    fmin = min(v1, v2)
    if wells.minima_in_same_component:
        return fail("the two minima share one sublevel component")
    if wells.n_components != 2:
        return fail(f"sublevel set has {wells.n_components} components, expected 2")
    mesh_min = float(value_many(pot, wells.grid_points).min())
    if mesh_min < fmin - 1e-9 * (1.0 + abs(fmin)):
        return fail("the minimum over the closure is attained away from the two interior minima")
    H = wells.threshold - fmin
    if not H > 0:
        return fail("boundary minimum does not sit above the interior minima (H <= 0)")
    for i in (1, 2):
        if not wells.well_touches_boundary[i - 1]:
            return fail(f"well C_{i} does not touch the boundary")
    return HWellReport(
        verdict="pass",
        reason=None,
        H=float(H),
        potential=pot,
        domain=dom,
        critical_points=critical_points,
        boundary_saddles=boundary_saddles,
        wells=wells,
        min_value=float(fmin),
    )


def analyze_landscape(pot, dom, grid_density=48, resolution=None):
    """Run the full landscape pipeline and return the hypothesis report."""
    cps = locate_critical_points(pot, dom, grid_density)
    bss = locate_boundary_saddles(pot, dom)
    wells = decompose_wells(pot, dom, resolution, critical_points=cps, boundary_saddles=bss)
    return check_hwell(pot, dom, cps, bss, wells)
