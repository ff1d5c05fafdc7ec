"""Finite-volume discretization of the killed generator and its low spectrum.

The Dirichlet generator is assembled in divergence form with Gibbs face
weights evaluated at face midpoints, then symmetrized by the diagonal
similarity exp(-(f - min f)/h). Every exponent the assembly takes is a
difference of nearby potential values divided by h, so the matrix entries are
well scaled even when e^{-2H/h} underflows naive weights.

The symmetric matrix factors exactly as A = C^T C over the mesh faces; the
low eigenpairs returned by LAPACK/ARPACK are re-diagonalized in that factored
form (Rayleigh-Ritz), which restores relative accuracy for the exponentially
small pair and for its splitting, and keeps near-degenerate symmetric and
antisymmetric states from mixing.

The boundary exit functional defaults to the scheme-consistent face flux,
which satisfies the discrete divergence theorem (the F = 1 normalization is
exact up to solver residual); polynomial one-sided stencils are available for
cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.sparse.linalg import eigsh

from .landscape import Disk, Interval, Rectangle

__all__ = [
    "Mesh",
    "SymmetricOperator",
    "EigenSolution",
    "QsdMeasure",
    "SpectralError",
    "admissible_h_floor",
    "discretize_generator",
    "lowest_spectrum",
    "subspace_dimension_below",
    "qsd_measure",
    "region_mass",
    "exit_expectation",
    "boundary_flux",
    "laplace_reference",
    "well_masks",
]

DENSE_LIMIT = 4096
FLOOR = 1e-12  # smallest admissible e^{-2H/h}


class SpectralError(RuntimeError):
    pass


def admissible_h_floor(H):
    """Smallest h with e^{-2H/h} above the double-precision solver floor."""
    return 2.0 * H / (-np.log(FLOOR))


@dataclass(eq=False)
class Mesh:
    domain: object
    shape: tuple  # interior node grid shape
    points: np.ndarray  # interior nodes, (N, d)
    spacing: tuple
    cell_volume: float

    @property
    def dim(self):
        return self.domain.dim

    @property
    def n_interior(self):
        return len(self.points)


@dataclass(eq=False)
class SymmetricOperator:
    matrix: sp.csr_matrix  # symmetric, off-diagonal <= 0
    mesh: Mesh
    h: float
    fvals: np.ndarray  # f - min f at interior nodes
    fmin: float
    conj_weights: np.ndarray  # exp((f - min f)/h): u = conj_weights * v
    # interior faces (i, j, coeff): quadratic form term coeff*(w_j v_j - w_i v_i)^2
    face_i: np.ndarray
    face_j: np.ndarray
    face_ci: np.ndarray  # sqrt(c) * exp((f_i - f_face)/h)
    face_cj: np.ndarray
    # boundary faces: node index, sqrt-coefficient, boundary point, outward normal,
    # surface element, f at the boundary point (shifted), face weight exp(-2(f_face-min)/h)
    bface_node: np.ndarray
    bface_c: np.ndarray
    bface_point: np.ndarray
    bface_normal: np.ndarray
    bface_ds: np.ndarray
    bface_fb: np.ndarray
    bface_w: np.ndarray
    bface_axis: np.ndarray  # stencil axis (0/1) and direction sign for one-sided derivatives
    bface_sign: np.ndarray
    tridiag: tuple | None = None  # (d, e) when the mesh is 1D

    def apply_C(self, V):
        """Map node vectors to face space; the quadratic form is |C V|^2 columnwise."""
        V = np.atleast_2d(V.T).T  # (N, k)
        rows_int = self.face_cj[:, None] * V[self.face_j] - self.face_ci[:, None] * V[self.face_i]
        rows_bdy = self.bface_c[:, None] * V[self.bface_node]
        return np.vstack([rows_int, rows_bdy])

    def norm_estimate(self):
        return float(abs(self.matrix).sum(axis=1).max())


@dataclass(eq=False)
class EigenSolution:
    operator: SymmetricOperator
    eigenvalues: np.ndarray  # ascending
    vectors: np.ndarray  # (N, k) eigenvectors of the symmetric matrix
    residuals: np.ndarray

    @property
    def ground_vector(self):
        return self.vectors[:, 0]

    def u_samples(self, k=0):
        """Eigenfunction of the generator (u-variables) at interior nodes."""
        return self.vectors[:, k] * self.operator.conj_weights


@dataclass(eq=False)
class QsdMeasure:
    mesh: Mesh
    weights: np.ndarray  # nonnegative, sums to 1

    def total(self):
        return float(self.weights.sum())


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def discretize_generator(pot, dom, h, n):
    """Assemble the symmetrized finite-volume generator at temperature h.

    n is the number of cells per axis (an (nx, ny) tuple is accepted in 2D).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(dom, Interval):
        op = _assemble_1d(pot, dom, h, int(n))
    elif isinstance(dom, Rectangle):
        nx, ny = (n, n) if np.isscalar(n) else n
        op = _assemble_2d_rect(pot, dom, h, int(nx), int(ny))
    elif isinstance(dom, Disk):
        op = _assemble_disk(pot, dom, h, int(n))
    else:
        raise ValueError("unsupported domain")
    _check_admissible(pot, dom, op, h)
    return op


def _check_admissible(pot, dom, op, h):
    bpts, _ = dom.boundary_probes(1024 if dom.dim == 2 else None)
    from .expr import value_many

    bmin = float(value_many(pot, bpts).min())
    H = bmin - (op.fmin)
    if H > 0 and np.exp(-2.0 * H / h) < FLOOR:
        raise SpectralError(
            f"h={h} is below the admissible floor: e^(-2H/h) < {FLOOR:g} with H={H:.6g}; "
            f"smallest admissible h is {admissible_h_floor(H):.6g}"
        )


def _min_cells(n):
    if n < 64:
        raise ValueError("need at least 64 cells per axis")


def _grid(a, b, n):
    # convex combination: endpoint-exact and bitwise mirror-symmetric when b = -a
    i = np.arange(n + 1)
    return ((n - i) * a + i * b) / n


def _grid_mid(a, b, n):
    i = np.arange(n)
    return ((2 * n - 2 * i - 1) * a + (2 * i + 1) * b) / (2 * n)


def _assemble_1d(pot, dom, h, n):
    _min_cells(n)
    a, b = dom.a, dom.b
    delta = (b - a) / n
    nodes = _grid(a, b, n)
    mids = _grid_mid(a, b, n)
    fn = pot.value_at(nodes)
    fm = pot.value_at(mids)
    fmin = float(min(fn.min(), fm.min()))
    fn = fn - fmin
    fm = fm - fmin
    c = h / (2.0 * delta * delta)

    diag = c * (np.exp(2.0 * (fn[1:n] - fm[0 : n - 1]) / h) + np.exp(2.0 * (fn[1:n] - fm[1:n]) / h))
    off = -c * np.exp((fn[1 : n - 1] + fn[2:n] - 2.0 * fm[1 : n - 1]) / h)
    A = sp.diags([off, diag, off], offsets=(-1, 0, 1), format="csr")

    mesh = Mesh(dom, (n - 1,), nodes[1:n, None].copy(), (delta,), delta)
    sq = np.sqrt(c)
    face_i = np.arange(0, n - 2)
    face_j = np.arange(1, n - 1)
    face_ci = sq * np.exp((fn[1 : n - 1] - fm[1 : n - 1]) / h)
    face_cj = sq * np.exp((fn[2:n] - fm[1 : n - 1]) / h)
    bnode = np.array([0, n - 2])
    bc = sq * np.exp((fn[[1, n - 1]] - fm[[0, n - 1]]) / h)
    return SymmetricOperator(
        matrix=A,
        mesh=mesh,
        h=h,
        fvals=fn[1:n].copy(),
        fmin=fmin,
        conj_weights=np.exp(fn[1:n] / h),
        face_i=face_i,
        face_j=face_j,
        face_ci=face_ci,
        face_cj=face_cj,
        bface_node=bnode,
        bface_c=bc,
        bface_point=np.array([[a], [b]]),
        bface_normal=np.array([[-1.0], [1.0]]),
        bface_ds=np.ones(2),
        bface_fb=fn[[0, n]].copy(),
        bface_w=np.exp(-2.0 * fm[[0, n - 1]] / h),
        bface_axis=np.zeros(2, dtype=int),
        bface_sign=np.array([1, -1]),
        tridiag=(diag, off),
    )


def _assemble_2d_rect(pot, dom, h, nx, ny):
    _min_cells(nx)
    _min_cells(ny)
    dx = (dom.bx - dom.ax) / nx
    dy = (dom.by - dom.ay) / ny
    xs = _grid(dom.ax, dom.bx, nx)
    ys = _grid(dom.ay, dom.by, ny)
    F = pot.value_at(xs[:, None], ys[None, :])
    XM = pot.value_at(_grid_mid(dom.ax, dom.bx, nx)[:, None], ys[None, :])  # (nx, ny+1)
    YM = pot.value_at(xs[:, None], _grid_mid(dom.ay, dom.by, ny)[None, :])  # (nx+1, ny)
    fmin = float(min(F.min(), XM.min(), YM.min()))
    F -= fmin
    XM -= fmin
    YM -= fmin

    cx = h / (2.0 * dx * dx)
    cy = h / (2.0 * dy * dy)
    FI = F[1:nx, 1:ny]
    ni, nj = nx - 1, ny - 1
    N = ni * nj
    ind = np.arange(N).reshape(ni, nj)

    diag = (
        cx * np.exp(2.0 * (FI - XM[0 : nx - 1, 1:ny]) / h)
        + cx * np.exp(2.0 * (FI - XM[1:nx, 1:ny]) / h)
        + cy * np.exp(2.0 * (FI - YM[1:nx, 0 : ny - 1]) / h)
        + cy * np.exp(2.0 * (FI - YM[1:nx, 1:ny]) / h)
    ).ravel()
    offx = (-cx * np.exp((F[1 : nx - 1, 1:ny] + F[2:nx, 1:ny] - 2.0 * XM[1 : nx - 1, 1:ny]) / h)).ravel()
    offy = (-cy * np.exp((F[1:nx, 1 : ny - 1] + F[1:nx, 2:ny] - 2.0 * YM[1:nx, 1 : ny - 1]) / h)).ravel()
    rows = np.concatenate([ind[:-1, :].ravel(), ind[:, :-1].ravel()])
    cols = np.concatenate([ind[1:, :].ravel(), ind[:, 1:].ravel()])
    vals = np.concatenate([offx, offy])
    A = sp.coo_matrix(
        (np.concatenate([vals, vals]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(N, N),
    ).tocsr()
    A = (A + sp.diags(diag)).tocsr()

    X, Y = np.meshgrid(xs[1:nx], ys[1:ny], indexing="ij")
    mesh = Mesh(dom, (ni, nj), np.column_stack([X.ravel(), Y.ravel()]), (dx, dy), dx * dy)

    # interior faces for the factored form
    sqx, sqy = np.sqrt(cx), np.sqrt(cy)
    fi_x = ind[:-1, :].ravel()
    fj_x = ind[1:, :].ravel()
    ci_x = (sqx * np.exp((F[1 : nx - 1, 1:ny] - XM[1 : nx - 1, 1:ny]) / h)).ravel()
    cj_x = (sqx * np.exp((F[2:nx, 1:ny] - XM[1 : nx - 1, 1:ny]) / h)).ravel()
    fi_y = ind[:, :-1].ravel()
    fj_y = ind[:, 1:].ravel()
    ci_y = (sqy * np.exp((F[1:nx, 1 : ny - 1] - YM[1:nx, 1 : ny - 1]) / h)).ravel()
    cj_y = (sqy * np.exp((F[1:nx, 2:ny] - YM[1:nx, 1 : ny - 1]) / h)).ravel()

    # boundary faces: four walls
    bnode, bc, bpt, bnrm, bds, bfb, bw, bax, bsg = [], [], [], [], [], [], [], [], []
    xi = xs[1:nx]
    yi = ys[1:ny]
    # bottom (y = ay), top (y = by)
    for j_wall, sign, ymid_col, fb_row in (
        (0, +1, YM[1:nx, 0], F[1:nx, 0]),
        (nj - 1, -1, YM[1:nx, ny - 1], F[1:nx, ny]),
    ):
        bnode.append(ind[:, j_wall])
        bc.append(sqy * np.exp((FI[:, j_wall] - ymid_col) / h))
        ywall = dom.ay if sign > 0 else dom.by
        bpt.append(np.column_stack([xi, np.full(ni, ywall)]))
        bnrm.append(np.tile([0.0, -1.0 if sign > 0 else 1.0], (ni, 1)))
        bds.append(np.full(ni, dx))
        bfb.append(fb_row)
        bw.append(np.exp(-2.0 * ymid_col / h))
        bax.append(np.ones(ni, dtype=int))
        bsg.append(np.full(ni, sign, dtype=int))
    # left (x = ax), right (x = bx)
    for i_wall, sign, xmid_row, fb_col in (
        (0, +1, XM[0, 1:ny], F[0, 1:ny]),
        (ni - 1, -1, XM[nx - 1, 1:ny], F[nx, 1:ny]),
    ):
        bnode.append(ind[i_wall, :])
        bc.append(sqx * np.exp((FI[i_wall, :] - xmid_row) / h))
        xwall = dom.ax if sign > 0 else dom.bx
        bpt.append(np.column_stack([np.full(nj, xwall), yi]))
        bnrm.append(np.tile([-1.0 if sign > 0 else 1.0, 0.0], (nj, 1)))
        bds.append(np.full(nj, dy))
        bfb.append(fb_col)
        bw.append(np.exp(-2.0 * xmid_row / h))
        bax.append(np.zeros(nj, dtype=int))
        bsg.append(np.full(nj, sign, dtype=int))

    return SymmetricOperator(
        matrix=A,
        mesh=mesh,
        h=h,
        fvals=FI.ravel().copy(),
        fmin=fmin,
        conj_weights=np.exp(FI.ravel() / h),
        face_i=np.concatenate([fi_x, fi_y]),
        face_j=np.concatenate([fj_x, fj_y]),
        face_ci=np.concatenate([ci_x, ci_y]),
        face_cj=np.concatenate([cj_x, cj_y]),
        bface_node=np.concatenate(bnode),
        bface_c=np.concatenate(bc),
        bface_point=np.vstack(bpt),
        bface_normal=np.vstack(bnrm),
        bface_ds=np.concatenate(bds),
        bface_fb=np.concatenate(bfb),
        bface_w=np.concatenate(bw),
        bface_axis=np.concatenate(bax),
        bface_sign=np.concatenate(bsg),
    )


def _assemble_disk(pot, dom, h, n):
    """Masked-grid (cut cell) discretization; boundary faces take the grid normal."""
    _min_cells(n)
    r = dom.radius
    xs = dom.cx - r + (2 * r / n) * np.arange(n + 1)
    ys = dom.cy - r + (2 * r / n) * np.arange(n + 1)
    dx = xs[1] - xs[0]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = (X - dom.cx) ** 2 + (Y - dom.cy) ** 2 < r * r
    F = pot.value_at(X, Y)
    fmin = float(F[inside].min())
    F = F - fmin
    idx = -np.ones(inside.shape, dtype=int)
    ii, jj = np.nonzero(inside)
    N = len(ii)
    idx[ii, jj] = np.arange(N)
    c = h / (2.0 * dx * dx)
    sq = np.sqrt(c)

    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    fi, fj, ci, cj = [], [], [], []
    bnode, bc, bpt, bnrm, bds, bfb, bw, bax, bsg = [], [], [], [], [], [], [], [], []
    for di, dj, axis in ((1, 0, 0), (0, 1, 1)):
        # face between (i,j) and (i+di, j+dj); midpoint potential
        a_in = inside[: inside.shape[0] - di, : inside.shape[1] - dj]
        b_in = inside[di:, dj:]
        FM = 0.5 * (F[: F.shape[0] - di, : F.shape[1] - dj] + F[di:, dj:])
        both = a_in & b_in
        ai, aj = np.nonzero(both)
        Ii = idx[ai, aj]
        Jj = idx[ai + di, aj + dj]
        w = np.exp((F[ai, aj] + F[ai + di, aj + dj] - 2.0 * FM[ai, aj]) / h)
        rows += [Ii, Jj]
        cols += [Jj, Ii]
        vals += [-c * w, -c * w]
        np.add.at(diag, Ii, c * np.exp(2.0 * (F[ai, aj] - FM[ai, aj]) / h))
        np.add.at(diag, Jj, c * np.exp(2.0 * (F[ai + di, aj + dj] - FM[ai, aj]) / h))
        fi.append(Ii)
        fj.append(Jj)
        ci.append(sq * np.exp((F[ai, aj] - FM[ai, aj]) / h))
        cj.append(sq * np.exp((F[ai + di, aj + dj] - FM[ai, aj]) / h))
        # cut faces: interior node with outside neighbor on either side
        for sgn, cut in ((+1, a_in & ~b_in), (-1, ~a_in & b_in)):
            qi, qj = np.nonzero(cut)
            if sgn > 0:
                node_i, node_j = qi, qj
            else:
                node_i, node_j = qi + di, qj + dj
            keep = idx[node_i, node_j] >= 0
            node_i, node_j = node_i[keep], node_j[keep]
            nd = idx[node_i, node_j]
            pb = np.column_stack([X[node_i, node_j], Y[node_i, node_j]]).astype(float)
            out_dir = np.zeros((len(nd), 2))
            out_dir[:, axis] = sgn * dx
            pb_face = pb + 0.5 * out_dir
            fface = pot.value_at(pb_face[:, 0], pb_face[:, 1]) - fmin
            np.add.at(diag, nd, c * np.exp(2.0 * (F[node_i, node_j] - fface) / h))
            bnode.append(nd)
            bc.append(sq * np.exp((F[node_i, node_j] - fface) / h))
            bpt.append(pb + out_dir)  # grid boundary point (staircase)
            nrm = np.zeros((len(nd), 2))
            nrm[:, axis] = sgn
            bnrm.append(nrm)
            bds.append(np.full(len(nd), dx))
            bfb.append(pot.value_at(pb[:, 0] + out_dir[:, 0], pb[:, 1] + out_dir[:, 1]) - fmin)
            bw.append(np.exp(-2.0 * fface / h))
            bax.append(np.full(len(nd), axis, dtype=int))
            bsg.append(np.full(len(nd), -sgn, dtype=int))

    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    A = (A + sp.diags(diag)).tocsr()
    mesh = Mesh(dom, (N,), np.column_stack([X[ii, jj], Y[ii, jj]]), (dx, dx), dx * dx)
    return SymmetricOperator(
        matrix=A,
        mesh=mesh,
        h=h,
        fvals=F[ii, jj].copy(),
        fmin=fmin,
        conj_weights=np.exp(F[ii, jj] / h),
        face_i=np.concatenate(fi),
        face_j=np.concatenate(fj),
        face_ci=np.concatenate(ci),
        face_cj=np.concatenate(cj),
        bface_node=np.concatenate(bnode),
        bface_c=np.concatenate(bc),
        bface_point=np.vstack(bpt),
        bface_normal=np.vstack(bnrm),
        bface_ds=np.concatenate(bds),
        bface_fb=np.concatenate(bfb),
        bface_w=np.concatenate(bw),
        bface_axis=np.concatenate(bax),
        bface_sign=np.concatenate(bsg),
    )


# ---------------------------------------------------------------------------
# eigensolve
# ---------------------------------------------------------------------------


def lowest_spectrum(op, k=6, tol=1e-10):
    """The k smallest eigenpairs, Ritz-refined in the factored form.

    Dense (tridiagonal in 1D) below 4096 unknowns, shift-invert Lanczos with a
    sparse factorization above.
    """
    if k > 6:
        raise ValueError("k must be <= 6")
    N = op.matrix.shape[0]
    # a second vector is always computed: the degenerate-pair Perron selection needs it
    k = min(max(k, 2), N - 1)
    if op.tridiag is not None and N <= DENSE_LIMIT:
        d, e = op.tridiag
        w, V = eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1))
    elif N <= DENSE_LIMIT:
        w, V = eigh(op.matrix.toarray())
        w, V = w[:k], V[:, :k]
    else:
        v0 = np.ones(N)
        w, V = eigsh(op.matrix, k=k, sigma=0.0, which="LM", v0=v0)
        order = np.argsort(w)
        w, V = w[order], V[:, order]
        # shift-invert leaves the interior pairs gap-limited when the spectrum
        # spans many decades; one inverse subspace iteration restores machine
        # residuals for every returned pair
        from scipy.sparse.linalg import splu

        lu = splu(op.matrix.tocsc())
        V = np.column_stack([lu.solve(V[:, i]) for i in range(V.shape[1])])

    # Rayleigh-Ritz in the face-factored form: relative accuracy for tiny pairs
    Q, _ = np.linalg.qr(V)
    W = op.apply_C(Q)
    B = W.T @ W
    mu, Y = eigh(B)
    w = mu
    V = Q @ Y

    # second, cluster-local pass: the global Gram carries roundoff at the scale
    # of the largest computed eigenvalue, which can swamp the splitting of the
    # exponentially small cluster; redoing the Ritz on the low cluster alone
    # keeps all arithmetic at the cluster's own scale
    c = 1
    while c < len(w) and (w[c] - w[0]) <= 1e-6 * max(w[c], 1e-300):
        c += 1
    if 2 <= c < len(w):
        Qc, _ = np.linalg.qr(V[:, :c])
        Wc = op.apply_C(Qc)
        mu_c, Yc = eigh(Wc.T @ Wc)
        V[:, :c] = Qc @ Yc
        w = w.copy()
        w[:c] = mu_c

    normA = op.norm_estimate()
    residuals = np.array(
        [np.linalg.norm(op.matrix @ V[:, i] - w[i] * V[:, i]) for i in range(len(w))]
    )
    bad = residuals > max(tol, 1e-12) * max(normA, 1.0)
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        raise SpectralError(
            f"eigenpair {i} residual {residuals[i]:.3e} exceeds {tol:g} * ||A|| = {tol * normA:.3e}"
        )
    if not w[0] > 0:
        raise SpectralError(f"ground eigenvalue is not positive: {w[0]:.3e}")

    v1 = V[:, 0]
    if v1.sum() < 0:
        V = V.copy()
        V[:, 0] = -v1
        v1 = V[:, 0]
    if v1.min() < -1e-10 * v1.max():
        # a sign change is legitimate only when the low pair is degenerate below
        # solver resolution; the Perron state is then the positive combination
        degenerate = len(w) >= 2 and (w[1] - w[0]) <= 1e-6 * max(w[1], 1e-300)
        if degenerate:
            V = V.copy()
            V[:, 0], V[:, 1] = _positive_combination(V[:, 0], V[:, 1])
            v1 = V[:, 0]
        if v1.min() < -1e-10 * v1.max():
            raise SpectralError(
                "ground eigenvector changes sign on the interior "
                f"(min {v1.min():.3e} vs max {v1.max():.3e}); Perron structure violated"
            )
    # unit weighted-L2 normalization of the ground state, positive sign
    nrm = np.sqrt((v1**2).sum() * op.mesh.cell_volume)
    V = V / nrm
    return EigenSolution(op, np.asarray(w, dtype=float), V, residuals)


def _positive_combination(q1, q2):
    """Rotate a numerically degenerate pair so the first vector is positive.

    Scans the rotation angle for the best worst-node positivity; within a
    symmetric/antisymmetric pair this recovers the Perron ground state up to
    the (sub-resolution) true splitting.
    """
    best_t, best_score = 0.0, -np.inf
    thetas = np.linspace(0.0, np.pi, 721, endpoint=False)
    for t in thetas:
        v = np.cos(t) * q1 + np.sin(t) * q2
        s = np.sign(v.sum()) or 1.0
        v = s * v
        score = v.min() / max(np.abs(v).max(), 1e-300)
        if score > best_score:
            best_score, best_t = score, t
    # golden-section refinement around the best angle
    lo, hi = best_t - np.pi / 720, best_t + np.pi / 720
    phi = (np.sqrt(5.0) - 1.0) / 2.0

    def score_at(t):
        v = np.cos(t) * q1 + np.sin(t) * q2
        s = np.sign(v.sum()) or 1.0
        v = s * v
        return v.min() / max(np.abs(v).max(), 1e-300)

    a_, b_ = lo, hi
    c_ = b_ - phi * (b_ - a_)
    d_ = a_ + phi * (b_ - a_)
    for _ in range(40):
        if score_at(c_) > score_at(d_):
            b_ = d_
        else:
            a_ = c_
        c_ = b_ - phi * (b_ - a_)
        d_ = a_ + phi * (b_ - a_)
    t = 0.5 * (a_ + b_)
    v = np.cos(t) * q1 + np.sin(t) * q2
    wv = -np.sin(t) * q1 + np.cos(t) * q2
    if v.sum() < 0:
        v = -v
    return v, wv


def subspace_dimension_below(op, threshold, k=6):
    """Number of eigenvalues strictly below the given threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    sol = lowest_spectrum(op, k=k)
    count = int(np.sum(sol.eigenvalues < threshold))
    if count == len(sol.eigenvalues):
        raise SpectralError(f"all {count} computed eigenvalues lie below the threshold; raise k")
    return count


# ---------------------------------------------------------------------------
# measures and functionals
# ---------------------------------------------------------------------------


def qsd_measure(sol, pot=None, h=None):
    """Node weights of u e^{-2(f - min f)/h} dV, clipped and normalized to 1."""
    op = sol.operator
    v1 = sol.ground_vector
    w = v1 * np.exp(-op.fvals / op.h) * op.mesh.cell_volume
    w = np.clip(w, 0.0, None)
    s = w.sum()
    if s <= 0:
        raise SpectralError("QSD weights sum to zero")
    return QsdMeasure(op.mesh, w / s)


def region_mass(measure, region):
    region = np.asarray(region, dtype=bool)
    if region.shape != measure.weights.shape:
        raise ValueError("region mask must match the interior mesh")
    return float(measure.weights[region].sum())


def well_masks(decomposition, mesh):
    """Well labels (0/1/2) for the interior nodes of a spectral mesh."""
    return decomposition.classify_points(mesh.points)


def boundary_flux(sol, method="consistent"):
    """Per-face exit-law contributions: E[F] = sum_faces F(x_face) * value.

    "consistent" uses the finite-volume face flux (exactly normalized);
    "stencil3"/"stencil5" use one-sided polynomial normal derivatives of u
    weighted by e^{-2 f(boundary)/h}.
    """
    op = sol.operator
    h, lam1 = op.h, sol.eigenvalues[0]
    if lam1 <= 1e-13 * max(op.norm_estimate(), 1.0):
        raise SpectralError("lambda_1 is below solver resolution; the exit ratio is meaningless")
    v1 = sol.ground_vector
    u = v1 * op.conj_weights
    den = float((u * np.exp(-2.0 * op.fvals / h)).sum()) * op.mesh.cell_volume

    if method == "consistent":
        # (h/2) * w_face * (u_neighbor - 0)/delta per unit surface
        delta = np.array([op.mesh.spacing[a] for a in op.bface_axis])
        flux = (h / 2.0) * op.bface_w * u[op.bface_node] / delta * op.bface_ds
        contrib = flux / (lam1 * den)
        return op.bface_point, contrib

    coeffs = {"stencil3": (2.0, -0.5), "stencil5": (4.0, -3.0, 4.0 / 3.0, -0.25)}[method]
    shape = op.mesh.shape
    if len(shape) != op.mesh.dim:
        raise SpectralError("one-sided stencils need a structured mesh; use method='consistent'")
    if op.mesh.dim == 1:
        U = np.zeros(shape[0] + 2)
        U[1:-1] = u
        grid = lambda i, j: U[i + 1]
    else:
        U = np.zeros((shape[0] + 2, shape[1] + 2))
        U[1:-1, 1:-1] = u.reshape(shape)
        grid = lambda i, j: U[i + 1, j + 1]
    vals = np.zeros(len(op.bface_node))
    for m, node in enumerate(op.bface_node):
        if op.mesh.dim == 1:
            i0, j0 = int(node), 0
            step = (op.bface_sign[m], 0)
        else:
            i0, j0 = divmod(int(node), shape[1])
            step = (op.bface_sign[m], 0) if op.bface_axis[m] == 0 else (0, op.bface_sign[m])
        delta = op.mesh.spacing[op.bface_axis[m]]
        d_in = sum(
            ck * grid(i0 + p * step[0], j0 + p * step[1]) for p, ck in enumerate(coeffs)
        ) / delta
        # dn u = -du/ds_inward; the e^{-2f/h} weight is taken at the boundary point
        vals[m] = (h / 2.0) * d_in * np.exp(-2.0 * op.bface_fb[m] / h) * op.bface_ds[m]
    return op.bface_point, vals / (lam1 * den)


def exit_expectation(sol, F, method="consistent"):
    """E[F(X_exit)] started from the QSD, via the discrete boundary flux."""
    pts, contrib = boundary_flux(sol, method=method)
    fv = np.array([float(F(p)) for p in pts])
    return float((fv * contrib).sum())


def laplace_reference(pot, mesh, region, h):
    """(h pi)^{d/2} e^{-2 min f/h} / sqrt(det Hess f) at the region's unique minimum.

    Shifted by the operator convention min f -> 0 is NOT applied here: the
    value uses the region minimum value directly, matching a direct quadrature
    of e^{-2f/h} over the region.
    """
    region = np.asarray(region, dtype=bool)
    if not np.any(region):
        raise ValueError("empty region")
    pts = mesh.points[region]
    from .expr import value_many

    fv = value_many(pot, pts)
    if _count_local_minima(pts, fv, 1.5 * max(mesh.spacing)) != 1:
        raise SpectralError("region must contain exactly one minimum")
    x = pts[int(np.argmin(fv))].astype(float)
    for _ in range(60):
        g = pot.grad(x)
        if np.linalg.norm(g) < 1e-12:
            break
        try:
            x = x + np.linalg.solve(pot.hess(x), -g)
        except np.linalg.LinAlgError:
            raise SpectralError("singular Hessian while refining the region minimum")
    d = mesh.dim
    H = pot.hess(x)
    eigs = np.linalg.eigvalsh(H)
    if np.any(eigs <= 0):
        raise SpectralError("the region's lowest point is not a nondegenerate minimum")
    if not np.any(np.linalg.norm(pts - x[None, :], axis=1) < 3.0 * max(mesh.spacing)):
        raise SpectralError("the refined minimum left the region")
    fmin_loc = pot.value(x)
    det = float(np.linalg.det(np.atleast_2d(H)))
    return (h * np.pi) ** (d / 2.0) * np.exp(-2.0 * fmin_loc / h) / np.sqrt(det)


def _count_local_minima(pts, vals, radius):
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    count = 0
    for i, p in enumerate(pts):
        nb = tree.query_ball_point(p, radius)
        if all(vals[i] <= vals[j] for j in nb) and any(vals[i] < vals[j] for j in nb):
            count += 1
        elif len(nb) == 1:  # isolated node
            count += 1
    return count
