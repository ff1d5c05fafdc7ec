"""Closed-form small-temperature predictions for the killed double-well diffusion.

Given a passing landscape report this module evaluates the leading
Eyring-Kramers prefactors of the two wells, builds the 2x2 interaction model
of the low-lying spectral subspace, classifies the concentration regime
(generic single-well vs degenerate two-well), and renders the predicted
eigenvalues, quasi-stationary weights and exit-point weights.

All quantities depend on the coupling only through its magnitude; its sign is
not determined by the leading-order data and is stored as "unknown" until the
degenerate regime forces it negative.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np

from .expr import value_many

__all__ = [
    "SeriesCoeffs",
    "InteractionModel",
    "Regime",
    "QsdPrediction",
    "ExitLawPrediction",
    "AsymptoticPrediction",
    "SymmetryDecl",
    "AsymptoticsError",
    "leading_kappa",
    "interaction_model",
    "two_by_two_eigen",
    "classify_regime",
    "predict_qsd_weights",
    "predict_exit_weights",
    "predict_eigenvalues",
    "verify_symmetry",
]

SQRT_PI = math.sqrt(math.pi)
KAPPA_EQUAL_RTOL = 1e-9  # exact AD inputs: disagreement above this is real asymmetry


class AsymptoticsError(RuntimeError):
    pass


@dataclass(frozen=True)
class SeriesCoeffs:
    kappa10: float
    kappa20: float
    kappa11: float | None = None  # present iff the wells touch (m3 > 0)
    kappa21: float | None = None

    def to_dict(self):
        return {
            "kappa10": self.kappa10,
            "kappa20": self.kappa20,
            "kappa11": self.kappa11,
            "kappa21": self.kappa21,
        }


@dataclass(frozen=True)
class InteractionModel:
    H: float
    alpha_leading: tuple
    epsilon_kind: str  # "exponentially_small" | "order_sqrt_h"
    epsilon_magnitude_coeff: float  # c_eps with |eps(h)| ~ c_eps*sqrt(h); 0 when m3 = 0
    epsilon_sign: str = "unknown"  # "unknown" | "negative"
    kappa11: float | None = None
    kappa21: float | None = None

    def alpha(self, i, h):
        """Leading alpha_i(h), including the sqrt(h) term when the wells touch."""
        a = self.alpha_leading[i - 1]
        k1 = (self.kappa11, self.kappa21)[i - 1]
        if self.epsilon_kind == "order_sqrt_h" and k1 is not None:
            a = a + k1 * math.sqrt(h)
        return a

    def epsilon_abs(self, h):
        if self.epsilon_kind == "order_sqrt_h":
            return self.epsilon_magnitude_coeff * math.sqrt(h)
        return 0.0

    def to_dict(self):
        return {
            "H": self.H,
            "alpha_leading": list(self.alpha_leading),
            "epsilon_kind": self.epsilon_kind,
            "epsilon_magnitude_coeff": self.epsilon_magnitude_coeff,
            "epsilon_sign": self.epsilon_sign,
        }


@dataclass(frozen=True)
class Regime:
    tag: str  # H1_first_well | H1_second_well | H2 | indeterminate
    justification: str
    symmetric: bool = False  # H2 via a verified declared isometry

    @property
    def selected_well(self):
        if self.tag == "H1_first_well":
            return 1
        if self.tag == "H1_second_well":
            return 2
        return None

    def to_dict(self):
        return {"tag": self.tag, "justification": self.justification, "symmetric": self.symmetric}


@dataclass(frozen=True)
class QsdPrediction:
    weight_well1: float
    weight_well2: float
    error_order: str

    def to_dict(self):
        return {
            "weight_well1": self.weight_well1,
            "weight_well2": self.weight_well2,
            "error_order": self.error_order,
        }


@dataclass(frozen=True)
class ExitLawPrediction:
    weights: tuple  # ((well, location tuple, weight), ...) over boundary contacts
    error_order: str

    def total(self):
        return sum(w for _, _, w in self.weights)

    def to_dict(self):
        return {
            "weights": [
                {"well": i, "location": list(loc), "weight": w} for i, loc, w in self.weights
            ],
            "error_order": self.error_order,
        }


@dataclass(frozen=True)
class AsymptoticPrediction:
    coeffs: SeriesCoeffs
    model: InteractionModel
    regime: Regime
    qsd: QsdPrediction | None
    exit_law: ExitLawPrediction | None

    def to_dict(self):
        return {
            "coeffs": self.coeffs.to_dict(),
            "model": self.model.to_dict(),
            "regime": self.regime.to_dict(),
            "qsd": self.qsd.to_dict() if self.qsd else None,
            "exit_law": self.exit_law.to_dict() if self.exit_law else None,
        }


# ---------------------------------------------------------------------------
# declared symmetries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymmetryDecl:
    """An involutive isometry declared by the user: a point or axis reflection."""

    kind: str  # "point" | "reflect_x" | "reflect_y"
    center: tuple  # 1 or 2 coordinates

    def apply(self, pts):
        p = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        if self.kind == "point":
            c = np.asarray(self.center, dtype=float)
            return 2.0 * c[None, : p.shape[1]] - p
        if self.kind == "reflect_x":
            p[:, 0] = 2.0 * self.center[0] - p[:, 0]
            return p
        if self.kind == "reflect_y":
            p[:, 1] = 2.0 * self.center[-1] - p[:, 1]
            return p
        raise ValueError(f"unknown symmetry kind '{self.kind}'")

    def to_dict(self):
        return {"kind": self.kind, "center": list(self.center)}


def verify_symmetry(report, decl, probes_per_axis=29, tol=1e-10):
    """Check f(Phi(p)) = f(p) on a probe grid, Phi(x1) = x2, Phi^2 = id."""
    pot, dom = report.potential, report.domain
    pts = dom.seed_grid(probes_per_axis)
    img = decl.apply(pts)
    inside = dom.contains(img, margin=-1e-9 * dom.diameter())
    if not np.all(inside):
        bad = pts[~inside][0]
        raise AsymptoticsError(
            f"declared symmetry maps probe point {bad.tolist()} outside the domain"
        )
    f0 = value_many(pot, pts)
    f1 = value_many(pot, img)
    scale = 1.0 + np.abs(f0).max()
    bad = np.abs(f1 - f0) > tol * scale
    if np.any(bad):
        p = pts[bad][0]
        raise AsymptoticsError(
            f"declared symmetry violated at probe point {p.tolist()}: "
            f"f(Phi(p)) - f(p) = {float((f1 - f0)[bad][0]):.3e}"
        )
    back = decl.apply(img)
    if not np.allclose(back, pts, atol=1e-12 * dom.diameter()):
        raise AsymptoticsError("declared symmetry is not an involution")
    x1, x2 = (m.location for m in report.minima())
    if not np.allclose(decl.apply(x1[None, :])[0], x2, atol=1e-7 * dom.diameter()):
        raise AsymptoticsError("declared symmetry does not swap the two minima")
    return True


# ---------------------------------------------------------------------------
# prefactors and the 2x2 model
# ---------------------------------------------------------------------------


def _det(h):
    h = np.atleast_2d(h)
    return float(np.linalg.det(h))


def leading_kappa(report):
    """Leading prefactors of the two wells and, for touching wells, their sqrt(h) terms."""
    if not report.passed:
        raise AsymptoticsError(f"landscape hypothesis failed: {report.reason}")
    wells = report.wells
    dets = [_det(m.hessian) for m in wells.minima]
    k0 = []
    for i in (1, 2):
        s = 0.0
        for z in wells.contacts[i]:
            s += (
                2.0
                * z.normal_derivative
                / SQRT_PI
                * math.sqrt(dets[i - 1])
                / math.sqrt(z.tangential_hessian_det)
            )
        k0.append(s)
    if wells.m3 > 0:
        k1 = []
        for i in (1, 2):
            s = 0.0
            for z in wells.connecting:
                s += (
                    abs(z.negative_eigenvalue)
                    * math.sqrt(dets[i - 1])
                    / (math.pi * math.sqrt(abs(_det(z.hessian))))
                )
            k1.append(s)
        return SeriesCoeffs(k0[0], k0[1], k1[0], k1[1])
    return SeriesCoeffs(k0[0], k0[1])


def _coupling_coeff(report):
    """c_eps = sum_j C_{3,j,1} C_{3,j,2} over the connecting saddles."""
    wells = report.wells
    dets = [_det(m.hessian) for m in wells.minima]
    c = 0.0
    for z in wells.connecting:
        dz = abs(_det(z.hessian))
        c += (
            math.sqrt(abs(z.negative_eigenvalue)) / SQRT_PI * dets[0] ** 0.25 / dz**0.25
        ) * (math.sqrt(abs(z.negative_eigenvalue)) / SQRT_PI * dets[1] ** 0.25 / dz**0.25)
    return c


def interaction_model(report, coeffs):
    """Assemble the 2x2 low-lying model: diagonal prefactors plus the coupling size."""
    if not report.passed:
        raise AsymptoticsError(f"landscape hypothesis failed: {report.reason}")
    m3 = report.wells.m3
    if m3 > 0:
        return InteractionModel(
            H=report.H,
            alpha_leading=(coeffs.kappa10, coeffs.kappa20),
            epsilon_kind="order_sqrt_h",
            epsilon_magnitude_coeff=_coupling_coeff(report),
            kappa11=coeffs.kappa11,
            kappa21=coeffs.kappa21,
        )
    return InteractionModel(
        H=report.H,
        alpha_leading=(coeffs.kappa10, coeffs.kappa20),
        epsilon_kind="exponentially_small",
        epsilon_magnitude_coeff=0.0,
    )


def two_by_two_eigen(alpha1, alpha2, eps, h, H):
    """Eigenvalues of the low-lying 2x2 restriction, and the mixing ratio beta.

    lambda_i = (a1 + a2 + (-1)^i sqrt((a2-a1)^2 + 4 eps^2)) e^{-2H/h} / (4 sqrt h),
    beta = -2 eps / (a2 - a1 + sqrt((a2-a1)^2 + 4 eps^2)).
    """
    if not (h > 0 and H > 0):
        raise ValueError("h and H must be positive")
    gap = math.hypot(alpha2 - alpha1, 2.0 * eps)
    scale = math.exp(-2.0 * H / h) / (4.0 * math.sqrt(h))
    lam1 = (alpha1 + alpha2 - gap) * scale
    lam2 = (alpha1 + alpha2 + gap) * scale
    if eps == 0.0 and alpha1 == alpha2:
        beta = None  # degenerate: any basis of the eigenplane works
    else:
        denom = (alpha2 - alpha1) + gap
        if denom == 0.0:
            beta = float("inf") if eps < 0 else float("-inf")
        else:
            beta = -2.0 * eps / denom
    return lam1, lam2, beta


def classify_regime(coeffs, model, declared_symmetry=None, report=None):
    """Decide the concentration regime from the leading coefficients.

    A declared symmetry, when it verifies, forces the degenerate regime; the
    untestable case (separated wells, equal leading coefficients, no declared
    symmetry) is reported indeterminate, not guessed.
    """
    if declared_symmetry is not None:
        if report is None:
            raise ValueError("symmetry verification needs the landscape report")
        verify_symmetry(report, declared_symmetry)
        return Regime(
            tag="H2",
            justification="declared isometry verified: f o Phi = f, Phi(x1) = x2, Phi^2 = id",
            symmetric=True,
        )

    k1, k2 = coeffs.kappa10, coeffs.kappa20
    scale = max(abs(k1), abs(k2), 1e-300)
    equal0 = abs(k1 - k2) <= KAPPA_EQUAL_RTOL * scale

    if model.epsilon_kind == "order_sqrt_h":
        if not equal0:
            side = 1 if k1 < k2 else 2
            return Regime(
                tag=f"H1_{'first' if side == 1 else 'second'}_well",
                justification=f"touching wells with kappa_{{1,0}}={k1:.9g} != kappa_{{2,0}}={k2:.9g}",
            )
        s1 = max(abs(coeffs.kappa11), abs(coeffs.kappa21), 1e-300)
        if abs(coeffs.kappa11 - coeffs.kappa21) <= KAPPA_EQUAL_RTOL * s1:
            return Regime(
                tag="H2",
                justification="touching wells with equal kappa_{i,0} and kappa_{i,1}",
            )
        return Regime(
            tag="indeterminate",
            justification="touching wells with equal kappa_{i,0} but different kappa_{i,1}: "
            "diagonal asymmetry and coupling are both order sqrt(h)",
        )

    if not equal0:
        side = 1 if k1 < k2 else 2
        return Regime(
            tag=f"H1_{'first' if side == 1 else 'second'}_well",
            justification=f"separated wells with kappa_{{1,0}}={k1:.9g} != kappa_{{2,0}}={k2:.9g}",
        )
    return Regime(
        tag="indeterminate",
        justification="separated wells with equal leading coefficients and no declared "
        "symmetry: deciding needs equality of the expansions at every order",
    )


def apply_regime_sign(model, regime):
    """The degenerate regime forces the coupling negative; otherwise unknown."""
    if regime.tag == "H2" and model.epsilon_kind == "order_sqrt_h":
        return replace(model, epsilon_sign="negative")
    return model


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------


def predict_qsd_weights(regime, report):
    if regime.tag == "indeterminate":
        raise AsymptoticsError(
            "regime is indeterminate: QSD repartition is not decidable from leading data"
        )
    if regime.tag == "H1_first_well":
        m3 = report.wells.m3
        err = "O(sqrt(h)) + O(e^{-c/h})" if m3 > 0 else "O(e^{-c/h})"
        return QsdPrediction(1.0, 0.0, err)
    if regime.tag == "H1_second_well":
        m3 = report.wells.m3
        err = "O(sqrt(h)) + O(e^{-c/h})" if m3 > 0 else "O(e^{-c/h})"
        return QsdPrediction(0.0, 1.0, err)
    if regime.symmetric:
        return QsdPrediction(0.5, 0.5, "O(e^{-c/h})")
    d1, d2 = (_det(m.hessian) for m in report.wells.minima)
    q1, q2 = d1**0.25, d2**0.25
    b1 = q2 / (q1 + q2)
    b2 = q1 / (q1 + q2)
    return QsdPrediction(b1, b2, "O(h) + O(|alpha2-alpha1|/|eps|)")


def _a_weights(contacts):
    raw = [z.normal_derivative / math.sqrt(z.tangential_hessian_det) for z in contacts]
    tot = sum(raw)
    return [r / tot for r in raw]


def predict_exit_weights(regime, report):
    """Exit-point weights on the boundary contacts; connecting saddles get zero."""
    if regime.tag == "indeterminate":
        raise AsymptoticsError(
            "regime is indeterminate: exit law is not decidable from leading data"
        )
    wells = report.wells
    qsd = predict_qsd_weights(regime, report)
    b = (qsd.weight_well1, qsd.weight_well2)
    out = []
    for i in (1, 2):
        contacts = wells.contacts[i]
        if not contacts:
            continue
        a = _a_weights(contacts)
        for z, aw in zip(contacts, a):
            out.append((i, tuple(map(float, z.location)), aw * b[i - 1]))
    err = "O(h)" if regime.tag == "H2" else "O(h) + O(|eps|/|alpha2-alpha1|)"
    return ExitLawPrediction(tuple(out), err)


def predict_eigenvalues(model, regime, h):
    """Predicted lambda_1, lambda_2 at temperature h, with a splitting note."""
    if h <= 0:
        raise ValueError("h must be positive")
    a1 = model.alpha(1, h)
    a2 = model.alpha(2, h)
    eps = model.epsilon_abs(h)
    lam1, lam2, _ = two_by_two_eigen(a1, a2, eps, h, model.H)
    if model.epsilon_kind == "exponentially_small":
        if regime.tag.startswith("H1"):
            note = "separated wells: 2 sqrt(h) e^{2H/h} lambda_i = kappa_{i,0} + O(h)"
        else:
            note = "separated wells, degenerate: lambda_1 and lambda_2 exponentially close"
    else:
        if regime.tag.startswith("H1"):
            note = "touching wells: 2 sqrt(h) e^{2H/h} lambda_i = kappa_{i,0} (1 + O(sqrt(h)))"
        else:
            note = (
                "touching wells, degenerate: both rescaled eigenvalues approach kappa_{1,0}; "
                "relative splitting of order sqrt(h) with coefficient "
                f"{2.0 * model.epsilon_magnitude_coeff / max(model.alpha_leading[0], 1e-300):.6g}"
            )
    return lam1, lam2, note


def predict(report, declared_symmetry=None):
    """Full prediction bundle for a passing landscape report."""
    coeffs = leading_kappa(report)
    model = interaction_model(report, coeffs)
    regime = classify_regime(coeffs, model, declared_symmetry, report=report)
    model = apply_regime_sign(model, regime)
    if regime.tag == "indeterminate":
        return AsymptoticPrediction(coeffs, model, regime, None, None)
    return AsymptoticPrediction(
        coeffs,
        model,
        regime,
        predict_qsd_weights(regime, report),
        predict_exit_weights(regime, report),
    )
