"""Natural cubic spline basis.

Cubic B-splines on the boundary knots plus interior knots, projected onto
the subspace with zero second derivative at both boundary knots, first
(intercept) column dropped. Beyond the boundary knots each column continues
linearly. With df columns there are df-1 interior knots.
"""
from typing import Tuple

import numpy as np
from scipy.interpolate import BSpline

from app.core.exceptions import FormulaError
from app.formula.schemas import SplineKnots

DEGREE = 3


def compute_knots(x: np.ndarray, df: int, name: str = "x") -> SplineKnots:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise FormulaError(f"Cannot place spline knots for '{name}': no rows")
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise FormulaError(f"Spline variable '{name}' is constant; knots are degenerate")
    probs = np.linspace(0.0, 1.0, df + 1)[1:-1]
    interior = tuple(float(q) for q in np.quantile(x, probs)) if df > 1 else ()
    if any(not (lo < k < hi) for k in interior):
        raise FormulaError(f"Spline variable '{name}' has too few distinct values for ns(...,{df})")
    return SplineKnots(boundary=(lo, hi), interior=interior)


def _projection(knots: SplineKnots) -> Tuple[BSpline, np.ndarray]:
    lo, hi = knots.boundary
    t = np.concatenate([[lo] * (DEGREE + 1), knots.interior, [hi] * (DEGREE + 1)])
    n_basis = len(t) - DEGREE - 1
    spline = BSpline(t, np.eye(n_basis), DEGREE, extrapolate=True)
    const = spline.derivative(2)(np.array([lo, hi]))[:, 1:]
    q, _ = np.linalg.qr(const.T, mode="complete")
    return spline, q[:, 2:]


def natural_spline_basis(x: np.ndarray, knots: SplineKnots) -> np.ndarray:
    """Evaluate the natural-spline columns at ``x`` using stored knots."""
    x = np.asarray(x, dtype=float)
    lo, hi = knots.boundary
    spline, proj = _projection(knots)
    inside = np.clip(x, lo, hi)
    basis = spline(inside)[:, 1:] @ proj

    below, above = x < lo, x > hi
    if below.any() or above.any():
        slope = spline.derivative(1)(np.array([lo, hi]))[:, 1:] @ proj
        basis[below] += (x[below] - lo)[:, None] * slope[0]
        basis[above] += (x[above] - hi)[:, None] * slope[1]
    return basis
