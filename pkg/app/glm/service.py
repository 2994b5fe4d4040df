import logging
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit, logit, xlogy

from app.core.config import settings
from app.core.exceptions import (
    ConvergenceError,
    ModelFitError,
    RankDeficiencyError,
    SeparationError,
)
from app.data.schemas import SampleView
from app.formula.schemas import FormulaSpec
from app.formula.service import FormulaService
from app.glm.schemas import Family, FittedModel, ModelSummary

logger = logging.getLogger(__name__)

MAX_STEP_HALVINGS = 20


def _collinear_columns(X: np.ndarray, w: np.ndarray, names: Tuple[str, ...]) -> List[str]:
    """Names of columns that add nothing to the rank of the weighted design,
    scanning left to right."""
    Xs = X * np.sqrt(w)[:, None]
    norms = np.linalg.norm(Xs, axis=0)
    if np.all(norms > 0) and np.linalg.matrix_rank(Xs / norms) == X.shape[1]:
        return []
    kept: List[int] = []
    collinear: List[str] = []
    for j in range(X.shape[1]):
        if norms[j] == 0:
            collinear.append(names[j])
            continue
        cand = kept + [j]
        sub = Xs[:, cand] / norms[cand]
        if np.linalg.matrix_rank(sub) == len(cand):
            kept.append(j)
        else:
            collinear.append(names[j])
    return collinear


def _binomial_deviance(y: np.ndarray, mu: np.ndarray, w: np.ndarray) -> float:
    mu = np.clip(mu, 1e-15, 1 - 1e-15)
    ll = xlogy(y, mu) + xlogy(1 - y, 1 - mu)
    sat = xlogy(y, y) + xlogy(1 - y, 1 - y)
    return float(2.0 * np.dot(w, sat - ll))


def _newton_step(X: np.ndarray, y: np.ndarray, w: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mu = expit(X @ beta)
    hess = X.T @ (X * (w * mu * (1 - mu))[:, None])
    score = X.T @ (w * (y - mu))
    try:
        return np.linalg.solve(hess, score)
    except np.linalg.LinAlgError as e:
        raise ModelFitError(f"IRLS step failed: {e}", code="IRLS_SINGULAR")


def _irls(X: np.ndarray, y: np.ndarray, w: np.ndarray, formula: str) -> Tuple[np.ndarray, int]:
    ybar = float(np.dot(w, y) / w.sum())
    if ybar <= 0.0 or ybar >= 1.0:
        raise SeparationError(float("inf"), formula=formula)

    beta = np.zeros(X.shape[1])
    beta[0] = logit(ybar)
    dev = _binomial_deviance(y, expit(X @ beta), w)

    for iteration in range(1, settings.IRLS_MAX_ITER + 1):
        delta = _newton_step(X, y, w, beta)
        candidate = beta + delta
        new_dev = _binomial_deviance(y, expit(X @ candidate), w)
        halvings = 0
        while not np.isfinite(new_dev) or new_dev > dev + 1e-12 * (abs(dev) + 1):
            if halvings == MAX_STEP_HALVINGS:
                break
            delta = delta / 2
            candidate = beta + delta
            new_dev = _binomial_deviance(y, expit(X @ candidate), w)
            halvings += 1
        beta = candidate

        max_abs = float(np.max(np.abs(beta)))
        if max_abs > settings.SEPARATION_THRESHOLD:
            raise SeparationError(max_abs, formula=formula)

        coef_done = float(np.max(np.abs(delta))) < settings.IRLS_COEF_TOL
        dev_done = abs(new_dev - dev) < settings.IRLS_DEVIANCE_TOL * (abs(new_dev) + 0.1)
        dev = new_dev
        if coef_done or dev_done:
            # one more full Newton step tightens the score equations
            beta = beta + _newton_step(X, y, w, beta)
            return beta, iteration

    raise ConvergenceError(settings.IRLS_MAX_ITER, formula=formula)


class GLMService:
    @staticmethod
    def fit(spec: FormulaSpec, sample: SampleView, family: Family) -> FittedModel:
        """Weighted GLM fit; the response is the column named by the formula."""
        if sample.base.is_categorical(spec.response):
            raise ModelFitError(f"Response '{spec.response}' must be numeric", code="BAD_RESPONSE")
        if spec.response not in sample.base.columns:
            raise ModelFitError(
                f"Response '{spec.response}' is not a column of the sample", code="BAD_RESPONSE"
            )
        return GLMService._fit(spec, sample, Family(family), sample.column(spec.response))

    @staticmethod
    def fit_transformed_bounded(
        spec: FormulaSpec, sample: SampleView, lower: float = -1.0, upper: float = 1.0
    ) -> FittedModel:
        """Logit fit of a response bounded in [lower, upper] mapped onto [0, 1];
        predictions come back on the original scale."""
        if not upper > lower:
            raise ModelFitError("Upper bound must exceed lower bound", code="BAD_BOUNDS")
        y = sample.column(spec.response)
        tol = 1e-12 * (upper - lower)
        if np.any(y < lower - tol) or np.any(y > upper + tol):
            raise ModelFitError(
                f"Response '{spec.response}' outside [{lower}, {upper}]",
                code="RESPONSE_OUT_OF_BOUNDS",
                details={"min": float(y.min()), "max": float(y.max())},
            )
        z = np.clip((y - lower) / (upper - lower), 0.0, 1.0)
        return GLMService._fit(spec, sample, Family.BINOMIAL, z, transform=(lower, upper))

    @staticmethod
    def _fit(
        spec: FormulaSpec,
        sample: SampleView,
        family: Family,
        y: np.ndarray,
        transform: Optional[Tuple[float, float]] = None,
    ) -> FittedModel:
        formula = spec.text or spec.render()
        w_all = sample.effective_weights
        if not np.any(w_all > 0):
            raise ModelFitError(
                f"All fit weights are zero for '{formula}'", code="ZERO_WEIGHTS"
            )
        design = FormulaService.build_design(spec, sample)
        keep = w_all > 0
        X, yk, w = design.matrix[keep], np.asarray(y, dtype=float)[keep], w_all[keep]

        collinear = _collinear_columns(X, w, design.column_names)
        if collinear:
            raise RankDeficiencyError(collinear, formula=formula)

        sigma2 = None
        if family == Family.BINOMIAL:
            if np.any(yk < 0) or np.any(yk > 1):
                raise ModelFitError(
                    f"Binomial response of '{formula}' must lie in [0, 1]", code="RESPONSE_OUT_OF_BOUNDS"
                )
            beta, iterations = _irls(X, yk, w, formula)
            fitted = expit(X @ beta)
        else:
            sw = np.sqrt(w)
            beta, *_ = np.linalg.lstsq(X * sw[:, None], yk * sw, rcond=None)
            iterations = 1
            fitted = X @ beta
            sigma2 = float(np.dot(w, (yk - fitted) ** 2) / w.sum())

        total = float(np.dot(w, yk))
        residual = abs(float(np.dot(w, fitted)) - total) / max(1.0, abs(total))
        warnings: List[str] = []
        if residual > settings.MEAN_RECOVERY_TOL:
            msg = f"Mean recovery residual {residual:.3g} above tolerance for '{formula}'"
            logger.warning(msg)
            warnings.append(msg)

        model = FittedModel(
            spec=spec,
            family=family,
            coefficients=beta,
            column_names=design.column_names,
            knots=design.knots,
            levels=design.levels,
            n=int(keep.sum()),
            weight_sum=float(w.sum()),
            converged=True,
            iterations=iterations,
            mean_recovery_residual=residual,
            sigma2=sigma2,
            transform=transform,
            warnings=tuple(warnings),
        )
        logger.debug(f"Fitted {family.value} '{formula}' on {model.n} rows in {iterations} iterations")
        return model

    @staticmethod
    def linear_predictor(model: FittedModel, sample: SampleView) -> np.ndarray:
        design = FormulaService.build_design(model.spec, sample, knots=model.knots, levels=model.levels)
        if design.column_names != model.column_names:
            raise ModelFitError(
                f"Prediction design does not match the fitted design of '{model.formula}'",
                code="DESIGN_MISMATCH",
            )
        return design.matrix @ model.coefficients

    @staticmethod
    def predict(model: FittedModel, sample: SampleView) -> np.ndarray:
        """Response-scale predictions over the rows of ``sample``."""
        eta = GLMService.linear_predictor(model, sample)
        if model.family == Family.GAUSSIAN:
            return eta
        mu = expit(eta)
        if model.transform is not None:
            lower, upper = model.transform
            return mu * (upper - lower) + lower
        return mu

    @staticmethod
    def family_for(binary: bool) -> Family:
        return Family.BINOMIAL if binary else Family.GAUSSIAN

    @staticmethod
    def summarize(model: FittedModel) -> ModelSummary:
        return ModelSummary(
            formula=model.formula,
            family=model.family,
            coefficients={name: float(c) for name, c in zip(model.column_names, model.coefficients)},
            n=model.n,
            weight_sum=model.weight_sum,
            converged=model.converged,
            iterations=model.iterations,
            mean_recovery_residual=model.mean_recovery_residual,
            sigma2=model.sigma2,
            bounded=model.transform,
        )
