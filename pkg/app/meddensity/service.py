import itertools
import logging
from typing import Dict, Iterator, Mapping, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from app.core.config import settings
from app.core.exceptions import FormulaError, ModelFitError
from app.data.schemas import Dataset, SampleView
from app.data.service import DataService
from app.formula.schemas import FormulaSpec
from app.glm.schemas import Family
from app.glm.service import GLMService
from app.meddensity.schemas import DensityFactor, FactorizedDensity, FactorKind

logger = logging.getLogger(__name__)


def _clip(p: np.ndarray) -> np.ndarray:
    eps = settings.PROBABILITY_CLIP
    return np.clip(p, eps, 1.0 - eps)


def _view(ds: Dataset, like: SampleView) -> SampleView:
    return SampleView(ds, like.selector, None, like.index)


class MediatorDensityService:
    @staticmethod
    def fit_density(
        order: Sequence[str],
        specs: Mapping[str, FormulaSpec],
        sample: SampleView,
        fitted_on: str = "control",
    ) -> FactorizedDensity:
        ds = sample.base
        order = tuple(order)
        if sorted(order) != sorted(ds.mediators):
            raise FormulaError(
                f"Mediator order {list(order)} must list each mediator {ds.mediators} exactly once"
            )
        allowed = set(ds.covariates)
        factors = []
        for k, mediator in enumerate(order):
            spec = specs.get(mediator)
            if spec is None:
                raise FormulaError(f"No density formula for mediator '{mediator}'")
            if spec.response != mediator:
                raise FormulaError(
                    f"Density formula for '{mediator}' has response '{spec.response}'", formula=spec.text
                )
            illegal = [v for v in spec.variables if v not in allowed]
            if illegal:
                raise FormulaError(
                    f"Density factor for '{mediator}' may condition only on covariates and "
                    f"earlier mediators {list(order[:k])}; found {illegal}",
                    formula=spec.text,
                )
            if ds.is_binary(mediator):
                model = GLMService.fit(spec, sample, Family.BINOMIAL)
                factors.append(DensityFactor(mediator, FactorKind.BINARY, model))
            else:
                model = GLMService.fit(spec, sample, Family.GAUSSIAN)
                if not model.sigma2 or model.sigma2 <= 0:
                    raise ModelFitError(
                        f"Residual variance of '{mediator}' factor is zero", code="ZERO_VARIANCE"
                    )
                factors.append(DensityFactor(mediator, FactorKind.CONTINUOUS, model, model.sigma2))
            allowed.add(mediator)
        logger.debug(f"Fitted mediator density ({', '.join(order)}) on {fitted_on}")
        return FactorizedDensity(order=order, factors=tuple(factors), fitted_on=fitted_on)

    @staticmethod
    def density_at(fd: FactorizedDensity, sample: SampleView) -> np.ndarray:
        """Joint mediator density at each row's observed (C, M)."""
        dens = np.ones(sample.n)
        for factor in fd.factors:
            m = sample.column(factor.mediator)
            mean = GLMService.predict(factor.model, sample)
            if factor.kind == FactorKind.BINARY:
                p = _clip(mean)
                dens *= np.where(m == 1.0, p, 1.0 - p)
            else:
                dens *= norm.pdf(m, loc=mean, scale=np.sqrt(factor.sigma2))
        return dens

    @staticmethod
    def simulate(fd: FactorizedDensity, sample: SampleView, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        """Draw the mediator block for each row, factor by factor."""
        ds = sample.base
        draws: Dict[str, np.ndarray] = {}
        for factor in fd.factors:
            mean = GLMService.predict(factor.model, _view(ds, sample))
            if factor.kind == FactorKind.BINARY:
                values = (rng.random(sample.n) < _clip(mean)).astype(float)
            else:
                values = rng.normal(mean, np.sqrt(factor.sigma2))
            draws[factor.mediator] = values
            full = np.array(ds.column(factor.mediator), dtype=float)
            full[sample.index] = values
            ds = DataService.with_columns(ds, {factor.mediator: full})
        return draws

    @staticmethod
    def lattice(fd: FactorizedDensity) -> Iterator[Dict[str, float]]:
        """Every point of the mediator lattice; all factors must be binary."""
        if not fd.all_binary:
            raise ModelFitError(
                "Exact mediator summation needs all mediators binary", code="NOT_DISCRETE"
            )
        for point in itertools.product((0.0, 1.0), repeat=len(fd.order)):
            yield dict(zip(fd.order, point))

    @staticmethod
    def lattice_masses(fd: FactorizedDensity, sample: SampleView) -> Iterator[Tuple[Dict[str, float], np.ndarray]]:
        """(lattice point, per-row mass) pairs; masses sum to one per row."""
        for point in MediatorDensityService.lattice(fd):
            ds = DataService.with_columns(sample.base, point)
            yield point, MediatorDensityService.density_at(fd, _view(ds, sample))
