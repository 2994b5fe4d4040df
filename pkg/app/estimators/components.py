import logging
from typing import Any, Callable, Dict, List, Set, Tuple

import numpy as np

from app.core.exceptions import AppException, ConfigError
from app.core.rng import substream
from app.data.schemas import Dataset, Selector
from app.data.service import DataService
from app.estimators import potential_outcomes as po
from app.estimators.schemas import EstimationOptions
from app.formula.parser import parse_formula
from app.formula.schemas import FormulaSpec
from app.glm.schemas import FittedModel
from app.glm.service import GLMService
from app.meddensity.schemas import FactorizedDensity
from app.meddensity.service import MediatorDensityService
from app.weights.schemas import CrossWorldMethod, WeightSet
from app.weights.service import WeightService

logger = logging.getLogger(__name__)


class _Failure:
    def __init__(self, error: BaseException):
        self.error = error


class ComponentCache:
    """Lazily fitted estimation components shared by every estimator in a run.

    Each component is computed once; a failure is remembered and re-raised
    to every consumer. ``consumed()`` lists what the current estimator has
    touched, including components pulled in indirectly.
    """

    def __init__(self, options: EstimationOptions, ds: Dataset, seed: int):
        self.options = options
        self.ds = ds
        self.seed = seed
        self._memo: Dict[str, Any] = {}
        self._deps: Dict[str, Set[str]] = {}
        self._stack: List[Set[str]] = []
        self._current: Set[str] = set()
        self._specs: Dict[str, FormulaSpec] = {}

    # bookkeeping
    def begin(self) -> None:
        self._current = set()

    def consumed(self) -> List[str]:
        return sorted(self._current)

    def _record(self, names: Set[str]) -> None:
        self._current |= names
        if self._stack:
            self._stack[-1] |= names

    def _get(self, key: str, build: Callable[[], Any]) -> Any:
        if key not in self._memo:
            self._stack.append(set())
            try:
                value = build()
            except (AppException, np.linalg.LinAlgError) as e:
                value = _Failure(e)
            deps = self._stack.pop()
            self._memo[key] = value
            self._deps[key] = deps | {key}
        self._record(self._deps[key])
        value = self._memo[key]
        if isinstance(value, _Failure):
            raise value.error
        return value

    def spec(self, key: str) -> FormulaSpec:
        if key not in self._specs:
            text = getattr(self.options.formulas, key)
            if not text:
                raise ConfigError(f"Formula '{key}' is required but missing", errors=[f"formulas.{key}: missing"])
            self._specs[key] = parse_formula(text)
        return self._specs[key]

    def _capped(self, ws: WeightSet) -> WeightSet:
        cap = self.options.weight_cap
        return ws if cap is None else WeightService.cap_weights(ws, cap, self.ds)

    # exposure models and weights
    def propensity(self) -> FittedModel:
        return self._get("propensity", lambda: WeightService.fit_propensity(self.spec("propensity"), self.ds))

    def propensity_scores(self) -> np.ndarray:
        return self._get("propensity_scores", lambda: GLMService.predict(self.propensity(), DataService.full(self.ds)))

    def _ipw(self) -> Tuple[WeightSet, WeightSet]:
        return self._get("ipw", lambda: WeightService.ipw_weights(self.propensity_scores(), self.ds))

    def omega1(self) -> WeightSet:
        return self._get("omega1", lambda: self._capped(self._ipw()[0]))

    def omega0(self) -> WeightSet:
        return self._get("omega0", lambda: self._capped(self._ipw()[1]))

    def exposure_cm(self) -> FittedModel:
        return self._get(
            "exposure_cm",
            lambda: WeightService.fit_exposure_model(self.spec("exposure_cm"), self.ds, "exposure_cm"),
        )

    def omega_sx(self) -> WeightSet:
        return self._get("omega_sx", lambda: self._capped(WeightService.sx_weights(self.exposure_cm(), self.ds)))

    def omega_x(self) -> WeightSet:
        method = CrossWorldMethod(self.options.weights_method)

        def build() -> WeightSet:
            prop = self.propensity_scores()
            if method == CrossWorldMethod.EXPR1:
                ws = WeightService.crossworld_weights(
                    method, self.ds, prop,
                    density_control=self.density("control"),
                    density_treated=self.density("treated"),
                )
            elif method == CrossWorldMethod.EXPR2:
                ws = WeightService.crossworld_weights(method, self.ds, prop, exposure_cm=self.exposure_cm())
            else:
                ws = WeightService.crossworld_weights(
                    method, self.ds, prop, omega0=self.omega0(), stacked_spec=self.spec("exposure_cm"),
                )
            return self._capped(ws)

        return self._get("omega_x", build)

    # mediator densities
    def _density_specs(self) -> Tuple[Tuple[str, ...], Dict[str, FormulaSpec]]:
        f = self.options.formulas
        order = tuple(f.mediator_order or self.ds.mediators)
        missing = [m for m in order if m not in f.mediator_density]
        if missing:
            raise ConfigError(
                "Mediator density formulas are missing",
                errors=[f"formulas.mediator_density.{m}: missing" for m in missing],
            )
        return order, {m: parse_formula(f.mediator_density[m]) for m in order}

    def density(self, sample: str) -> FactorizedDensity:
        """Mediator density on 'control' (s0), 'treated', or 'pseudo_control' (p0)."""
        def build() -> FactorizedDensity:
            order, specs = self._density_specs()
            if sample == "pseudo_control":
                view = po.weighted_view(self.ds, Selector.CONTROL, self.omega0())
            else:
                view = po.weighted_view(self.ds, Selector(sample))
            return MediatorDensityService.fit_density(order, specs, view, fitted_on=sample)

        return self._get(f"mediator_density[{sample}]", build)

    # outcome models
    def outcome_arm(self, arm: int, variant: str) -> FittedModel:
        key = "outcome_c1" if arm == 1 else "outcome_c0"

        def build() -> FittedModel:
            weights = None
            if variant == "ps":
                weights = self.omega1() if arm == 1 else self.omega0()
            return po.fit_outcome_arm(self.spec(key), self.ds, arm, weights)

        return self._get(f"{key}[{variant}]", build)

    def outcome_cm(self, variant: str) -> FittedModel:
        return self._get(
            f"outcome_cm[{variant}]",
            lambda: po.fit_outcome_cm(self.spec("outcome_cm"), self.ds, self.omega_x() if variant == "px" else None),
        )

    # building blocks
    def block(self, key: str, build: Callable[[], Any]) -> Any:
        return self._get(key, build)

    def rng(self, key: str) -> np.random.Generator:
        return substream(self.seed, "msim", key)

    def weight_diagnostics(self) -> Dict[str, float]:
        """ess of every weight set the current estimator consumed."""
        out: Dict[str, float] = {}
        for name in ("omega1", "omega0", "omega_x", "omega_sx"):
            if name in self._current and not isinstance(self._memo.get(name), _Failure):
                out[f"ess_{name}"] = WeightService.effective_sample_size(self._memo[name], self.ds)
        return out

    def fitted_models(self) -> Dict[str, FittedModel]:
        return {k: v for k, v in self._memo.items() if isinstance(v, FittedModel)}

    def weight_sets(self) -> Dict[str, WeightSet]:
        return {k: v for k, v in self._memo.items() if isinstance(v, WeightSet) and k.startswith("omega")}
