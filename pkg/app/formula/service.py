import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from app.core.exceptions import DataError, FormulaError
from app.data.schemas import SampleView
from app.formula.parser import parse_formula
from app.formula.schemas import DesignMatrix, Factor, FormulaSpec, SplineKnots
from app.formula.splines import compute_knots, natural_spline_basis

logger = logging.getLogger(__name__)

INTERCEPT = "(Intercept)"


class FormulaService:
    @staticmethod
    def parse_formula(text: str) -> FormulaSpec:
        return parse_formula(text)

    @staticmethod
    def check_variables(spec: FormulaSpec, available: List[str]) -> None:
        missing = [v for v in spec.variables if v not in available]
        if missing:
            raise FormulaError(
                f"Formula '{spec.text or spec.render()}' references unknown variables: {', '.join(missing)}",
                formula=spec.text,
            )

    @staticmethod
    def build_design(
        spec: FormulaSpec,
        sample: SampleView,
        knots: Optional[Mapping[str, SplineKnots]] = None,
        levels: Optional[Mapping[str, Tuple[str, ...]]] = None,
    ) -> DesignMatrix:
        """Design matrix of ``spec`` over the rows of ``sample``.

        Without stored ``knots`` the spline knots are placed on the rows that
        carry positive weight and recorded. Stored ``levels`` (from the fit)
        make an unseen categorical level an error.
        """
        ds = sample.base
        FormulaService.check_variables(spec, list(ds.columns))

        fitted_knots: Dict[str, SplineKnots] = {}
        if knots is None:
            positive = sample.effective_weights > 0
            for factor in spec.spline_factors:
                FormulaService._require_numeric(spec, sample, factor)
                fitted_knots[factor.label] = compute_knots(
                    sample.column(factor.name)[positive], factor.df, factor.name
                )
        else:
            for factor in spec.spline_factors:
                if factor.label not in knots:
                    raise FormulaError(
                        f"No stored knots for {factor.label}", formula=spec.text
                    )
                fitted_knots[factor.label] = knots[factor.label]

        used_levels: Dict[str, Tuple[str, ...]] = {}
        blocks: Dict[Factor, Tuple[np.ndarray, List[str]]] = {}
        for term in spec.terms:
            for factor in term:
                if factor in blocks:
                    continue
                if factor.is_spline:
                    FormulaService._require_numeric(spec, sample, factor)
                    basis = natural_spline_basis(sample.column(factor.name), fitted_knots[factor.label])
                    names = [f"{factor.label}[{j + 1}]" for j in range(basis.shape[1])]
                    blocks[factor] = (basis, names)
                elif ds.is_categorical(factor.name):
                    lv = tuple(levels[factor.name]) if levels and factor.name in levels else ds.levels[factor.name]
                    values = sample.column(factor.name)
                    unseen = sorted(set(values.tolist()) - set(lv))
                    if unseen:
                        raise DataError(
                            f"Unseen level(s) {unseen} for '{factor.name}' at prediction time",
                            details={"column": factor.name, "levels": unseen},
                        )
                    used_levels[factor.name] = lv
                    dummies = np.column_stack([(values == level).astype(float) for level in lv[1:]]) \
                        if len(lv) > 1 else np.zeros((sample.n, 0))
                    blocks[factor] = (dummies, [f"{factor.name}[{level}]" for level in lv[1:]])
                else:
                    blocks[factor] = (sample.column(factor.name).astype(float)[:, None], [factor.name])

        columns = [np.ones(sample.n)]
        names = [INTERCEPT]
        for term in spec.terms:
            cols = [np.ones(sample.n)]
            labels = [""]
            for factor in term:
                block, block_names = blocks[factor]
                cols = [c * block[:, j] for c in cols for j in range(block.shape[1])]
                labels = [f"{lab}:{bn}" if lab else bn for lab in labels for bn in block_names]
            columns.extend(cols)
            names.extend(labels)

        matrix = np.column_stack(columns)
        return DesignMatrix(matrix=matrix, column_names=tuple(names), knots=fitted_knots, levels=used_levels)

    @staticmethod
    def _require_numeric(spec: FormulaSpec, sample: SampleView, factor: Factor) -> None:
        if sample.base.is_categorical(factor.name):
            raise FormulaError(
                f"Spline variable '{factor.name}' must be numeric", formula=spec.text
            )
