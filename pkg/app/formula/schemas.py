from dataclasses import dataclass, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class Factor:
    """One variable inside a term: a plain variable or a natural spline of it."""
    name: str
    df: Optional[int] = None

    @property
    def is_spline(self) -> bool:
        return self.df is not None

    @property
    def label(self) -> str:
        return f"ns({self.name},{self.df})" if self.is_spline else self.name


Term = Tuple[Factor, ...]


def term_label(term: Term) -> str:
    return ":".join(f.label for f in term)


@dataclass(frozen=True)
class FormulaSpec:
    response: str
    terms: Tuple[Term, ...]
    text: str = ""

    @property
    def variables(self) -> Tuple[str, ...]:
        seen: Dict[str, None] = {}
        for term in self.terms:
            for factor in term:
                seen.setdefault(factor.name, None)
        return tuple(seen)

    @property
    def spline_factors(self) -> Tuple[Factor, ...]:
        seen: Dict[Factor, None] = {}
        for term in self.terms:
            for factor in term:
                if factor.is_spline:
                    seen.setdefault(factor, None)
        return tuple(seen)

    def render(self) -> str:
        rhs = " + ".join(term_label(t) for t in self.terms) or "1"
        return f"{self.response} ~ {rhs}"

    def with_response(self, response: str) -> "FormulaSpec":
        spec = replace(self, response=response)
        return replace(spec, text=spec.render())

    def with_terms(self, terms: Tuple[Term, ...]) -> "FormulaSpec":
        spec = replace(self, terms=tuple(terms))
        return replace(spec, text=spec.render())


@dataclass(frozen=True, eq=False)
class SplineKnots:
    boundary: Tuple[float, float]
    interior: Tuple[float, ...]


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    matrix: np.ndarray
    column_names: Tuple[str, ...]
    knots: Mapping[str, SplineKnots]
    levels: Mapping[str, Tuple[str, ...]]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape
