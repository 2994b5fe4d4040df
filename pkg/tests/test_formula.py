import numpy as np
import pytest

from app.core.exceptions import DataError, FormulaError
from app.data.schemas import SampleView, Selector
from app.data.service import DataService
from app.formula.parser import parse_formula
from app.formula.schemas import Factor
from app.formula.service import INTERCEPT, FormulaService
from app.formula.splines import compute_knots, natural_spline_basis
from tests.conftest import make_dataset


def labels(text):
    return [":".join(f.label for f in t) for t in parse_formula(text).terms]


class TestParser:
    def test_main_effects(self):
        spec = parse_formula("Y ~ C1 + C2")
        assert spec.response == "Y"
        assert labels("Y ~ C1 + C2") == ["C1", "C2"]

    def test_star_expands_all_subsets(self):
        assert labels("Y ~ a*b*c") == ["a", "b", "c", "a:b", "a:c", "b:c", "a:b:c"]

    def test_interaction_is_unordered(self):
        assert labels("Y ~ a:b + b:a") == ["a:b"]

    def test_duplicates_removed(self):
        assert labels("Y ~ a + a + a*b") == ["a", "b", "a:b"]

    def test_parentheses_distribute(self):
        assert labels("Y ~ (a + b):c") == ["a:c", "b:c"]

    def test_spline_factor(self):
        spec = parse_formula("Y ~ ns(C3, 3) + C1")
        assert spec.spline_factors == (Factor("C3", 3),)
        assert spec.render() == "Y ~ ns(C3,3) + C1"

    def test_intercept_only(self):
        spec = parse_formula("Y ~ 1")
        assert spec.terms == ()
        assert spec.render() == "Y ~ 1"

    def test_variables_in_first_appearance_order(self):
        assert parse_formula("Y ~ b + a:b + ns(c, 2)").variables == ("b", "c", "a")

    @pytest.mark.parametrize(
        "text, position",
        [
            ("Y ~ x +", 7),
            ("Y ~ x $ z", 6),
            ("~ x", 0),
            ("Y x", 2),
        ],
    )
    def test_syntax_errors_report_position(self, text, position):
        with pytest.raises(FormulaError) as exc:
            parse_formula(text)
        assert exc.value.position == position
        assert f"position {position}" in exc.value.message

    def test_unknown_function(self):
        with pytest.raises(FormulaError, match="Unknown function 'log'"):
            parse_formula("Y ~ log(x)")

    @pytest.mark.parametrize("text", ["Y ~ ns(x, 0)", "Y ~ ns(x, 2.5)", "Y ~ ns(3, 2)"])
    def test_bad_spline_calls(self, text):
        with pytest.raises(FormulaError):
            parse_formula(text)

    def test_empty_formula(self):
        with pytest.raises(FormulaError, match="empty"):
            parse_formula("   ")

    def test_with_response(self):
        spec = parse_formula("A ~ C1*C2").with_response("Z")
        assert spec.text == "Z ~ C1 + C2 + C1:C2"


class TestSplines:
    def test_knots_at_quantiles(self):
        x = np.linspace(0.0, 1.0, 101)
        knots = compute_knots(x, 3)
        assert knots.boundary == (0.0, 1.0)
        np.testing.assert_allclose(knots.interior, [1 / 3, 2 / 3])

    def test_df_one_has_no_interior_knots(self):
        assert compute_knots(np.arange(5.0), 1).interior == ()

    def test_constant_variable_rejected(self):
        with pytest.raises(FormulaError, match="constant"):
            compute_knots(np.ones(10), 3, "C3")

    def test_basis_shape_and_zero_at_lower_boundary(self):
        x = np.linspace(0.0, 1.0, 50)
        basis = natural_spline_basis(x, compute_knots(x, 4))
        assert basis.shape == (50, 4)
        np.testing.assert_allclose(basis[0], 0.0, atol=1e-12)

    def test_linear_beyond_boundaries(self):
        x = np.linspace(0.0, 1.0, 50)
        knots = compute_knots(x, 3)
        outside = natural_spline_basis(np.array([1.5, 2.0, 2.5, -0.5, -1.0, -1.5]), knots)
        np.testing.assert_allclose(outside[0] - 2 * outside[1] + outside[2], 0.0, atol=1e-10)
        np.testing.assert_allclose(outside[3] - 2 * outside[4] + outside[5], 0.0, atol=1e-10)

    def test_continuous_at_boundary(self):
        x = np.linspace(0.0, 1.0, 50)
        knots = compute_knots(x, 3)
        edge = natural_spline_basis(np.array([1.0, 1.0 + 1e-9]), knots)
        np.testing.assert_allclose(edge[0], edge[1], atol=1e-7)

    def test_zero_curvature_at_boundaries(self):
        x = np.linspace(0.0, 1.0, 50)
        knots = compute_knots(x, 3)
        h = 1e-5
        for b in knots.boundary:
            pts = natural_spline_basis(np.array([b - h, b, b + h]), knots)
            second = (pts[0] - 2 * pts[1] + pts[2]) / h**2
            np.testing.assert_allclose(second, 0.0, atol=1e-2)


@pytest.fixture
def grouped_ds():
    return make_dataset(
        {
            "G": np.array(["a", "b", "c", "a", "b", "c"], dtype=object),
            "X": np.array([0.1, 0.4, 0.2, 0.9, 0.5, 0.7]),
            "A": np.array([0, 1, 0, 1, 0, 1.0]),
            "M": np.array([1, 0, 1, 0, 1, 0.0]),
            "Y": np.arange(6.0),
        },
        {"G": "covariate", "X": "covariate", "A": "exposure", "M": "mediator", "Y": "outcome"},
        levels={"G": ["a", "b", "c"]},
    )


class TestDesign:
    def test_categorical_dummies_and_interactions(self, grouped_ds):
        design = FormulaService.build_design(parse_formula("Y ~ G*X"), DataService.full(grouped_ds))
        assert design.column_names == (INTERCEPT, "G[b]", "G[c]", "X", "G[b]:X", "G[c]:X")
        np.testing.assert_array_equal(design.matrix[:, 1], [0, 1, 0, 0, 1, 0])
        np.testing.assert_allclose(design.matrix[:, 4], [0, 0.4, 0, 0, 0.5, 0])

    def test_unknown_variable(self, grouped_ds):
        with pytest.raises(FormulaError, match="Z"):
            FormulaService.build_design(parse_formula("Y ~ Z"), DataService.full(grouped_ds))

    def test_spline_on_categorical_rejected(self, grouped_ds):
        with pytest.raises(FormulaError, match="numeric"):
            FormulaService.build_design(parse_formula("Y ~ ns(G, 2)"), DataService.full(grouped_ds))

    def test_knots_reused_for_prediction(self, grouped_ds):
        spec = parse_formula("Y ~ ns(X, 2)")
        fitted = FormulaService.build_design(spec, SampleView(grouped_ds, Selector.TREATED))
        again = FormulaService.build_design(spec, DataService.full(grouped_ds), knots=fitted.knots)
        assert again.knots["ns(X,2)"] is fitted.knots["ns(X,2)"]
        assert fitted.knots["ns(X,2)"].boundary == (0.4, 0.9)

    def test_unseen_level_at_prediction(self, grouped_ds):
        spec = parse_formula("Y ~ G")
        with pytest.raises(DataError, match="Unseen"):
            FormulaService.build_design(spec, DataService.full(grouped_ds), levels={"G": ("a", "b")})
