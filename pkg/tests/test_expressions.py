import numpy as np
import pytest

from lyapflow.coefficients import expressions as ex
from lyapflow.errors import (
    ExpressionNameError,
    ExpressionParseError,
    UnsupportedExpressionError,
)


def ev(text, x, t=0.0, d=None, params=None):
    d = d if d is not None else (len(x) if hasattr(x, "__len__") else 1)
    tree = ex.parse(text, d, set(params or {}))
    if params:
        tree = ex.bind(tree, params)
    return ex.evaluate(tree, np.atleast_1d(np.asarray(x, dtype=float)), t)


class TestParsing:
    def test_caret_is_integer_power(self):
        assert ev("x1^3", [2.0]) == 8.0
        assert ev("x1^3 * 2", [2.0]) == 16.0
        assert ev("-x1^2", [3.0]) == -9.0  # power binds tighter than unary minus
        assert ev("x1^-1", [4.0]) == 0.25

    def test_double_star_power_also_accepted(self):
        assert ev("x1**2", [5.0]) == 25.0

    def test_arithmetic_and_functions(self):
        assert ev("2*x1 + x2/4 - 1", [1.0, 8.0]) == 3.0
        assert ev("sin(0) + cos(0) + exp(0) + tanh(0)", [0.0]) == 2.0
        assert ev("min(x1, 2) + max(x1, 2)", [5.0]) == 7.0

    def test_time_variable(self):
        assert ev("t*x1", [3.0], t=2.0) == 6.0

    def test_parameters_bind(self):
        assert ev("a*x1 + b", [2.0], params={"a": 3.0, "b": 1.0}) == 7.0

    def test_unknown_identifier_reports_position(self):
        with pytest.raises(ExpressionNameError) as exc:
            ex.parse("x1 + bogus", 1, set())
        assert exc.value.position is not None

    def test_out_of_range_variable(self):
        with pytest.raises(ExpressionNameError):
            ex.parse("x3", 2, set())

    def test_syntax_error_reports_position(self):
        with pytest.raises(ExpressionParseError) as exc:
            ex.parse("x1 + * 2", 1, set())
        assert exc.value.position is not None

    def test_non_integer_exponent_rejected(self):
        with pytest.raises(ExpressionParseError):
            ex.parse("x1^2.5", 1, set())
        with pytest.raises(ExpressionParseError):
            ex.parse("x1^x1", 1, set())

    def test_disallowed_syntax(self):
        for bad in ("x1 if t else 2", "[1,2]", "x1 < 2", "f(x1)", "x1 % 2"):
            with pytest.raises(ExpressionParseError):
                ex.parse(bad, 1, set())


class TestDifferentiation:
    def d(self, text, var=0, dim=1, params=None):
        tree = ex.parse(text, dim, set(params or {}))
        if params:
            tree = ex.bind(tree, params)
        return ex.differentiate(tree, var)

    def test_polynomial(self):
        ddx = self.d("-x1^3 - x1")
        # derivative at 0.7 is -3*0.49 - 1 = -2.47
        assert ex.evaluate(ddx, np.array([0.7])) == pytest.approx(-2.47, abs=1e-12)

    def test_product_and_quotient(self):
        ddx = self.d("x1*sin(x1)")
        x = 1.3
        expected = np.sin(x) + x * np.cos(x)
        assert ex.evaluate(ddx, np.array([x])) == pytest.approx(expected, rel=1e-14)
        ddx = self.d("x1 / (1 + x1^2)")
        expected = (1 - x * x) / (1 + x * x) ** 2
        assert ex.evaluate(ddx, np.array([x])) == pytest.approx(expected, rel=1e-13)

    def test_chain_rules(self):
        x = 0.4
        cases = {
            "sin(2*x1)": 2 * np.cos(2 * x),
            "cos(x1^2)": -2 * x * np.sin(x * x),
            "exp(-x1)": -np.exp(-x),
            "tanh(3*x1)": 3 * (1 - np.tanh(3 * x) ** 2),
        }
        for text, expected in cases.items():
            got = ex.evaluate(self.d(text), np.array([x]))
            assert got == pytest.approx(expected, rel=1e-13)

    def test_partial_derivatives(self):
        ddx2 = self.d("x1*x2 + x2^2", var=1, dim=2)
        got = ex.evaluate(ddx2, np.array([3.0, 5.0]))
        assert got == pytest.approx(13.0, abs=1e-14)

    def test_negative_power(self):
        ddx = self.d("x1^-2")
        assert ex.evaluate(ddx, np.array([2.0])) == pytest.approx(-2 / 8, rel=1e-14)

    def test_min_max_rejected(self):
        with pytest.raises(UnsupportedExpressionError):
            self.d("min(x1, 0)")
        with pytest.raises(UnsupportedExpressionError):
            self.d("x1 + max(x1, 2)")

    def test_central_difference_agreement(self):
        # independent finite-difference oracle over a mixed expression
        text = "sin(x1)*exp(x2) - x1^2/(1 + x2^2)"
        tree = ex.parse(text, 2, set())
        rng = np.random.default_rng(5)
        for _ in range(8):
            x = rng.standard_normal(2)
            for var in (0, 1):
                sym = ex.evaluate(ex.differentiate(tree, var), x)
                h = 1e-6
                e = np.zeros(2)
                e[var] = h
                fd = (ex.evaluate(tree, x + e) - ex.evaluate(tree, x - e)) / (2 * h)
                assert sym == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestCompilation:
    def test_compiled_matches_reference(self):
        texts = ["a*x1 + sin(t)*x2", "x2^3 - exp(-x1)", "min(x1, x2)"]
        params = {"a": 2.5}
        trees = [ex.bind(ex.parse(s, 2, {"a"}), params) for s in texts]
        fn = ex.compile_vector(trees, "probe")
        rng = np.random.default_rng(0)
        x = rng.standard_normal((7, 2))
        out = np.empty((7, 3))
        fn(x, 0.7, out)
        for i, tree in enumerate(trees):
            np.testing.assert_allclose(out[:, i], ex.evaluate(tree, x, 0.7), rtol=1e-15)

    def test_compiled_scalar_point(self):
        tree = ex.parse("x1^2 + 1", 1, set())
        fn = ex.compile_vector([tree], "probe1")
        out = np.empty(1)
        fn(np.array([3.0]), 0.0, out)
        assert out[0] == 10.0

    def test_unbound_parameter_fails(self):
        tree = ex.parse("a*x1", 1, {"a"})
        with pytest.raises(ExpressionNameError):
            ex.codegen(tree)


class TestSimplify:
    def test_constant_folding(self):
        tree = ex.parse("0*x1 + 1*x1 + 2*3", 1, set())
        assert ex.simplify(tree) == ex.Add(ex.Var(0), ex.Const(6.0))

    def test_structural_queries(self):
        tree = ex.parse("sin(t) + x2", 3, set())
        assert ex.uses_time(tree)
        assert ex.free_state_vars(tree) == frozenset({1})
        assert not ex.is_constant(tree)
        assert ex.is_constant(ex.parse("2*3 - 1", 1, set()))

    def test_canon_is_stable(self):
        a = ex.parse("x1 + sin(t)*2", 1, set())
        b = ex.parse("x1 + sin(t)*2", 1, set())
        assert ex.canon(a) == ex.canon(b)
        assert ex.canon(a) != ex.canon(ex.parse("x1 - sin(t)*2", 1, set()))
