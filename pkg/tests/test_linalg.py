import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lyapflow import linalg
from lyapflow.errors import DegenerateFrameError


def small_matrices(min_side=2, max_side=4, lo=-10.0, hi=10.0):
    return st.integers(min_side, max_side).flatmap(
        lambda d: hnp.arrays(
            np.float64,
            (d, d),
            elements=st.floats(lo, hi, allow_nan=False, allow_infinity=False),
        )
    )


class TestOperatorNorm:
    def test_identity_is_isometry(self):
        assert linalg.operator_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-14)

    def test_diagonal(self):
        # singular values of diag(3, -2, 1) are {3, 2, 1}
        assert linalg.operator_norm(np.diag([3.0, -2.0, 1.0])) == pytest.approx(
            3.0, abs=1e-12
        )

    def test_nilpotent(self):
        # [[0,1],[0,0]] has singular values {1, 0}
        assert linalg.operator_norm([[0.0, 1.0], [0.0, 0.0]]) == pytest.approx(
            1.0, abs=1e-14
        )

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            linalg.operator_norm(np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            linalg.operator_norm([[np.nan, 0.0], [0.0, 1.0]])

    @given(small_matrices())
    def test_equivalence_with_column_max_norm(self, m):
        # ||M|| and the max-column norm sandwich each other within sqrt(d)
        d = m.shape[0]
        op = linalg.operator_norm(m)
        cm = linalg.column_max_norm(m)
        assert op <= np.sqrt(d) * cm + 1e-9
        assert cm <= np.sqrt(d) * op + 1e-9
        ratio = linalg.norm_equivalence_ratio(m)
        assert 1.0 / np.sqrt(d) - 1e-9 <= ratio <= np.sqrt(d) + 1e-9


class TestWedgeNorm:
    def test_identity_all_orders(self):
        for l in (1, 2, 3):
            assert linalg.wedge_norm(np.eye(3), l) == pytest.approx(1.0, abs=1e-14)

    def test_diagonal_top_two(self):
        assert linalg.wedge_norm(np.diag([3.0, 2.0, 1.0]), 2) == pytest.approx(
            6.0, abs=1e-12
        )

    @given(small_matrices())
    def test_order_one_is_operator_norm(self, m):
        assert linalg.wedge_norm(m, 1) == pytest.approx(
            linalg.operator_norm(m), rel=1e-12, abs=1e-12
        )

    def test_order_out_of_range(self):
        with pytest.raises(ValueError):
            linalg.wedge_norm(np.eye(2), 3)
        with pytest.raises(ValueError):
            linalg.wedge_norm(np.eye(2), 0)

    @given(small_matrices(max_side=3), small_matrices(max_side=3))
    @settings(max_examples=60)
    def test_submultiplicative(self, m, n):
        if m.shape != n.shape:
            return
        for l in range(1, m.shape[0] + 1):
            lhs = linalg.wedge_norm(m @ n, l)
            rhs = linalg.wedge_norm(m, l) * linalg.wedge_norm(n, l)
            assert lhs <= rhs + 1e-10 * max(1.0, rhs)

    @given(small_matrices())
    def test_power_bound(self, m):
        op = linalg.operator_norm(m)
        for l in range(1, m.shape[0] + 1):
            assert linalg.wedge_norm(m, l) <= op**l + 1e-10 * max(1.0, op**l)

    def test_inverse_compatibility(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            d = int(rng.integers(2, 5))
            m = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
            s = linalg.singular_values(m)
            if s[-1] < 1e-6 * s[0]:
                continue
            for l in range(1, d + 1):
                prod_small = float(np.prod(s[-l:]))
                val = linalg.wedge_norm(np.linalg.inv(m), l) * prod_small
                assert val == pytest.approx(1.0, rel=1e-8)


class TestQrPositive:
    def test_identity(self):
        q, r = linalg.qr_positive(np.eye(3))
        np.testing.assert_allclose(q, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(r, np.eye(3), atol=1e-15)

    def test_sign_convention(self):
        q, r = linalg.qr_positive(np.diag([-2.0, 1.0]))
        np.testing.assert_allclose(q, np.diag([-1.0, 1.0]), atol=1e-15)
        np.testing.assert_allclose(r, np.diag([2.0, 1.0]), atol=1e-15)

    def test_seeded_reconstruction(self):
        rng = np.random.default_rng(42)
        m = rng.standard_normal((3, 3))
        q, r = linalg.qr_positive(m)
        norm = linalg.operator_norm(m)
        assert np.max(np.abs(q @ r - m)) <= 1e-12 * max(1.0, norm)
        assert np.min(np.diag(r)) > 0.0
        np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-13)

    def test_rank_deficient_raises(self):
        with pytest.raises(DegenerateFrameError):
            linalg.qr_positive([[1.0, 1.0], [1.0, 1.0]])

    @given(small_matrices(lo=-5.0, hi=5.0))
    @settings(max_examples=60)
    def test_idempotent_on_q(self, m):
        s = linalg.singular_values(m)
        if s[-1] <= 1e-6 * max(s[0], 1e-30):
            return
        q, _ = linalg.qr_positive(m)
        q2, r2 = linalg.qr_positive(q)
        np.testing.assert_allclose(q2, q, atol=1e-12)
        np.testing.assert_allclose(r2, np.eye(m.shape[0]), atol=1e-12)


class TestQrPositiveStack:
    def test_matches_single(self):
        rng = np.random.default_rng(3)
        ms = rng.standard_normal((5, 3, 3))
        qs, logs, bad = linalg.qr_positive_stack(ms)
        assert not bad.any()
        for i in range(5):
            q, r = linalg.qr_positive(ms[i])
            np.testing.assert_allclose(qs[i], q, atol=1e-13)
            np.testing.assert_allclose(logs[i], np.log(np.diag(r)), atol=1e-13)

    def test_flags_degenerate_items(self):
        ms = np.stack([np.eye(2), np.ones((2, 2))])
        qs, logs, bad = linalg.qr_positive_stack(ms)
        assert list(bad) == [False, True]
        np.testing.assert_allclose(qs[1], np.eye(2))
        np.testing.assert_allclose(logs[1], 0.0)


class TestSvd:
    def test_reconstruction(self):
        rng = np.random.default_rng(9)
        m = rng.standard_normal((4, 4)) * 3.0
        fac = linalg.svd_factors(m)
        assert np.all(np.diff(fac.s) <= 1e-12)
        assert np.all(fac.s >= 0.0)
        err = linalg.operator_norm(fac.reconstruct() - m)
        assert err <= 1e-10 * max(1.0, linalg.operator_norm(m))
