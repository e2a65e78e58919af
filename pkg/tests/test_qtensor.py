import math

import numpy as np
import pytest

from qflow.energy import LdGParams
from qflow.qtensor import (
    PhysicalityInterval,
    QTensor2,
    QTensor3,
    eigenvalues,
    eigvals_traceless_sym3,
    frobenius_norm,
    from_director,
    hedgehog_tensor,
    is_physical,
    physical_interval,
    unit_physicality_interval,
)


def params(a=-1.0, b=0.0, c=1.0):
    return LdGParams(a=a, b=b, c=c, L1=1.0, L2=0.0, L3=0.0, L4=0.0)


class TestFrobeniusNorm:
    def test_zero(self):
        assert frobenius_norm(QTensor2(0.0, 0.0)) == 0.0

    def test_closed_form_2d(self):
        # sqrt(2 (p^2 + q^2)) with p=3, q=4
        assert frobenius_norm(QTensor2(3.0, 4.0)) == pytest.approx(math.sqrt(50.0), abs=1e-12)

    def test_director_3d(self):
        q = from_director([0.0, 0.0, 1.0], 1.0, 3)
        assert frobenius_norm(q) == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-12)


class TestEigenvalues:
    def test_diagonal_2d(self):
        assert eigenvalues(QTensor2(1.0, 0.0)) == pytest.approx([-1.0, 1.0])

    def test_characteristic_poly_2d(self):
        # lambda^2 = p^2 + q^2
        assert eigenvalues(QTensor2(3.0, 4.0)) == pytest.approx([-5.0, 5.0])

    def test_diagonal_3d(self):
        q = QTensor3(-1.0 / 3.0, -1.0 / 3.0, 0.0, 0.0, 0.0)
        lam = eigenvalues(q)
        assert lam == pytest.approx([-1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0], abs=1e-7)
        assert abs(lam.sum()) < 1e-12

    def test_3d_matches_lapack_on_random(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            m = rng.normal(size=(3, 3))
            m = 0.5 * (m + m.T)
            m -= np.trace(m) / 3.0 * np.eye(3)
            ours = eigvals_traceless_sym3(m)
            ref = np.linalg.eigvalsh(m)
            assert np.abs(ours - ref).max() < 1e-10 * max(1.0, np.abs(ref).max())

    def test_sum_to_zero(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            q = QTensor3(*rng.normal(size=5))
            assert abs(eigenvalues(q).sum()) < 1e-12


class TestFromDirector:
    def test_axis_2d(self):
        q = from_director([1.0, 0.0], 1.0, 2)
        assert (q.p, q.q) == pytest.approx((0.5, 0.0))

    def test_axis_3d(self):
        q = from_director([0.0, 0.0, 1.0], 1.0, 3)
        assert np.allclose(np.diag(q.matrix()), [-1 / 3, -1 / 3, 2 / 3])

    def test_oblique_2d(self):
        q = from_director([1 / math.sqrt(2), 1 / math.sqrt(2)], 2.0, 2)
        assert (q.p, q.q) == pytest.approx((0.0, 1.0))

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            from_director([1.0, 1.0], 1.0, 2)

    def test_traceless(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            q = from_director(n, rng.normal(), 3)
            assert abs(np.trace(q.matrix())) < 1e-14


class TestHedgehogTensor:
    def test_on_x2_axis(self):
        q = hedgehog_tensor([0.0, 2.0], 4.0)
        assert (q.p, q.q) == pytest.approx((-2.0, 0.0))

    def test_on_x1_axis(self):
        q = hedgehog_tensor([1.0, 0.0], 1.0)
        assert (q.p, q.q) == pytest.approx((0.5, 0.0))

    def test_diagonal_direction(self):
        q = hedgehog_tensor([1.0, 1.0], 2.0)
        assert (q.p, q.q) == pytest.approx((0.0, 1.0))

    def test_rejects_origin(self):
        with pytest.raises(ValueError):
            hedgehog_tensor([0.0, 0.0], 1.0)

    def test_norm_is_theta_over_sqrt2(self):
        q = hedgehog_tensor([0.3, -0.4], 1.7)
        assert frobenius_norm(q) == pytest.approx(1.7 / math.sqrt(2.0), abs=1e-12)


class TestPhysicalInterval:
    def test_2d(self):
        iv = physical_interval(params(a=-1.0, c=1.0), 2)
        assert (iv.lo, iv.hi) == pytest.approx((-0.7071067811865476, 0.7071067811865476))

    def test_3d(self):
        iv = physical_interval(params(a=-1.0, b=3.0, c=1.0), 3)
        # (3 + sqrt(33))/12 and (3 + sqrt(33))/6
        root = 3.0 + math.sqrt(33.0)
        assert (iv.lo, iv.hi) == pytest.approx((-root / 12.0, root / 6.0))

    def test_degenerate_radius_rejected(self):
        with pytest.raises(ValueError, match="empty physicality radius"):
            physical_interval(params(a=0.0, c=1.0), 2)

    def test_3d_requires_a_restriction(self):
        with pytest.raises(ValueError):
            physical_interval(params(a=-4.0, b=3.0, c=1.0), 3)

    def test_unit_preset(self):
        iv = unit_physicality_interval(3)
        assert (iv.lo, iv.hi) == pytest.approx((-1 / 3, 2 / 3))


class TestIsPhysical:
    def setup_method(self):
        self.iv = PhysicalityInterval(-0.7071067811865476, 0.7071067811865476, 2)

    def test_zero(self):
        assert is_physical(QTensor2(0.0, 0.0), self.iv)

    def test_inside(self):
        assert is_physical(QTensor2(0.6, 0.0), self.iv)

    def test_outside(self):
        assert not is_physical(QTensor2(0.8, 0.0), self.iv)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            is_physical(QTensor3(0.1, 0.1, 0.0, 0.0, 0.0), self.iv)


class TestInvariants:
    def test_trace_q3_vanishes_2d(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            m = QTensor2(*rng.normal(size=2)).matrix()
            assert abs(np.trace(m @ m @ m)) < 1e-14 * max(1.0, np.abs(m).max() ** 3)

    def test_trace_cubed_bound_3d(self):
        # |tr(Q^3)| <= |Q|^3 / sqrt(6) on 1e4 random tensors
        rng = np.random.default_rng(8)
        m = rng.normal(size=(10000, 3, 3))
        m = 0.5 * (m + np.swapaxes(m, -1, -2))
        m -= (np.trace(m, axis1=-2, axis2=-1) / 3.0)[:, None, None] * np.eye(3)
        t3 = np.einsum("nij,njk,nki->n", m, m, m)
        nrm = np.sqrt(np.einsum("nij,nij->n", m, m))
        assert np.all(np.abs(t3) <= nrm**3 / math.sqrt(6.0) + 1e-12)

    def test_norm_bound_iff_physical_2d(self):
        # for d=2: |Q| <= sqrt(2) hi iff physical, by sampling
        iv = physical_interval(params(a=-1.0, c=1.0), 2)
        rng = np.random.default_rng(9)
        for _ in range(500):
            q = QTensor2(*rng.normal(size=2))
            bounded = frobenius_norm(q) <= math.sqrt(2.0) * iv.hi + 1e-12
            assert bounded == is_physical(q, iv)
