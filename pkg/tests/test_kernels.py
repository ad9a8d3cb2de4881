"""Kernel-level tests: twin agreement, QP correctness, colex enumeration."""

import math

import numpy as np
import pytest

from heca import kernels
from heca.kernels import _reference

from oracles import kkt_check, projected_gradient_qp

try:
    from heca.kernels import _compiled
except ImportError:
    _compiled = None

needs_compiled = pytest.mark.skipif(_compiled is None,
                                    reason="compiled extension not built")


def random_instance(rng, k=None, r=None, lam=None):
    k = k or int(rng.integers(1, 9))
    r = r or int(rng.integers(1, 14))
    A = rng.normal(size=(r, k))
    y = rng.normal(size=r)
    lam = float(rng.uniform(0, 2)) if lam is None else lam
    H = A.T @ A + lam * np.eye(k)
    a = A.T @ y + lam / k
    return H, a, k


class TestQP:
    def test_matches_projected_gradient(self, rng):
        for _ in range(60):
            H, a, k = random_instance(rng)
            x, nu, kkt, _ = kernels.qp_shrink_simplex(H, a, np.zeros(k), 1.0)
            ref = projected_gradient_qp(H, a)
            f = lambda z: z @ H @ z - 2 * a @ z
            assert f(x) <= f(ref) + 1e-9
            assert kkt <= 1e-8

    def test_kkt_certificate_independent_recheck(self, rng):
        for _ in range(60):
            H, a, k = random_instance(rng)
            x, nu, kkt, _ = kernels.qp_shrink_simplex(H, a, np.zeros(k), 1.0)
            assert kkt_check(H, a, 0.0, 1.0, x) <= 1e-7

    def test_huge_shrinkage_recovers_target(self, rng):
        A = rng.normal(size=(9, 5))
        y = rng.normal(size=9)
        lam = 1e8 * np.linalg.norm(A.T @ A, 2)
        H = A.T @ A + lam * np.eye(5)
        a = A.T @ y + lam / 5
        x, _, _, _ = kernels.qp_shrink_simplex(H, a, np.zeros(5), 1.0)
        assert np.abs(x - 0.2).max() < 1e-6

    def test_duplicate_columns_split_equally(self, rng):
        col = rng.normal(size=6)
        A = np.column_stack([col, col])
        y = rng.normal(size=6)
        x, _, kkt, _ = kernels.qp_shrink_simplex(A.T @ A, A.T @ y,
                                                 np.zeros(2), 1.0)
        assert abs(x[0] - x[1]) < 1e-6
        assert kkt < 1e-8

    def test_active_lower_bound(self):
        H = np.array([[4.0, 0.1], [0.1, 1.0]])
        a = np.array([0.1, 2.0])
        x, _, kkt, _ = kernels.qp_shrink_simplex(H, a, np.full(2, 0.3), 1.0)
        assert x[0] == pytest.approx(0.3, abs=1e-12)
        assert x[0] + x[1] == pytest.approx(1.0, abs=1e-12)
        assert kkt < 1e-8

    def test_warm_start_agrees_with_cold(self, rng):
        for _ in range(20):
            H, a, k = random_instance(rng, k=5)
            cold, _, _, _ = kernels.qp_shrink_simplex(H, a, np.zeros(5), 1.0)
            warm, _, kkt, _ = kernels.qp_shrink_simplex(H, a, np.zeros(5), 1.0,
                                                        x0=cold)
            assert np.allclose(cold, warm, atol=1e-10)
            assert kkt < 1e-8


class TestColex:
    def test_order_and_roundtrip(self):
        got = [tuple(kernels.colex_unrank(i, 2, 4)) for i in range(6)]
        assert got == [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]
        for rank in range(math.comb(7, 3)):
            sub = tuple(kernels.colex_unrank(rank, 3, 7))
            assert kernels.colex_rank(sub) == rank

    def test_block_scan_covers_everything(self, rng):
        F = rng.normal(size=(8, 6))
        Y = rng.normal(size=8)
        G, gy = F.T @ F, F.T @ Y
        total = math.comb(6, 3)
        whole = kernels.best_subset_block(F, Y, G, gy, 0.3, 1 / 3, 0.0, 3,
                                          0, total)
        # Split into uneven blocks and reduce manually.
        parts = [(0, 7), (7, 11), (11, total)]
        best = None
        n = 0
        for lo, hi in parts:
            obj, sub, x, _, cnt = kernels.best_subset_block(
                F, Y, G, gy, 0.3, 1 / 3, 0.0, 3, lo, hi)
            key = tuple(sub)
            if best is None or (obj, key) < best[:2]:
                best = (obj, key, x)
            n += cnt
        assert n == total
        assert best[0] == whole[0] and best[1] == tuple(whole[1])


@needs_compiled
class TestTwinAgreement:
    """The NumPy fallback reproduces the compiled kernels bit for bit."""

    def test_qp_bitwise(self, rng):
        for _ in range(150):
            H, a, k = random_instance(
                rng, lam=float(rng.choice([0.0, 0.01, 1.0, 1e8])))
            r1 = _reference.qp_shrink_simplex(H, a, np.zeros(k), 1.0)
            r2 = _compiled.qp_shrink_simplex(H, a, np.zeros(k), 1.0)
            assert r1[0].tobytes() == r2[0].tobytes()
            assert r1[1] == r2[1] and r1[2] == r2[2] and r1[3] == r2[3]

    def test_enumeration_bitwise(self, rng):
        for _ in range(40):
            m = int(rng.integers(3, 10))
            c = int(rng.integers(1, m + 1))
            F = rng.normal(size=(10, m))
            Y = rng.normal(size=10)
            lam = float(rng.uniform(0, 2))
            args = (F, Y, F.T @ F, F.T @ Y, lam, 1 / c, 0.0, c,
                    0, math.comb(m, c))
            r1 = _reference.best_subset_block(*args)
            r2 = _compiled.best_subset_block(*args)
            assert r1[0] == r2[0]
            assert list(r1[1]) == list(r2[1])
            assert r1[2].tobytes() == r2[2].tobytes()
            assert r1[3] == r2[3] and r1[4] == r2[4]

    def test_backend_forcing(self, monkeypatch):
        assert kernels.get_backend("python").BACKEND == "python"
        assert kernels.get_backend("compiled").BACKEND == "compiled"
        with pytest.raises(ValueError):
            kernels.get_backend("fortran")
