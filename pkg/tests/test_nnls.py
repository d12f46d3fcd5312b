import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import nnls_oracle, threads
from xraynmf.nnls import (NnlsError, NnlsSettings, NnlsWorkspace, nnls_coordinate_cycle,
                          nnls_solve, residual_gram_row, residual_norms_sq)
from xraynmf.sparse import SparseMatrix, gram


def _cache(a):
    return gram(SparseMatrix.from_dense(a))


class TestSolve:
    def test_exact_conic_representation(self):
        C = _cache([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]])
        res = nnls_solve(C, [0, 1])
        np.testing.assert_allclose(res.B, [[1, 0, 1], [0, 1, 1]], atol=1e-12)
        assert abs(res.objective) <= 1e-12

    def test_active_constraint_against_oracle(self):
        a = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
        B_ref, obj_ref = nnls_oracle(a, [0, 1])
        # frozen from the enumeration oracle: target (0,1) -> (0, 0.5), residual 0.5
        np.testing.assert_allclose(B_ref[:, 2], [0.0, 0.5])
        assert obj_ref == pytest.approx(0.5)
        res = nnls_solve(_cache(a), [0, 1])
        np.testing.assert_allclose(res.B, B_ref, atol=1e-9)
        assert res.objective == pytest.approx(0.5, abs=1e-9)

    def test_warm_start_fixed_point(self):
        a = np.array([[1.0, 2.0, 0.5], [1.0, 2.0, 0.5]])
        C = _cache(a)
        exact = np.array([[1.0, 2.0, 0.5]])
        res = nnls_solve(C, [0], warm_start=exact)
        assert res.cycles == 1
        np.testing.assert_array_equal(res.B, exact)

    def test_objective_matches_direct_residual(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(9, 12))
        res = nnls_solve(_cache(a), [1, 4, 7], settings=NnlsSettings(maxcycles=3, polish=False))
        direct = np.linalg.norm(a - a[:, [1, 4, 7]] @ res.B) ** 2
        assert res.objective == pytest.approx(direct, rel=1e-10)

    def test_zero_anchor_column_rejected(self):
        C = _cache([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(NnlsError, match="column 1"):
            nnls_solve(C, [1])

    def test_duplicate_anchor_rejected(self, three_col):
        with pytest.raises(NnlsError, match="distinct"):
            nnls_solve(gram(three_col), [0, 0])

    def test_bad_warm_start(self, three_col):
        C = gram(three_col)
        with pytest.raises(NnlsError):
            nnls_solve(C, [0], warm_start=-np.ones((1, 3)))
        with pytest.raises(NnlsError):
            nnls_solve(C, [0], warm_start=np.full((1, 3), np.nan))
        with pytest.raises(NnlsError):
            nnls_solve(C, [0], warm_start=np.ones((2, 3)))

    def test_non_finite_data_rejected(self):
        C = _cache([[1.0, np.inf], [0.0, 1.0]])
        with pytest.raises(NnlsError, match="non-finite"):
            nnls_solve(C, [1])

    def test_settings_validation(self):
        with pytest.raises(ValueError):
            NnlsSettings(tol=0)
        with pytest.raises(ValueError):
            NnlsSettings(maxcycles=0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 12), st.integers(2, 15), st.integers(1, 4),
           st.integers(0, 2**31 - 1), st.booleans())
    def test_matches_exhaustive_oracle(self, m, n, r, seed, signed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(m, n)) if signed else rng.uniform(size=(m, n))
        r = min(r, n)
        anchors = list(rng.choice(n, size=r, replace=False))
        _, obj_ref = nnls_oracle(a, anchors)
        res = nnls_solve(_cache(a), anchors)
        assert abs(res.objective - obj_ref) <= 1e-6
        assert np.all(res.B >= 0)
        assert all(b <= a_ + 1e-12 * (1 + abs(a_)) for a_, b in zip(res.history, res.history[1:]))


class TestCycle:
    def test_single_anchor_closed_form(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(5, 6))
        C = gram(SparseMatrix.from_dense(a))
        ws = NnlsWorkspace.from_anchors(C, [3])
        nnls_coordinate_cycle(ws)
        x0 = a[:, 3]
        expected = np.maximum(x0 @ a, 0) / (x0 @ x0)
        np.testing.assert_allclose(ws.B[0], expected, rtol=1e-12)

    def test_no_change_leaves_U(self):
        a = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 3.0]])
        C = _cache(a)
        ws = NnlsWorkspace.from_anchors(C, [0, 1], warm_start=[[1, 0, 2], [0, 1, 3]])
        U0 = ws.U.copy()
        nnls_coordinate_cycle(ws)
        np.testing.assert_array_equal(ws.U, U0)

    def test_orthogonal_anchors_one_cycle(self):
        a = np.array([[2.0, 0.0, 1.0, -1.0], [0.0, 3.0, 2.0, 5.0], [0.0, 0.0, 1.0, 1.0]])
        C = _cache(a)
        ws = NnlsWorkspace.from_anchors(C, [0, 1])
        nnls_coordinate_cycle(ws)
        B_ref, _ = nnls_oracle(a, [0, 1])
        np.testing.assert_allclose(ws.B, B_ref, atol=1e-12)

    def test_u_drift_stays_small(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(size=(30, 40))
        ws = NnlsWorkspace.from_anchors(_cache(a), [0, 5, 9, 11, 20, 33])
        for _ in range(200):
            nnls_coordinate_cycle(ws)
        assert ws.u_drift() <= 1e-8
        assert np.all(ws.B >= 0)


class TestResiduals:
    def test_empty_anchor_set(self, three_col):
        C = gram(three_col)
        ws = NnlsWorkspace(C, 2)
        np.testing.assert_array_equal(residual_gram_row(ws, C, 2), C.to_dense()[2])
        np.testing.assert_array_equal(residual_norms_sq(ws, C), C.col_l2sq)

    def test_three_column_after_first_anchor(self, three_col):
        C = gram(three_col)
        ws = NnlsWorkspace.from_anchors(C, [0])
        ws.solve(NnlsSettings())
        np.testing.assert_allclose(ws.B, [[1, 0, 0.6]], atol=1e-15)
        Xd = three_col.to_dense()
        R = Xd - Xd[:, [0]] @ ws.B
        np.testing.assert_allclose(residual_gram_row(ws, C, 2), (R.T @ Xd)[2], atol=1e-15)
        np.testing.assert_allclose(residual_gram_row(ws, C, 2), [0, 0.4, 0.16], atol=1e-15)
        np.testing.assert_allclose(residual_norms_sq(ws, C), [0, 1, 0.16], atol=1e-15)

    def test_anchor_row_nonpositive_at_solution(self):
        rng = np.random.default_rng(11)
        a = rng.uniform(size=(8, 10))
        C = _cache(a)
        ws = NnlsWorkspace.from_anchors(C, [2, 6])
        ws.solve(NnlsSettings())
        R = a - a[:, [2, 6]] @ ws.B
        for i in (2, 6):
            row = residual_gram_row(ws, C, i)
            np.testing.assert_allclose(row, (R.T @ a)[i], atol=1e-10)
            assert np.all(row <= 1e-10)

    def test_exact_data_zero_residual(self):
        rng = np.random.default_rng(4)
        W = rng.uniform(size=(10, 3))
        a = np.hstack([W, W @ rng.uniform(size=(3, 7))])
        C = _cache(a)
        ws = NnlsWorkspace.from_anchors(C, [0, 1, 2])
        ws.solve(NnlsSettings())
        assert np.all(residual_norms_sq(ws, C) <= 1e-10 * C.frob_sq)


class TestInvariants:
    @pytest.fixture
    def solved(self):
        rng = np.random.default_rng(21)
        a = rng.normal(size=(12, 15))
        anchors = [0, 3, 7, 12]
        C = _cache(a)
        ws = NnlsWorkspace.from_anchors(C, anchors)
        ws.solve(NnlsSettings())
        R = a - a[:, anchors] @ ws.B
        return a, anchors, C, ws, R

    def test_anchor_gradient_nonpositive(self, solved):
        a, anchors, C, ws, R = solved
        G = R.T @ a[:, anchors]
        for k, anc in enumerate(anchors):
            assert G[:, k].max() <= 1e-6 * np.sqrt(C.frob_sq * C.col_l2sq[anc])

    def test_complementary_slackness(self, solved):
        a, anchors, C, ws, R = solved
        G = R.T @ a[:, anchors]
        assert np.abs(ws.B * G.T).max() <= 1e-6 * C.frob_sq

    def test_exterior_diagonal_matches_norm(self, solved):
        a, anchors, C, ws, R = solved
        res = residual_norms_sq(ws, C)
        for i in np.flatnonzero(res > 1e-10 * C.frob_sq):
            d = residual_gram_row(ws, C, i)[i]
            assert d > 0
            assert d == pytest.approx(res[i], rel=1e-8)

    def test_warm_start_consistency(self):
        rng = np.random.default_rng(8)
        a = rng.uniform(size=(10, 14))
        anchors = [1, 4, 9]
        prev = nnls_solve(_cache(a), anchors)
        b = a.copy()
        b[:, 4] *= 1.3
        b[0, 4] += 0.2
        cold = nnls_solve(_cache(b), anchors)
        warm = nnls_solve(_cache(b), anchors, warm_start=prev.B)
        assert warm.objective == pytest.approx(cold.objective, abs=1e-8)

    def test_thread_count_determinism(self):
        rng = np.random.default_rng(9)
        a = rng.uniform(size=(40, 300))
        C = _cache(a)
        outs = []
        for t in (1, 2, 8):
            with threads(t):
                outs.append(nnls_solve(C, [3, 50, 77, 120, 201]).B.tobytes())
        assert outs[0] == outs[1] == outs[2]
