import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import threads
from xraynmf.detection import (ConeCoversData, NoCandidates, SelectionCriterion,
                               candidate_mask_score, candidate_mask_greedy, clamped_q_sums,
                               detect, greedy_select, pick_exterior, score_eq1)
from xraynmf.nnls import NnlsSettings, NnlsWorkspace, residual_gram_row, residual_norms_sq
from xraynmf.sparse import SparseMatrix, gram


def _dense_q(Xd, anchors, B):
    R = Xd - Xd[:, anchors] @ B if anchors else Xd
    return R.T @ Xd


class TestScoreEq1:
    def test_initial_state(self, three_col):
        C = gram(three_col)
        row = C.to_dense()[0]
        j, rep = score_eq1(row, C.col_l1, np.ones(3, dtype=bool))
        assert j == 0
        assert rep.score == pytest.approx(1.0)
        np.testing.assert_allclose(row / C.col_l1, [1, 0, 0.6])

    def test_after_first_anchor(self, three_col):
        C = gram(three_col)
        ws = NnlsWorkspace.from_anchors(C, [0])
        ws.solve(NnlsSettings())
        row = residual_gram_row(ws, C, 1)
        np.testing.assert_allclose(row, [0, 1, 0.4], atol=1e-15)
        j, _ = score_eq1(row, C.col_l1, candidate_mask_score(C.col_l1, [0]))
        assert j == 1

    def test_all_masked(self):
        with pytest.raises(NoCandidates, match="no exterior candidates"):
            score_eq1(np.ones(3), np.ones(3), np.zeros(3, dtype=bool))

    def test_ties_smallest_index(self):
        j, rep = score_eq1(np.array([1.0, 2.0, 2.0, 2.0 * (1 - 1e-14)]), np.ones(4),
                           np.ones(4, dtype=bool))
        assert j == 1
        assert rep.ties == [1, 2, 3]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 20), st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
    def test_scale_invariance(self, n, seed, c):
        rng = np.random.default_rng(seed)
        Ri = rng.normal(size=5)
        Xd = rng.uniform(0.1, 1.0, size=(5, n))
        k = int(rng.integers(n))
        mask = np.ones(n, dtype=bool)
        j0, rep0 = score_eq1(Ri @ Xd, Xd.sum(axis=0), mask)
        Xs = Xd.copy()
        Xs[:, k] *= c
        j1, rep1 = score_eq1(Ri @ Xs, Xs.sum(axis=0), mask)
        s0 = (Ri @ Xd)[k] / Xd[:, k].sum()
        s1 = (Ri @ Xs)[k] / Xs[:, k].sum()
        assert s1 == pytest.approx(s0, rel=1e-12, abs=1e-15)
        if abs(s0 - rep0.score) > 1e-9 * abs(rep0.score):
            assert j1 == j0

    def test_denominator_mask(self):
        mask = candidate_mask_score(np.array([1.0, 0.0, -2.0, 3.0]), [3])
        np.testing.assert_array_equal(mask, [True, False, False, False])


class TestPickExterior:
    def test_max(self):
        assert pick_exterior("max", np.array([0, 1, 0.16]), 2.52) == 1

    def test_cone_covers(self):
        with pytest.raises(ConeCoversData):
            pick_exterior("max", np.zeros(3), 2.52)

    def test_dist_initial(self, three_col):
        C = gram(three_col)
        ws = NnlsWorkspace(C, 2)
        Xd = three_col.to_dense()
        Q = np.maximum(_dense_q(Xd, [], None), 0)
        np.testing.assert_allclose((Q ** 2).sum(axis=1), [1.36, 1.16, 0.7904])
        got = clamped_q_sums(ws, C, np.ones(3, dtype=bool), by_row=True)
        np.testing.assert_allclose(got, [1.36, 1.16, 0.7904])
        i = pick_exterior("dist", C.col_l2sq, C.frob_sq,
                          q_row_norms=lambda m: clamped_q_sums(ws, C, m, True))
        assert i == 0

    def test_rand_reproducible_and_qualifying(self):
        res = np.array([0.0, 5.0, 0.0, 3.0, 1.0])
        picks = [pick_exterior("rand", res, 9.0, rng=np.random.default_rng(s)) for s in range(30)]
        again = [pick_exterior("rand", res, 9.0, rng=np.random.default_rng(s)) for s in range(30)]
        assert picks == again
        assert set(picks) == {1, 3, 4}


class TestGreedy:
    def test_initial_state_picks_interior(self, three_col):
        C = gram(three_col)
        ws = NnlsWorkspace(C, 2)
        mask = candidate_mask_greedy(C.col_l2sq, [])
        j, rep = greedy_select(ws, C, mask)
        Xd = three_col.to_dense()
        Q = np.maximum(_dense_q(Xd, [], None), 0)
        oracle = (Q ** 2).sum(axis=0) / (Xd ** 2).sum(axis=0)
        np.testing.assert_allclose(oracle, [1.36, 1.16, 1.52])
        assert j == 2
        assert rep.score == pytest.approx(1.52)

    def test_single_column(self):
        C = gram(SparseMatrix.from_dense([[2.0], [1.0]]))
        j, rep = greedy_select(NnlsWorkspace(C, 1), C, np.ones(1, dtype=bool))
        assert j == 0
        assert rep.score == pytest.approx(C.col_l2sq[0])

    def test_empty_candidates(self, three_col):
        C = gram(three_col)
        with pytest.raises(NoCandidates):
            greedy_select(NnlsWorkspace(C, 1), C, np.zeros(3, dtype=bool))

    @pytest.mark.parametrize("threshold", [0.0, 2.0])
    @pytest.mark.parametrize("signed", [False, True])
    def test_q_sums_match_dense_oracle(self, threshold, signed):
        rng = np.random.default_rng(12)
        a = rng.uniform(size=(30, 25))
        a[rng.uniform(size=a.shape) > 0.3] = 0
        if signed:
            a *= rng.choice([-1.0, 1.0], size=a.shape)
        X = SparseMatrix.from_dense(a)
        C = gram(X, dense_threshold=threshold)
        anchors = [i for i in (0, 3, 8) if C.col_l2sq[i] > 0]
        ws = NnlsWorkspace.from_anchors(C, anchors)
        ws.solve(NnlsSettings())
        Q = np.maximum(_dense_q(a, anchors, ws.B), 0)
        mask = np.ones(25, dtype=bool)
        np.testing.assert_allclose(clamped_q_sums(ws, C, mask, True), (Q ** 2).sum(axis=1),
                                   rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(clamped_q_sums(ws, C, mask, False), (Q ** 2).sum(axis=0),
                                   rtol=1e-9, atol=1e-12)


class TestDetect:
    @pytest.mark.parametrize("kind", ["rand", "max", "dist"])
    def test_exterior_criteria_pick_true_anchor(self, three_col, kind):
        C = gram(three_col)
        ws = NnlsWorkspace(C, 2)
        rep = detect(SelectionCriterion(kind, 0), ws, C, C.col_l2sq.copy(),
                     np.random.default_rng(0))
        assert rep.chosen in (0, 1)
        assert rep.exterior is not None

    def test_greedy_picks_interior(self, three_col):
        C = gram(three_col)
        rep = detect(SelectionCriterion("greedy"), NnlsWorkspace(C, 2), C, C.col_l2sq.copy())
        assert rep.chosen == 2 and rep.exterior is None

    def test_unknown_criterion(self):
        with pytest.raises(ValueError):
            SelectionCriterion("best")

    def test_thread_determinism(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(size=(50, 200))
        C = gram(SparseMatrix.from_dense(a))
        ws = NnlsWorkspace.from_anchors(C, [4, 17, 90])
        ws.solve(NnlsSettings())
        res = residual_norms_sq(ws, C)
        outs = []
        for t in (1, 2, 8):
            with threads(t):
                outs.append([detect(SelectionCriterion(k, 3), ws, C, res,
                                    np.random.default_rng(3)).chosen
                             for k in ("rand", "max", "dist", "greedy")]
                            + [clamped_q_sums(ws, C, np.ones(200, bool), False).tobytes()])
        assert outs[0] == outs[1] == outs[2]
