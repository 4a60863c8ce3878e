import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slotalign import alignment as A
from slotalign.tensor import Tensor

from .oracles import plackett_luce_nll, plackett_luce_nll_bruteforce


def test_uniform_alignment_loss_is_J_log_R():
    J, R = 3, 4
    logp = A.alignment_log_distribution(Tensor(np.zeros((1, J, R, 2))), Tensor(np.zeros(2)), Tensor(np.zeros(1)))
    loss = A.alignment_loss(logp, np.array([[0, 2, 3]]))
    assert loss.data[0] == pytest.approx(J * math.log(4), abs=1e-12)


def test_alignment_distribution_respects_row_mask():
    D = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4, 5)))
    w, b = Tensor(np.ones(5)), Tensor(np.zeros(1))
    mask = np.array([[True, True, True, True], [True, True, False, False]])
    p = A.alignment_distribution(D, w, b, mask).data
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)
    assert np.all(p[1, :, 2:] == 0)


def test_alignment_label_out_of_range():
    logp = Tensor(np.log(np.full((1, 2, 3), 1 / 3)))
    with pytest.raises(ValueError, match="outside"):
        A.alignment_loss(logp, np.array([[0, 3]]))


def test_listmle_three_slots_by_hand():
    f = [2.0, 1.0, 0.0]
    expected = -math.log(math.exp(2) / (math.exp(2) + math.exp(1) + 1) * math.exp(1) / (math.exp(1) + 1))
    got = float(A.listmle_loss(Tensor(np.array(f)), [0, 1, 2]).data)
    assert got == pytest.approx(expected, abs=1e-12)


def test_listmle_equal_scores_is_log_factorial():
    J = 5
    got = float(A.listmle_loss(Tensor(np.zeros(J)), np.arange(J)[::-1]).data)
    assert got == pytest.approx(math.log(math.factorial(J)), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6).flatmap(lambda J: st.tuples(
    st.lists(st.floats(-5, 5), min_size=J, max_size=J), st.permutations(list(range(J))))))
def test_listmle_matches_bruteforce_plackett_luce(case):
    scores, order = case
    got = float(A.listmle_loss(Tensor(np.array(scores)), order).data)
    assert got == pytest.approx(plackett_luce_nll(scores, order), abs=1e-10)
    assert got == pytest.approx(plackett_luce_nll_bruteforce(scores, order), abs=1e-10)


def test_listmle_batched_matches_rows():
    rng = np.random.default_rng(3)
    scores = rng.normal(size=(4, 5))
    order = np.stack([rng.permutation(5) for _ in range(4)])
    batched = A.listmle_loss(Tensor(scores), order).data
    rows = [float(A.listmle_loss(Tensor(scores[i]), order[i]).data) for i in range(4)]
    np.testing.assert_allclose(batched, rows, atol=1e-12)


def test_listmle_rejects_non_permutation():
    with pytest.raises(ValueError, match="permutation"):
        A.listmle_loss(Tensor(np.zeros(3)), [0, 0, 2])


def test_alignment_flags_mark_previous_row():
    flags = A.alignment_flags(np.array([[0, -1, 2]]), 3)
    assert flags.tolist() == [[[1, 0, 0], [0, 0, 0], [0, 0, 1]]]
    with pytest.raises(ValueError):
        A.alignment_flags(np.array([[3]]), 3)


def test_ranking_scores_are_in_unit_interval():
    s = A.ranking_scores(Tensor(np.random.default_rng(0).normal(size=(2, 4, 3)) * 50), Tensor(np.ones(3)),
                         Tensor(np.zeros(1))).data
    assert s.shape == (2, 4) and np.all((s >= 0) & (s <= 1))


def test_turn_masks():
    m = A.turn_masks(np.array([[-1, 0, 0, 1, -1, 2]]), 3)
    assert m[0].astype(int).tolist() == [[0, 1, 1, 0, 0, 0], [0, 0, 0, 1, 0, 0], [0, 0, 0, 0, 0, 1]]
