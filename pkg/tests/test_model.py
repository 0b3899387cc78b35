import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pgmarkov.errors import DimensionError, NumericError, ValidationError
from pgmarkov.model import (
    BehaviorSequence,
    CoefficientState,
    DesignLayout,
    ModelData,
    StateAlphabet,
    count_transitions,
    diurnal_covariates,
    individual_effects,
    linear_predictors,
    logistic,
    offset_c,
    segments_by_individual,
    split_at_gaps,
    standardize,
    transition_matrices,
    transition_row,
)

finite = st.floats(-30, 30, allow_nan=False)
psi_rows = hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(2, 6)), elements=finite)


def test_alphabet_reference_defaults_to_last():
    a = StateAlphabet.from_labels(["fly", "feed", "walk"])
    assert a.reference == "walk"
    assert a.destinations == (0, 1)
    b = StateAlphabet.from_labels(["fly", "feed", "walk"], "feed")
    assert b.reference_index == 1 and b.destinations == (0, 2)
    assert StateAlphabet.from_dict(b.to_dict()) == b


@pytest.mark.parametrize("labels,ref", [(["a"], None), (["a", "a"], None), (["a", "b"], "c")])
def test_alphabet_rejects_bad_input(labels, ref):
    with pytest.raises(ValueError):
        StateAlphabet.from_labels(labels, ref)


def test_split_at_gaps():
    ts = np.array([0, 360, 720, 1800, 2160, 2520, 2880, 10000.0])
    starts, lengths = split_at_gaps(ts, 360.0)
    np.testing.assert_array_equal(starts, [0, 3, 7])
    np.testing.assert_array_equal(lengths, [3, 4, 1])
    # spacing up to 1.5 steps is not a gap
    s, n = split_at_gaps(np.array([0, 360, 900.0]), 360.0)
    np.testing.assert_array_equal(n, [3])


def test_segments_respect_individual_boundaries():
    ind = np.array([0, 0, 0, 1, 1])
    ts = np.array([0, 360, 720, 1080, 1440.0])
    starts, lengths = segments_by_individual(ind, ts, 360.0)
    np.testing.assert_array_equal(starts, [0, 3])
    np.testing.assert_array_equal(lengths, [3, 2])


def test_behavior_sequence_needs_two_states():
    with pytest.raises(ValueError):
        BehaviorSequence("a", [1])
    assert BehaviorSequence("a", [0, 1, 1]).n_transitions == 2


def test_layout_blocks_and_names():
    lay = DesignLayout(("g1", "g2", "g3"), ("corn", "water"), ("temp",))
    assert lay.width == 2 + 2 + 1
    assert lay.column_names == ["ind[g1]", "ind[g2]", "hab[corn]", "hab[water]", "temp"]
    assert lay.column_blocks == ["individual"] * 2 + ["habitat"] * 2 + ["quantitative"]
    assert lay.column("corn") == 2 and lay.column("temp") == 4
    with pytest.raises(KeyError):
        lay.column("nope")


def test_sum_to_zero_coding():
    lay = DesignLayout(("a", "b", "c"), ("h",))
    codes = lay.individual_codes()
    np.testing.assert_array_equal(codes, [[1, 0], [0, 1], [-1, -1]])
    beta = np.array([0.3, -1.1, 0.5])
    alpha = individual_effects(beta, lay)
    assert alpha.sum() == pytest.approx(0.0, abs=1e-15)
    assert alpha[2] == -(alpha[0] + alpha[1])
    X = lay.design_matrix([0, 1, 2], [0, 0, 0])
    np.testing.assert_allclose(X[:, :2] @ beta[:2], alpha)


def test_layout_without_habitats():
    lay = DesignLayout(("a",), (), ("x",))
    assert lay.width == 1
    X = lay.design_matrix([0, 0], None, [[1.0], [2.0]])
    np.testing.assert_array_equal(X, [[1.0], [2.0]])


def test_linear_predictors_shape_and_reference_column():
    lay = DesignLayout(("a", "b"), ("h1", "h2"), ("x",))
    c = CoefficientState.zeros(3, lay.width)
    c.beta[0, 0] = [1, 2, 3, 4]
    x = lay.design_matrix([0, 1], [1, 0], [[0.5], [-1.0]])
    psi = linear_predictors(x, c, 0)
    assert psi.shape == (2, 3)
    np.testing.assert_allclose(psi[:, 0], [1 + 3 + 2, -1 + 2 - 4])
    np.testing.assert_array_equal(psi[:, 2], 0)
    with pytest.raises(DimensionError):
        linear_predictors(np.ones(3), c, 0)


@given(psi_rows, finite)
def test_softmax_shift_invariant_and_normalized(psi, shift):
    p = transition_row(psi)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=1e-12)
    np.testing.assert_allclose(transition_row(psi + shift), p, rtol=1e-9, atol=1e-300)
    assert np.all(p >= 0)


@given(psi_rows, st.data())
def test_offset_identity(psi, data):
    # P(j) = logistic(psi_j - C_j)
    j = data.draw(st.integers(0, psi.shape[1] - 1))
    p = transition_row(psi)[:, j]
    via_offset = logistic(psi[:, j] - offset_c(psi, j))
    np.testing.assert_allclose(via_offset, p, rtol=1e-9, atol=1e-300)


def test_softmax_stable_for_large_predictors():
    p = transition_row(np.array([1000.0, 999.0, -1000.0]))
    np.testing.assert_allclose(p, [1 / (1 + np.exp(-1)), np.exp(-1) / (1 + np.exp(-1)), 0.0])
    with pytest.raises(NumericError):
        transition_row(np.array([np.nan, 0.0]))


def test_transition_matrices_rows_stochastic():
    rng = np.random.default_rng(0)
    lay = DesignLayout(("a", "b"), ("h1", "h2"), ("x",))
    c = CoefficientState.zeros(3, lay.width)
    c.beta[:, :2] = rng.normal(size=(3, 2, lay.width))
    X = lay.design_matrix([0, 1, 1], [0, 1, 0], [[0.1], [2.0], [-1.0]])
    P = transition_matrices(X, c)
    assert P.shape == (3, 3, 3)
    np.testing.assert_allclose(P.sum(axis=2), 1.0)
    np.testing.assert_allclose(P[1, 2], transition_row(linear_predictors(X[1], c, 2)))


def test_diurnal_covariates():
    cos_t, sin_t = diurnal_covariates([43200.0, 0.0, 21600.0])
    np.testing.assert_allclose(cos_t, [-1.0, 1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(sin_t, [0.0, 0.0, 1.0], atol=1e-15)


def test_standardize():
    z, m, s = standardize(np.array([[1.0, 10.0], [3.0, 20.0], [5.0, 30.0]]))
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-15)
    np.testing.assert_allclose(z.std(axis=0), 1)
    np.testing.assert_allclose(m, [3, 20])
    with pytest.raises(ValidationError):
        standardize(np.array([2.0, 2.0, 2.0]))


def test_count_transitions():
    c = count_transitions(np.array([0, 0, 1, 2, 2, 2, 0]), 3)
    expected = np.zeros((3, 3), int)
    for a, b in [(0, 0), (0, 1), (1, 2), (2, 2), (2, 2), (2, 0)]:
        expected[a, b] += 1
    np.testing.assert_array_equal(c, expected)


def _data(labels, ts, ind):
    lay = DesignLayout(("a", "b"), ("h",))
    X = lay.design_matrix(ind, np.zeros(len(ind), int))
    s, n = segments_by_individual(np.asarray(ind), np.asarray(ts, float), 360.0)
    return ModelData(StateAlphabet(("x", "y")), lay, X, ind, ts, s, n, labels)


def test_transitions_stay_within_segments():
    d = _data(
        np.array([0, 1, 1, 0, 0, 1]),
        np.array([0, 360, 5000, 5360, 0, 360.0]),
        np.array([0, 0, 0, 0, 1, 1]),
    )
    src, dst = d.transition_index
    np.testing.assert_array_equal(src, [0, 2, 4])
    np.testing.assert_array_equal(dst, [1, 3, 5])
    seqs = d.sequences()
    assert [s.individual_id for s in seqs] == ["a", "a", "b"]


def test_model_data_validates_shapes():
    with pytest.raises(DimensionError):
        _data(np.array([0, 1]), np.array([0, 360.0]), np.array([0, 0, 0]))
    with pytest.raises(ValidationError):
        _data(np.array([0, 2]), np.array([0, 360.0]), np.array([0, 0]))


@settings(max_examples=30)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=50))
def test_counts_total_is_transitions(states):
    c = count_transitions(np.array(states), 4)
    assert c.sum() == len(states) - 1
