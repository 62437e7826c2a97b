from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import auc_pairwise, best_depth2_accuracy, best_split_bruteforce, gini_exact, multinomial_deviance

from edgeguard.dataset import LabeledTable
from edgeguard.ml.ensemble import ForestConfig, GbmConfig, deviance, softmax, train_forest, train_gbm
from edgeguard.ml.metrics import auc_one_vs_rest, confusion_matrix, evaluate, per_class_scores, summarize_confusion
from edgeguard.ml.modelio import (
    BadMagicError,
    ChecksumError,
    ModelFormatError,
    SchemaMismatchError,
    TruncatedModelError,
    VersionMismatchError,
    deserialize_model,
    serialize_model,
)
from edgeguard.ml.selection import feature_importance, select_features, selected_features
from edgeguard.ml.tree import LEAF, CartConfig, best_split, gini, leaf_tree, predict_label, train_cart
from edgeguard.schema import ClassLabel

small_int_matrix = st.integers(2, 12).flatmap(
    lambda n: st.tuples(
        st.lists(st.lists(st.integers(0, 4), min_size=3, max_size=3), min_size=n, max_size=n),
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
    )
)


# gini

def test_gini_examples():
    assert gini([10, 0, 0, 0, 0, 0]) == 0.0
    assert gini([5, 5, 0, 0, 0, 0]) == 0.5
    assert gini([2, 1, 1, 0, 0, 0]) == pytest.approx(float(gini_exact([2, 1, 1])), abs=1e-15)
    assert gini([2, 1, 1, 0, 0, 0]) == pytest.approx(0.625)


def test_gini_rejects_empty_and_negative():
    with pytest.raises(ValueError):
        gini([0] * 6)
    with pytest.raises(ValueError):
        gini([1, -1, 0, 0, 0, 0])


@given(st.lists(st.integers(0, 1000), min_size=6, max_size=6).filter(lambda c: sum(c) > 0))
def test_gini_bounds(counts):
    g = gini(counts)
    k = sum(1 for c in counts if c > 0)
    assert -1e-12 <= g <= 1 - 1 / k + 1e-12
    assert (abs(g) < 1e-12) == (k == 1)
    assert g == pytest.approx(float(gini_exact(counts)), abs=1e-12)


# best_split

def test_best_split_one_dimensional_example():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    s = best_split(X, y)
    oracle = best_split_bruteforce([[1], [2], [3], [4]], [0, 0, 1, 1])
    assert (s.feature, s.threshold) == (oracle[0], oracle[1]) == (0, 2.5)
    assert s.impurity_decrease == pytest.approx(float(oracle[2])) == 0.5


def test_best_split_none_cases():
    assert best_split(np.array([[1.0], [2.0]]), np.array([3, 3])) is None
    assert best_split(np.array([[7.0], [7.0], [7.0]]), np.array([0, 1, 2])) is None
    assert best_split(np.array([[1.0]]), np.array([0])) is None


@settings(max_examples=300, deadline=None)
@given(small_int_matrix)
def test_best_split_matches_bruteforce(data):
    X, y = data
    oracle = best_split_bruteforce(X, y)
    got = best_split(np.array(X, dtype=float), np.array(y))
    if oracle is None:
        assert got is None
        return
    assert got is not None
    assert (got.feature, got.threshold) == (oracle[0], float(oracle[1]))
    assert got.impurity_decrease == pytest.approx(float(oracle[2]), abs=1e-12)


def test_best_split_respects_candidates():
    X = np.array([[0, 1], [0, 2], [1, 3], [1, 4]], dtype=float)
    y = np.array([0, 0, 1, 1])
    assert best_split(X, y).feature == 0
    assert best_split(X, y, candidate_features=[1]).feature == 1


# CART

def test_xor_is_learned_at_depth_two():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    y = np.array([0, 1, 1, 0])
    assert best_depth2_accuracy(X.tolist(), y.tolist()) == 1
    tree = train_cart(X, y)
    assert np.array_equal(tree.predict(X), y)
    assert tree.depth() <= 2


def test_single_class_gives_one_leaf():
    tree = train_cart(np.random.default_rng(0).random((10, 3)), np.full(10, 4))
    assert tree.node_count == 1
    assert tree.predict(np.zeros((1, 3)))[0] == 4


binary_tables = st.integers(1, 8).flatmap(
    lambda n: st.tuples(
        st.lists(st.lists(st.integers(0, 1), min_size=2, max_size=2), min_size=n, max_size=n),
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
    )
)


@settings(max_examples=400, deadline=None)
@given(binary_tables)
def test_cart_reaches_best_depth_two_accuracy(data):
    X, y = data
    tree = train_cart(np.array(X, dtype=float), np.array(y))
    acc = Fraction(int((tree.predict(np.array(X, dtype=float)) == np.array(y)).sum()), len(y))
    assert acc == best_depth2_accuracy(X, y)


@settings(max_examples=60, deadline=None)
@given(small_int_matrix)
def test_tree_structure_and_probabilities(data):
    X, y = np.array(data[0], dtype=float), np.array(data[1])
    tree = train_cart(X, y)
    internal = tree.feature != LEAF
    assert (tree.feature[internal] < X.shape[1]).all()
    # Preorder ids: children always come after their parent, so no cycles.
    assert (tree.left[internal] > np.flatnonzero(internal)).all()
    assert (tree.right[internal] > np.flatnonzero(internal)).all()
    proba = tree.predict_proba(X)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
    leaves = tree.apply(X)
    for i, leaf in enumerate(leaves):
        counts = tree.counts[leaf]
        assert tree.predict(X[i : i + 1])[0] == int(np.argmax(counts))


def test_threshold_routes_equal_value_left():
    X = np.array([[1.0], [3.0]])
    tree = train_cart(X, np.array([0, 1]))
    assert tree.threshold[0] == 2.0
    assert tree.predict(np.array([[2.0]]))[0] == 0
    assert tree.predict(np.array([[2.0000001]]))[0] == 1


def test_unbounded_cart_memorizes_distinct_rows(corpus_split, trained_dt):
    train, _ = corpus_split
    X = trained_dt.encoders.transform(train.rows)
    y = train.label_array()
    # Rows with identical features but different labels cannot be memorized.
    seen = {}
    for row, lab in zip(map(tuple, X), y):
        seen.setdefault(row, set()).add(lab)
    unique = np.array([len(seen[tuple(r)]) == 1 for r in X])
    assert np.array_equal(trained_dt.predict(X[unique]), y[unique])


def test_max_depth_limits_growth():
    rng = np.random.default_rng(3)
    X, y = rng.random((200, 4)), rng.integers(0, 6, 200)
    assert train_cart(X, y, CartConfig(max_depth=3)).depth() <= 3


def test_cart_errors():
    with pytest.raises(ValueError):
        train_cart(np.zeros((0, 2)), np.zeros(0))
    tree = train_cart(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0, 1]))
    with pytest.raises(ValueError):
        tree.predict(np.zeros((1, 3)))


def test_leaf_prediction_example():
    label, proba = predict_label(leaf_tree([0, 7, 0, 0, 0, 0]), [0.0])
    assert label is ClassLabel.MALFORMED
    assert proba.tolist() == [0, 1, 0, 0, 0, 0]


def test_argmax_ties_go_to_lowest_class():
    label, _ = predict_label(leaf_tree([0, 0, 3, 3, 0, 0]), [0.0])
    assert label is ClassLabel.DOS


# forest

@settings(max_examples=40, deadline=None)
@given(small_int_matrix, st.integers(0, 2**31))
def test_degenerate_forest_equals_cart(data, seed):
    X, y = np.array(data[0], dtype=float), np.array(data[1])
    cart = train_cart(X, y)
    forest = train_forest(X, y, ForestConfig(n_estimators=1, bootstrap=False, max_features=None, seed=seed))
    probe = np.random.default_rng(seed).integers(-1, 6, (50, X.shape[1])).astype(float)
    for Z in (X, probe):
        assert np.array_equal(forest.predict_proba(Z), cart.predict_proba(Z))


def test_forest_is_deterministic_and_schedule_independent():
    rng = np.random.default_rng(0)
    X, y = rng.random((300, 6)), rng.integers(0, 6, 300)
    a = train_forest(X, y, ForestConfig(n_estimators=8, seed=5))
    b = train_forest(X, y, ForestConfig(n_estimators=8, seed=5, n_jobs=4))
    assert serialize_model(a) == serialize_model(b)
    c = train_forest(X, y, ForestConfig(n_estimators=8, seed=6))
    assert serialize_model(a) != serialize_model(c)


def test_forest_averages_tree_probabilities():
    rng = np.random.default_rng(1)
    X, y = rng.random((120, 3)), rng.integers(0, 6, 120)
    forest = train_forest(X, y, ForestConfig(n_estimators=5, seed=2))
    expected = np.mean([t.predict_proba(X) for t in forest.trees], axis=0)
    assert np.allclose(forest.predict_proba(X), expected)
    assert np.array_equal(forest.predict(X), np.argmax(expected, axis=1))
    with pytest.raises(ValueError):
        train_forest(X, y, ForestConfig(n_estimators=0))


# boosting

def test_gbm_deviance_is_non_increasing():
    rng = np.random.default_rng(4)
    X = rng.random((400, 5))
    y = (X[:, 0] * 3).astype(int) + (X[:, 1] > 0.5) * 3
    model = train_gbm(X, y, GbmConfig(n_estimators=20))
    recomputed = [multinomial_deviance(y.tolist(), model.predict_proba(X, n_stages=k).tolist()) for k in range(21)]
    assert np.allclose(recomputed, model.meta["train_deviance"], rtol=1e-9)
    assert all(b <= a + 1e-12 for a, b in zip(recomputed, recomputed[1:]))


def test_gbm_zero_stages_gives_priors():
    y = np.array([0, 0, 0, 1, 2, 2, 5, 5])
    X = np.arange(8, dtype=float)[:, None]
    model = train_gbm(X, y, GbmConfig(n_estimators=3))
    prior = np.bincount(y, minlength=6) / len(y)
    assert np.allclose(model.predict_proba(X, n_stages=0), prior, atol=1e-9)


def test_gbm_cap_and_normalization():
    rng = np.random.default_rng(0)
    X, y = rng.random((50, 2)), rng.integers(0, 6, 50)
    with pytest.raises(ValueError):
        train_gbm(X, y, GbmConfig(n_estimators=21))
    with pytest.raises(ValueError):
        train_gbm(X, y, GbmConfig(n_estimators=0))
    model = train_gbm(X, y, GbmConfig(n_estimators=4))
    assert np.allclose(model.predict_proba(rng.random((100, 2))).sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(softmax(np.array([[1000.0, 0, 0, 0, 0, -1000.0]])).sum(), 1.0)
    assert deviance(y, model.predict_proba(X)) == pytest.approx(
        multinomial_deviance(y.tolist(), model.predict_proba(X).tolist())
    )


# metrics

def test_confusion_two_class_example():
    cm = np.zeros((6, 6), dtype=int)
    cm[0, 0], cm[0, 1], cm[1, 1] = 2, 1, 3
    s = summarize_confusion(cm)
    pc = per_class_scores(cm)
    assert s["accuracy"] == pytest.approx(5 / 6)
    assert pc.precision[0] == 1.0
    assert pc.recall[0] == pytest.approx(2 / 3)
    assert pc.support.tolist()[:2] == [3, 3]


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=200))
def test_confusion_invariants(pairs):
    y_true, y_pred = zip(*pairs)
    cm = confusion_matrix(y_true, y_pred)
    assert cm.sum(axis=1).tolist() == np.bincount(y_true, minlength=6).tolist()
    assert summarize_confusion(cm)["accuracy"] == pytest.approx(np.trace(cm) / len(pairs))


@settings(max_examples=200)
@given(
    st.lists(st.tuples(st.integers(0, 2), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9, 1.0])), min_size=1, max_size=60),
    st.integers(0, 2),
)
def test_auc_matches_pairwise_definition(pairs, positive):
    labels, scores = zip(*pairs)
    expected = auc_pairwise(labels, scores, positive)
    got = auc_one_vs_rest(labels, scores, positive)
    if expected is None:
        assert got is None
    else:
        assert got == pytest.approx(expected, abs=1e-12)


def test_perfect_predictions_on_one_per_class():
    X = np.arange(6, dtype=float)[:, None]
    y = np.arange(6)
    m = evaluate(train_cart(X, y), X, y, timing_sample=6)
    assert m.accuracy == 1.0
    assert all(v == 1.0 for v in m.auc.values())
    assert m.model_size > 0 and m.prediction_time_per_packet > 0


def test_absent_class_auc_is_undefined():
    X = np.arange(4, dtype=float)[:, None]
    y = np.array([0, 0, 1, 1])
    m = evaluate(train_cart(X, y), X, y)
    assert m.auc[ClassLabel.FLOOD] is None
    assert m.auc[ClassLabel.LEGITIMATE] == 1.0


# importance and selection

def test_single_split_importance_is_one_hot():
    X = np.zeros((6, 5))
    X[3:, 3] = 1.0
    X[:, 1] = 9.0
    y = np.array([0, 0, 0, 2, 2, 2])
    tree = train_cart(X, y)
    assert feature_importance(tree).tolist() == [0, 0, 0, 1.0, 0]


def test_importance_sums_to_one_and_skips_constants(trained_dt, corpus_split):
    imp = feature_importance(trained_dt)
    assert imp.sum() == pytest.approx(1.0)
    train, _ = corpus_split
    X = trained_dt.encoders.transform(train.rows)
    constant = np.flatnonzero(X.min(axis=0) == X.max(axis=0))
    assert constant.size > 0
    assert (imp[constant] == 0).all()


def test_forest_and_gbm_importances():
    rng = np.random.default_rng(2)
    X = rng.random((200, 4))
    X[:, 2] = 1.0
    y = (X[:, 0] > 0.5).astype(int)
    for model in (train_forest(X, y, ForestConfig(n_estimators=4)), train_gbm(X, y, GbmConfig(n_estimators=3))):
        imp = model.feature_importances()
        assert imp.sum() == pytest.approx(1.0)
        assert imp[2] == 0.0
        assert imp[0] == imp.max()


def test_selection_keeps_order_and_is_idempotent(trained_dt, corpus_split):
    train, _ = corpus_split
    reduced = select_features(trained_dt, train)
    assert list(reduced.schema) == [c for c in train.schema if c in set(selected_features(trained_dt))]
    assert len(reduced.schema) < len(train.schema)
    again = select_features(trained_dt, reduced)
    assert again.schema == reduced.schema
    assert again.rows == reduced.rows


def test_one_nonzero_importance_gives_one_column():
    X = np.zeros((4, 33))
    X[2:, 5] = 1.0
    names = [f"c{i}" for i in range(33)]
    tree = train_cart(X, np.array([0, 0, 1, 1]), feature_names=names)
    table = LabeledTable([tuple(str(v) for v in r) for r in X], [ClassLabel(0)] * 2 + [ClassLabel(1)] * 2, tuple(names))
    assert select_features(tree, table).schema == ("c5",)


# serialization

def _models():
    rng = np.random.default_rng(9)
    X, y = rng.normal(size=(300, 7)), rng.integers(0, 6, 300)
    return [
        train_cart(X, y),
        train_forest(X, y, ForestConfig(n_estimators=5, seed=1)),
        train_gbm(X, y, GbmConfig(n_estimators=5)),
    ]


@pytest.mark.parametrize("model", _models(), ids=["tree", "forest", "gbm"])
def test_round_trip_predicts_identically(model):
    data = serialize_model(model)
    assert data[:4] == b"MQBM"
    back = deserialize_model(data)
    assert serialize_model(back) == data
    probe = np.random.default_rng(1).normal(size=(1000, 7)) * 2
    assert np.array_equal(back.predict_proba(probe), model.predict_proba(probe))


def test_round_trip_with_encoders(trained_dt, corpus_split):
    _, test = corpus_split
    back = deserialize_model(serialize_model(trained_dt))
    assert back.encoders.codes == trained_dt.encoders.codes
    X1 = trained_dt.encoders.transform(test.rows)
    X2 = back.encoders.transform(test.rows)
    assert np.array_equal(back.predict(X2), trained_dt.predict(X1))


def test_single_leaf_byte_identical():
    data = serialize_model(leaf_tree([1, 2, 3, 4, 5, 6]))
    assert serialize_model(deserialize_model(data)) == data


def test_every_byte_flip_is_detected():
    data = serialize_model(_models()[0])
    for i in range(len(data)):
        mutated = bytearray(data)
        mutated[i] ^= 0x5A
        with pytest.raises(ModelFormatError):
            deserialize_model(bytes(mutated))


def test_distinct_error_classes():
    data = serialize_model(leaf_tree([1, 0, 0, 0, 0, 0]))
    with pytest.raises(BadMagicError):
        deserialize_model(b"XXXX" + data[4:])
    with pytest.raises(VersionMismatchError):
        deserialize_model(data[:4] + bytes([99]) + data[5:])
    with pytest.raises(TruncatedModelError):
        deserialize_model(data[: len(data) // 2])
    with pytest.raises(ChecksumError):
        deserialize_model(data[:-1] + bytes([data[-1] ^ 1]))
    with pytest.raises(SchemaMismatchError):
        deserialize_model(data, expected_schema_hash=b"\x00" * 32)
    classes = {BadMagicError, VersionMismatchError, TruncatedModelError, ChecksumError, SchemaMismatchError}
    assert len(classes) == 5 and all(issubclass(c, ModelFormatError) for c in classes)
