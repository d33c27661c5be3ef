import itertools
import json

import numpy as np
import pytest

from entitrend.errors import DegenerateLabelsError
from entitrend.models.classifiers import (
    AdaBoostModel,
    MLPModel,
    Stump,
    TrainConfig,
    best_stump,
    init_params,
    loss_and_gradients,
    model_from_json,
    score,
    train_adaboost,
    train_mlp
)
from entitrend.models.features import FeatureMatrix


def make_matrix(features, labels):
    features = np.asarray(features, dtype=np.float64)
    entities = tuple(f"e{r:04d}" for r in range(features.shape[0]))
    names = tuple(f"F1@{j + 1}" for j in range(features.shape[1]))
    return FeatureMatrix(entities, features, names, np.asarray(labels, dtype=bool))


def noisy_problem(seed, n=400, d=4):
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n, d))
    logits = 2.0 * features[:, 0] - 1.5 * features[:, 1] + rng.normal(scale=0.7, size=n)
    return make_matrix(features, logits > 0.5)


def exhaustive_stump(features, y, w):
    """Enumerates every (feature, midpoint, polarity) in tie-break order."""
    best = None
    for j in range(features.shape[1]):
        values = np.unique(features[:, j])
        for threshold in (values[:-1] + values[1:]) / 2.0:
            for polarity in (1, -1):
                predictions = np.where(features[:, j] > threshold, polarity, -polarity)
                error = float(w[predictions != y].sum())
                if best is None or error < best[0]:
                    best = (error, j, float(threshold), polarity)
    return best


class TestStumpSearch:

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 21))
            d = int(rng.integers(1, 5))
            features = rng.integers(0, 5, size=(n, d)).astype(np.float64)
            y = np.where(rng.random(n) < 0.4, 1.0, -1.0)
            # Dyadic weights keep every partial sum exact
            w = rng.integers(1, 5, size=n) / 64.0
            expected = exhaustive_stump(features, y, w)
            stump, error = best_stump(features, y, w)
            if expected is None:
                assert stump is None
                continue
            assert (error, stump.feature_index, stump.threshold, stump.polarity) == expected

    def test_constant_columns(self):
        stump, error = best_stump(np.ones((5, 2)), np.array([1.0, -1, 1, -1, 1]), np.full(5, 0.2))
        assert stump is None
        assert error == np.inf

    def test_predict(self):
        stump = Stump(0, 0.5, -1)
        np.testing.assert_array_equal(stump.predict(np.array([[0.0], [1.0]])), [1.0, -1.0])


class TestAdaBoost:

    def test_first_round_is_best_stump(self):
        X = noisy_problem(1, n=60)
        model = train_adaboost(X, TrainConfig(adaboost_rounds=1))
        y = np.where(X.labels, 1.0, -1.0)
        expected, _ = best_stump(X.features, y, np.full(X.n_rows, 1.0 / X.n_rows))
        first = model.stumps[0]
        assert (first.feature_index, first.threshold, first.polarity) == (
            expected.feature_index, expected.threshold, expected.polarity)

    def test_loss_bound_decreases(self):
        X = noisy_problem(2)
        model = train_adaboost(X, TrainConfig(adaboost_rounds=50))
        meta = model.training_meta
        assert meta["rounds"] == len(model.stumps) == 50
        bounds = meta["loss_bounds"]
        assert all(b2 < b1 for b1, b2 in zip(bounds, bounds[1:]))
        for error, bound in zip(meta["training_errors"], bounds):
            assert error <= bound + 1e-12
        assert all(0 < e < 0.5 for e in meta["round_errors"])

    def test_training_error_improves_over_rounds(self):
        X = noisy_problem(3)
        model = train_adaboost(X, TrainConfig(adaboost_rounds=50))
        meta = model.training_meta
        y = np.where(X.labels, 1.0, -1.0)
        margin = np.zeros(X.n_rows)
        previous = 1.0
        for t, stump in enumerate(model.stumps):
            margin += stump.weight * stump.predict(X.features)
            exp_loss = float(np.mean(np.exp(-y * margin)))
            assert exp_loss <= previous
            assert exp_loss == pytest.approx(meta["loss_bounds"][t], rel=1e-9)
            assert meta["training_errors"][t] <= exp_loss
            previous = exp_loss
        assert meta["training_errors"][-1] <= meta["training_errors"][0]

    @pytest.mark.parametrize("transform", [np.exp, lambda v: v ** 3 + v])
    def test_monotone_transform_keeps_predictions(self, transform):
        X = noisy_problem(10, n=150)
        moved = FeatureMatrix(X.entities, transform(X.features), X.column_names, X.labels)
        cfg = TrainConfig(adaboost_rounds=20)
        original = train_adaboost(X, cfg)
        transformed = train_adaboost(moved, cfg)
        assert [(s.feature_index, s.polarity, s.weight) for s in original.stumps] == [
            (s.feature_index, s.polarity, s.weight) for s in transformed.stumps]
        np.testing.assert_array_equal(original.score(X), transformed.score(moved))

    def test_separable_data_stops_early(self):
        X = make_matrix([[0.0], [1.0], [2.0], [3.0]], [False, False, True, True])
        model = train_adaboost(X, TrainConfig(adaboost_rounds=50))
        assert len(model.stumps) == 1
        assert model.stumps[0].weight == 1.0
        assert model.stumps[0].threshold == 1.5
        np.testing.assert_array_equal(model.score(X), [-1.0, -1.0, 1.0, 1.0])

    def test_scores_rank_positives_higher(self):
        X = noisy_problem(4)
        scores = train_adaboost(X, TrainConfig()).score(X)
        assert scores[X.labels].mean() > scores[~X.labels].mean()

    def test_degenerate_labels(self):
        X = make_matrix([[0.0], [1.0]], [True, True])
        with pytest.raises(DegenerateLabelsError):
            train_adaboost(X, TrainConfig())

    def test_constant_features(self):
        X = make_matrix([[1.0], [1.0]], [True, False])
        with pytest.raises(ValueError):
            train_adaboost(X, TrainConfig())


class TestGradients:

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        Z = rng.normal(size=(5, 7))
        y = (rng.random(5) < 0.5).astype(np.float64)
        params = init_params(7, (128, 128), rng)
        _, grads = loss_and_gradients(params, Z, y)

        h = 1e-5
        for k, param in enumerate(params):
            # A sample of entries per tensor, always including the first one
            flat = param.reshape(-1)
            picks = {0} | set(rng.integers(flat.size, size=min(flat.size, 40)).tolist())
            for index in sorted(picks):
                original = flat[index]
                flat[index] = original + h
                plus, _ = loss_and_gradients(params, Z, y)
                flat[index] = original - h
                minus, _ = loss_and_gradients(params, Z, y)
                flat[index] = original
                numeric = (plus - minus) / (2 * h)
                analytic = grads[k].reshape(-1)[index]
                np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    def test_full_check_on_small_network(self):
        rng = np.random.default_rng(9)
        Z = rng.normal(size=(5, 3))
        y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        params = init_params(3, (6, 5), rng)
        for k in range(len(params)):
            params[k] = params[k] + rng.normal(scale=0.1, size=params[k].shape)
        _, grads = loss_and_gradients(params, Z, y)
        h = 1e-5
        for k, param in enumerate(params):
            numeric = np.zeros_like(param)
            for index in itertools.product(*(range(s) for s in param.shape)):
                original = param[index]
                param[index] = original + h
                plus, _ = loss_and_gradients(params, Z, y)
                param[index] = original - h
                minus, _ = loss_and_gradients(params, Z, y)
                param[index] = original
                numeric[index] = (plus - minus) / (2 * h)
            np.testing.assert_allclose(grads[k], numeric, rtol=1e-4, atol=1e-8)

    def test_loss_matches_cross_entropy(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(6, 2))
        y = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        params = init_params(2, (4,), rng)
        loss, _ = loss_and_gradients(params, Z, y)
        h = np.maximum(Z @ params[0] + params[1], 0.0)
        p = 1.0 / (1.0 + np.exp(-(h @ params[2] + params[3])[:, 0]))
        expected = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert loss == pytest.approx(expected, rel=1e-10)


class TestMLP:

    def test_learns_noisy_problem(self):
        X = noisy_problem(5)
        cfg = TrainConfig(hidden_sizes=(16, 16), batch_size=32, max_epochs=300, seed=1)
        model = train_mlp(X, cfg)
        scores = model.score(X)
        assert np.all((scores > 0) & (scores < 1))
        accuracy = np.mean((scores > 0.5) == X.labels)
        assert accuracy > 0.8
        losses = model.training_meta["losses"]
        assert losses[-1] < losses[0]

    def test_deterministic(self):
        X = noisy_problem(6, n=120)
        cfg = TrainConfig(hidden_sizes=(8,), max_epochs=20, seed=4)
        a = train_mlp(X, cfg)
        b = train_mlp(X, cfg)
        for p, q in zip(a.params, b.params):
            np.testing.assert_array_equal(p, q)

    def test_learns_xor(self):
        rng = np.random.default_rng(12)
        corners = rng.choice([-1.0, 1.0], size=(200, 2))
        features = corners + rng.normal(scale=0.15, size=(200, 2))
        X = make_matrix(features, corners[:, 0] * corners[:, 1] > 0)
        cfg = TrainConfig(batch_size=32, max_epochs=500, seed=0)
        scores = train_mlp(X, cfg).score(X)
        np.testing.assert_array_equal(scores > 0.5, X.labels)

    def test_constant_input_learns_class_rate(self):
        labels = np.arange(100) < 30
        X = make_matrix(np.full((100, 2), 7.0), labels)
        cfg = TrainConfig(
            hidden_sizes=(8, 8), batch_size=100, max_epochs=3000, adam_alpha=1e-2,
            convergence_rel_tol=1e-9)
        model = train_mlp(X, cfg)
        scores = model.score(X)
        assert np.ptp(scores) == 0.0
        assert scores[0] == pytest.approx(0.3, abs=0.02)

    def test_glorot_limits(self):
        params = init_params(15, (128, 128), np.random.default_rng(0))
        assert [p.shape for p in params] == [(15, 128), (128,), (128, 128), (128,), (128, 1), (1,)]
        assert np.abs(params[0]).max() <= np.sqrt(6.0 / (15 + 128))
        assert np.abs(params[2]).max() <= np.sqrt(6.0 / 256)
        assert not params[1].any()

    def test_degenerate_labels(self):
        X = make_matrix([[0.0], [1.0]], [False, False])
        with pytest.raises(DegenerateLabelsError):
            train_mlp(X, TrainConfig())


class TestModelContract:

    def test_layout_checked(self):
        X = noisy_problem(7, n=50)
        model = train_adaboost(X, TrainConfig(adaboost_rounds=3))
        other = FeatureMatrix(X.entities, X.features, tuple(f"F2@{j}" for j in range(2, 6)))
        with pytest.raises(ValueError):
            model.score(other)
        with pytest.raises(TypeError):
            score("model", X)

    def test_json_restores_scores(self):
        X = noisy_problem(8, n=80)
        cfg = TrainConfig(adaboost_rounds=5, hidden_sizes=(8,), max_epochs=5)
        for model in (train_adaboost(X, cfg), train_mlp(X, cfg)):
            document = json.loads(model.to_json())
            assert document["schema_version"] == 1
            restored = model_from_json(model.to_json())
            assert type(restored) is type(model)
            np.testing.assert_array_equal(restored.score(X), model.score(X))

    def test_same_seed_serializes_identically(self):
        X = noisy_problem(11, n=100)
        cfg = TrainConfig(adaboost_rounds=10, hidden_sizes=(8, 8), max_epochs=15, seed=9)
        for trainer in (train_adaboost, train_mlp):
            assert trainer(X, cfg).to_json() == trainer(X, cfg).to_json()

    def test_json_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            model_from_json(json.dumps({"schema_version": 1, "kind": "svm", "column_names": []}))
        with pytest.raises(ValueError):
            model_from_json(json.dumps({"schema_version": 2, "kind": "mlp", "column_names": []}))

    def test_invalid_models(self):
        with pytest.raises(ValueError):
            AdaBoostModel((Stump(3, 0.0, 1),), ("F1@1",))
        with pytest.raises(ValueError):
            MLPModel([np.array([[np.nan]]), np.zeros(1)], np.zeros(1), np.ones(1), ("F1@1",))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(adaboost_rounds=0)
        with pytest.raises(ValueError):
            TrainConfig(adam_beta1=1.0)
        with pytest.raises(ValueError):
            TrainConfig(hidden_sizes=())
