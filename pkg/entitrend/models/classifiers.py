from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from entitrend.errors import DegenerateLabelsError, TrainingDivergedError
from entitrend.models.features import FeatureMatrix, apply_zscore, zscore_statistics

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by both classifiers."""
    adaboost_rounds: int = 50
    adam_alpha: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    convergence_rel_tol: float = 1e-5
    max_epochs: int = 500
    hidden_sizes: tuple[int, ...] = (128, 128)
    seed: int = 0

    def __post_init__(self) -> None:
        integers = {
            "adaboost_rounds": self.adaboost_rounds,
            "batch_size": self.batch_size, "max_epochs": self.max_epochs
        }
        for key in integers:
            value = integers.get(key)
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"'{key}' must be a positive integer: {repr(value)}")
        reals = {
            "adam_alpha": self.adam_alpha, "adam_eps": self.adam_eps,
            "convergence_rel_tol": self.convergence_rel_tol
        }
        for key in reals:
            value = reals.get(key)
            if not isinstance(value, (int, float)) or value <= 0:
                raise ValueError(f"'{key}' must be greater than zero: {repr(value)}")
        betas = {"adam_beta1": self.adam_beta1, "adam_beta2": self.adam_beta2}
        for key in betas:
            value = betas.get(key)
            if not 0 < value < 1:
                raise ValueError(f"'{key}' must be within (0, 1): {repr(value)}")
        hidden = tuple(self.hidden_sizes)
        if not hidden or any(not isinstance(h, int) or h <= 0 for h in hidden):
            raise ValueError(
                "'hidden_sizes' must be positive integers: "
                f"{repr(self.hidden_sizes)}")
        if not isinstance(self.seed, int):
            raise TypeError(f"'seed' must be an integer: {repr(self.seed)}")
        object.__setattr__(self, "hidden_sizes", hidden)


def _check_training_matrix(X: FeatureMatrix) -> np.ndarray:
    if not isinstance(X, FeatureMatrix):
        raise TypeError(f"'X' must be an instance of FeatureMatrix: {repr(X)}")
    if X.labels is None:
        raise ValueError("'X' must carry labels for training")
    positives = int(X.labels.sum())
    if positives == 0 or positives == X.n_rows:
        raise DegenerateLabelsError(
            f"Training labels must contain both classes: {positives} positive "
            f"out of {X.n_rows}")
    return X.labels.astype(bool)


class BaseModel:
    """Defines the base class of every trending classifier.

    A model turns a feature matrix into one real-valued score per entity,
    where a higher score means the entity is more likely to trend. Subclasses
    override ``decision`` and the serialization hooks.

    """
    kind = "base"

    def __init__(self, column_names: tuple[str, ...]) -> None:
        self.column_names = tuple(column_names)
        self.name = "Base"

    def decision(self, features: np.ndarray) -> np.ndarray:
        """Returns raw scores for a dense feature array."""
        raise NotImplementedError

    def score(self, X: FeatureMatrix) -> np.ndarray:
        """Scores every row of ``X``; its columns must match training."""
        if not isinstance(X, FeatureMatrix):
            raise TypeError(f"'X' must be an instance of FeatureMatrix: {repr(X)}")
        if X.column_names != self.column_names:
            raise ValueError(
                "Column layout differs from the training layout: "
                f"{repr(X.column_names)}")
        return self.decision(X.features)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        """Serializes this model as a JSON document."""
        return json.dumps(self.to_dict(), sort_keys=True)


# ---------------------------------------------------------------------------
# AdaBoost over decision stumps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Stump:
    """A depth-1 tree: ``polarity`` above ``threshold``, ``-polarity`` below."""
    feature_index: int
    threshold: float
    polarity: int
    weight: float = 1.0

    def predict(self, features: np.ndarray) -> np.ndarray:
        above = features[:, self.feature_index] > self.threshold
        return np.where(above, self.polarity, -self.polarity).astype(np.float64)


def _sorted_columns(features: np.ndarray) -> list[np.ndarray]:
    return [
        np.argsort(features[:, j], kind="stable")
        for j in range(features.shape[1])
    ]


def best_stump(features: np.ndarray, y: np.ndarray, w: np.ndarray,
               orders: list[np.ndarray] | None = None
               ) -> tuple[Stump | None, float]:
    """Finds the stump with the least weighted error.

    Every feature is scanned at the midpoints between its consecutive
    distinct sorted values, with both polarities. Ties prefer the lower
    feature index, then the lower threshold, then polarity +1. ``y`` holds
    labels in {-1, +1}. Returns ``(None, inf)`` when every column is
    constant.

    """
    if orders is None:
        orders = _sorted_columns(features)

    best: Stump | None = None
    best_error = math.inf
    for j, order in enumerate(orders):
        xs = features[order, j]
        ys = y[order]
        ws = w[order]
        cut = np.nonzero(np.diff(xs) > 0)[0]
        if cut.size == 0:
            continue
        cum_pos = np.cumsum(np.where(ys > 0, ws, 0.0))
        cum_neg = np.cumsum(np.where(ys > 0, 0.0, ws))
        total_pos, total_neg = cum_pos[-1], cum_neg[-1]
        thresholds = (xs[cut] + xs[cut + 1]) / 2.0

        # Polarity +1 predicts -1 on the left side of the threshold
        err_plus = cum_pos[cut] + (total_neg - cum_neg[cut])
        err_minus = cum_neg[cut] + (total_pos - cum_pos[cut])

        for errors, polarity in ((err_plus, 1), (err_minus, -1)):
            k = int(np.argmin(errors))
            error, threshold = float(errors[k]), float(thresholds[k])
            if best is None or error < best_error:
                best, best_error = Stump(j, threshold, polarity), error
            elif (best.feature_index == j and error == best_error
                  and threshold < best.threshold):
                best = Stump(j, threshold, polarity)
    return best, best_error


class AdaBoostModel(BaseModel):
    """Defines a discrete AdaBoost ensemble of decision stumps.

    The score of a row is the signed margin ``sum_t alpha_t * h_t(x)``.
    ``training_meta`` records, per round, the weighted error of the chosen
    stump, the 0/1 training error of the ensemble and the exponential-loss
    bound ``prod_t Z_t`` on that error.

    """
    kind = "adaboost"

    def __init__(self, stumps: tuple[Stump, ...], column_names: tuple[str, ...],
                 training_meta: dict | None = None) -> None:
        super().__init__(column_names)
        self.name = "AdaBoost"
        for stump in stumps:
            if not math.isfinite(stump.weight):
                raise ValueError(f"Stump weights must be finite: {repr(stump)}")
            if not 0 <= stump.feature_index < len(self.column_names):
                raise ValueError(
                    f"Stump feature index out of range: {repr(stump)}")
        self.stumps = tuple(stumps)
        self.training_meta = training_meta or {}

    def decision(self, features: np.ndarray) -> np.ndarray:
        margin = np.zeros(features.shape[0], dtype=np.float64)
        for stump in self.stumps:
            margin += stump.weight * stump.predict(features)
        return margin

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "column_names": list(self.column_names),
            "stumps": [
                {
                    "feature_index": s.feature_index, "threshold": s.threshold,
                    "polarity": s.polarity, "weight": s.weight
                }
                for s in self.stumps
            ],
            "training_meta": self.training_meta,
        }


def train_adaboost(X: FeatureMatrix, cfg: TrainConfig) -> AdaBoostModel:
    """Trains discrete AdaBoost with exhaustive stump search.

    Training stops early when the best stump's weighted error reaches 0.5
    (that stump is discarded) or 0 (that stump is kept with weight 1).

    """
    labels = _check_training_matrix(X)
    features = X.features
    y = np.where(labels, 1.0, -1.0)
    n = X.n_rows
    w = np.full(n, 1.0 / n)
    orders = _sorted_columns(features)

    stumps: list[Stump] = []
    round_errors: list[float] = []
    training_errors: list[float] = []
    loss_bounds: list[float] = []
    margin = np.zeros(n)
    bound = 1.0

    for t in range(1, cfg.adaboost_rounds + 1):
        stump, err = best_stump(features, y, w, orders)
        if stump is None:
            if t == 1:
                raise ValueError("Every feature column is constant")
            break
        if err >= 0.5:
            logger.warning("AdaBoost stopped at round %d: error %.6f", t, err)
            break

        predictions = stump.predict(features)
        if err <= 1e-12:
            stump = Stump(stump.feature_index, stump.threshold, stump.polarity, 1.0)
            stumps.append(stump)
            margin += predictions
            round_errors.append(0.0)
            training_errors.append(float(np.mean(np.sign(margin) != y)))
            loss_bounds.append(0.0)
            logger.debug("AdaBoost separated the data at round %d", t)
            break

        alpha = 0.5 * math.log((1.0 - err) / err)
        stumps.append(
            Stump(stump.feature_index, stump.threshold, stump.polarity, alpha))
        margin += alpha * predictions

        w = w * np.exp(-alpha * y * predictions)
        normalizer = w.sum()
        w /= normalizer
        bound *= normalizer

        round_errors.append(float(err))
        training_errors.append(float(np.mean(np.sign(margin) != y)))
        loss_bounds.append(float(bound))
        logger.debug(
            "AdaBoost round %d: feature %d, error %.6f, alpha %.6f",
            t, stump.feature_index, err, alpha)

    meta = {
        "rounds": len(stumps),
        "round_errors": round_errors,
        "training_errors": training_errors,
        "loss_bounds": loss_bounds,
    }
    return AdaBoostModel(tuple(stumps), X.column_names, meta)


# ---------------------------------------------------------------------------
# Feed-forward network
# ---------------------------------------------------------------------------


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def glorot_uniform(fan_in: int, fan_out: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Draws a weight matrix from the Glorot uniform distribution."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(n_inputs: int, hidden_sizes: tuple[int, ...],
                rng: np.random.Generator) -> list[np.ndarray]:
    """Returns ``[W1, b1, ..., W_out, b_out]`` with zero biases."""
    sizes = [n_inputs, *hidden_sizes, 1]
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append(glorot_uniform(fan_in, fan_out, rng))
        params.append(np.zeros(fan_out))
    return params


def forward(params: list[np.ndarray], Z: np.ndarray) -> np.ndarray:
    """Returns the output logits of the network."""
    h = Z
    for k in range(0, len(params) - 2, 2):
        h = np.maximum(h @ params[k] + params[k + 1], 0.0)
    return (h @ params[-2] + params[-1])[:, 0]


def loss_and_gradients(params: list[np.ndarray], Z: np.ndarray,
                       y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Returns the mean binary cross-entropy and its gradients.

    The loss is computed from logits as ``softplus(z) - y*z``, which equals
    the cross-entropy of the logistic output without evaluating it.

    """
    activations = [Z]
    pre_activations = []
    h = Z
    for k in range(0, len(params) - 2, 2):
        pre = h @ params[k] + params[k + 1]
        pre_activations.append(pre)
        h = np.maximum(pre, 0.0)
        activations.append(h)
    logits = (h @ params[-2] + params[-1])[:, 0]

    n = Z.shape[0]
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))

    grads: list[np.ndarray] = [np.empty(0)] * len(params)
    delta = ((_sigmoid(logits) - y) / n)[:, None]
    grads[-2] = activations[-1].T @ delta
    grads[-1] = delta.sum(axis=0)
    upstream = delta @ params[-2].T
    for layer in range(len(pre_activations) - 1, -1, -1):
        delta = upstream * (pre_activations[layer] > 0)
        grads[2 * layer] = activations[layer].T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        upstream = delta @ params[2 * layer].T
    return loss, grads


class MLPModel(BaseModel):
    """Defines a ReLU feed-forward network with a logistic output.

    Inputs are z-score normalized with the statistics of the training
    matrix, which the model keeps. Scores are probabilities in (0, 1).

    """
    kind = "mlp"

    def __init__(self, params: list[np.ndarray], mean: np.ndarray,
                 std: np.ndarray, column_names: tuple[str, ...],
                 training_meta: dict | None = None) -> None:
        super().__init__(column_names)
        self.name = "NN"
        for array in params:
            if not np.all(np.isfinite(array)):
                raise ValueError("Every network parameter must be finite")
        self.params = [np.array(p, dtype=np.float64) for p in params]
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        self.training_meta = training_meta or {}

    def decision(self, features: np.ndarray) -> np.ndarray:
        Z = apply_zscore(features, self.mean, self.std)
        return _sigmoid(forward(self.params, Z))

    def to_dict(self) -> dict:
        layers = [
            {"weights": self.params[k].tolist(), "bias": self.params[k + 1].tolist()}
            for k in range(0, len(self.params), 2)
        ]
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "column_names": list(self.column_names),
            "layers": layers,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "training_meta": self.training_meta,
        }


class Adam:
    """Keeps the moment estimates of the Adam optimizer."""
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig) -> None:
        self.cfg = cfg
        self.step = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Applies one bias-corrected Adam step in place."""
        cfg = self.cfg
        self.step += 1
        correction1 = 1.0 - cfg.adam_beta1 ** self.step
        correction2 = 1.0 - cfg.adam_beta2 ** self.step
        for k, grad in enumerate(grads):
            self.m[k] = cfg.adam_beta1 * self.m[k] + (1.0 - cfg.adam_beta1) * grad
            self.v[k] = cfg.adam_beta2 * self.v[k] + (1.0 - cfg.adam_beta2) * grad ** 2
            m_hat = self.m[k] / correction1
            v_hat = self.v[k] / correction2
            params[k] -= cfg.adam_alpha * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train_mlp(X: FeatureMatrix, cfg: TrainConfig) -> MLPModel:
    """Trains the network with Adam on mini-batches until the loss converges.

    Convergence means the relative change of the full-data loss between two
    epochs drops below ``convergence_rel_tol``; ``max_epochs`` caps the run.
    Initialization and shuffling both draw from one generator seeded with
    ``cfg.seed``.

    """
    labels = _check_training_matrix(X)
    y = labels.astype(np.float64)
    mean, std = zscore_statistics(X.features)
    Z = apply_zscore(X.features, mean, std)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(Z.shape[1], cfg.hidden_sizes, rng)
    optimizer = Adam(params, cfg)

    previous, _ = loss_and_gradients(params, Z, y)
    losses = [previous]
    converged = False
    n = Z.shape[0]
    for epoch in range(1, cfg.max_epochs + 1):
        permutation = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = permutation[start:start + cfg.batch_size]
            _, grads = loss_and_gradients(params, Z[batch], y[batch])
            optimizer.update(params, grads)

        current, _ = loss_and_gradients(params, Z, y)
        if not math.isfinite(current):
            raise TrainingDivergedError(
                f"Non-finite loss at epoch {epoch}: {repr(current)}")
        losses.append(current)
        logger.debug("MLP epoch %d: loss %.8f", epoch, current)
        if abs(previous - current) / max(abs(previous), 1e-12) < cfg.convergence_rel_tol:
            converged = True
            break
        previous = current

    if not converged:
        logger.info("MLP reached max_epochs=%d before converging", cfg.max_epochs)
    meta = {"epochs": len(losses) - 1, "converged": converged, "losses": losses}
    return MLPModel(params, mean, std, X.column_names, meta)


def score(model: BaseModel, X: FeatureMatrix) -> np.ndarray:
    """Returns the trending score of every row of ``X``."""
    if not isinstance(model, BaseModel):
        raise TypeError(f"'model' must be an instance of BaseModel: {repr(model)}")
    return model.score(X)


def model_from_json(text: str) -> BaseModel:
    """Restores a model serialized by ``BaseModel.to_json``."""
    document = json.loads(text)
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"Unsupported schema version: {repr(version)}")
    column_names = tuple(document["column_names"])
    kind = document.get("kind")
    match kind:
        case "adaboost":
            stumps = tuple(
                Stump(int(s["feature_index"]), float(s["threshold"]),
                      int(s["polarity"]), float(s["weight"]))
                for s in document["stumps"]
            )
            return AdaBoostModel(stumps, column_names, document.get("training_meta"))
        case "mlp":
            params = []
            for layer in document["layers"]:
                params.append(np.array(layer["weights"], dtype=np.float64))
                params.append(np.array(layer["bias"], dtype=np.float64))
            return MLPModel(
                params, np.array(document["mean"]), np.array(document["std"]),
                column_names, document.get("training_meta"))
        case _:
            raise ValueError(
                "Unsupported value. The value of 'kind' must be any one of "
                f"adaboost, mlp: {repr(kind)}")
