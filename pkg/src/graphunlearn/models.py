"""Shallow graph backbones with full-batch training.

Three node classifiers are provided, all sklearn-style estimators:

* :class:`SGC` -- K propagation steps, then one linear softmax layer.
* :class:`OneLayerGCN` -- the K=1 special case (kept as its own kind because
  several unlearning shortcuts apply only to one linear layer).
* :class:`TwoLayerGCN` -- propagate, rectify, propagate, linear softmax.

Training minimizes the summed softmax cross-entropy over training nodes plus
an L2 term ``l2 * ||theta||^2``; the descent step is scaled by the inverse
training-set size, so ``learning_rate`` is the step on the per-node average
gradient and the same default works across graph sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from weakref import WeakKeyDictionary

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InputError, NumericError
from .graph import Graph, normalized_adjacency

_PROP_CACHE: "WeakKeyDictionary[Graph, dict]" = WeakKeyDictionary()
_ADJ_CACHE: "WeakKeyDictionary[Graph, dict]" = WeakKeyDictionary()


def _cached_adjacency(graph: Graph, self_loops: bool):
    per = _ADJ_CACHE.setdefault(graph, {})
    if self_loops not in per:
        per[self_loops] = normalized_adjacency(graph, add_self_loops=self_loops)
    return per[self_loops]


def propagate(graph: Graph, k_hops: int, self_loops: bool = True) -> np.ndarray:
    """Propagated feature matrix: ``k_hops`` applications of the normalized
    adjacency to the node features.  ``k_hops=0`` returns the features as-is.

    Results are cached per graph, so repeated model evaluations on the same
    graph pay for propagation once.  Treat the returned array as read-only.
    """
    if k_hops < 0:
        raise InputError("k_hops must be nonnegative")
    per = _PROP_CACHE.setdefault(graph, {})
    key = (int(k_hops), bool(self_loops))
    if key not in per:
        if k_hops == 0:
            out = graph.features
        else:
            adj = _cached_adjacency(graph, self_loops)
            out = graph.features
            for _ in range(k_hops):
                out = adj @ out
            out = np.ascontiguousarray(out)
            out.setflags(write=False)
        per[key] = out
    return per[key]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus the shapes of its weight-matrix segments.

    Matrices are stored column-major (class-major for an ``F x C`` output
    layer), so per-class parameter blocks are contiguous in ``flat``.
    """

    flat: np.ndarray
    shapes: tuple

    def __post_init__(self):
        flat = np.ascontiguousarray(self.flat, dtype=np.float64).ravel()
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "shapes", tuple(tuple(int(d) for d in s) for s in self.shapes))
        expected = sum(int(np.prod(s)) for s in self.shapes)
        if flat.size != expected:
            raise InputError(f"flat vector has {flat.size} entries, shapes require {expected}")

    @property
    def size(self) -> int:
        return self.flat.size

    def matrices(self) -> tuple:
        """Unflatten into the declared weight matrices."""
        out = []
        offset = 0
        for shape in self.shapes:
            n = int(np.prod(shape))
            out.append(self.flat[offset : offset + n].reshape(shape, order="F"))
            offset += n
        return tuple(out)

    @classmethod
    def from_matrices(cls, matrices) -> "ModelParams":
        mats = [np.asarray(m, dtype=np.float64) for m in matrices]
        flat = np.concatenate([m.ravel(order="F") for m in mats]) if mats else np.empty(0)
        return cls(flat, tuple(m.shape for m in mats))

    def replace(self, flat: np.ndarray) -> "ModelParams":
        """Same shape descriptor, new values."""
        return ModelParams(flat, self.shapes)


def micro_f1(predicted, actual) -> float:
    """Micro-averaged F1 of single-label predictions.

    With one label per node, micro-averaged precision and recall both equal
    accuracy, so this is the fraction of exact matches.
    """
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape or predicted.ndim != 1 or predicted.size == 0:
        raise InputError("predicted and actual must be equal-length nonempty vectors")
    return float(np.mean(predicted == actual))


class BaseBackbone(BaseEstimator):
    """Common training loop and prediction surface for all backbones."""

    kind = None
    is_linear = False

    # subclasses set in __init__: self_loops, l2, epochs, learning_rate, seed

    @property
    def depth(self) -> int:
        """Propagation depth: radius of a node's receptive field."""
        raise NotImplementedError

    def _validate_fit_inputs(self, graph: Graph):
        if graph.train_nodes.size == 0:
            raise InputError("graph has no training nodes")
        if self.l2 < 0:
            raise InputError("l2 must be nonnegative")
        if self.epochs < 1:
            raise InputError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")

    def _init_params(self, graph: Graph) -> ModelParams:
        raise NotImplementedError

    def loss_value(self, graph, params, nodes, include_l2=False) -> float:
        """Summed cross-entropy of ``nodes`` (plus the L2 term if asked)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        probs_log = self._log_probs(graph, params)
        loss = float(-probs_log[nodes, graph.labels[nodes]].sum())
        if include_l2:
            loss += self.l2 * float(params.flat @ params.flat)
        return loss

    def loss_grad(self, graph, params, nodes, include_l2=False) -> np.ndarray:
        """Flat gradient of the summed cross-entropy of ``nodes``."""
        raise NotImplementedError

    def _log_probs(self, graph, params) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, graph: Graph, params: ModelParams | None = None) -> np.ndarray:
        """Per-node class probabilities; rows sum to one.

        ``params`` overrides the fitted parameters, which lets callers score
        edited parameter vectors without refitting.
        """
        params = self._resolve_params(graph, params)
        return np.exp(self._log_probs(graph, params))

    def predict(self, graph: Graph, params: ModelParams | None = None) -> np.ndarray:
        params = self._resolve_params(graph, params)
        return np.argmax(self._log_probs(graph, params), axis=1)

    def score(self, graph: Graph, params: ModelParams | None = None, mask: str = "test") -> float:
        """Micro-F1 on the graph's ``"test"`` or ``"train"`` nodes."""
        nodes = graph.test_nodes if mask == "test" else graph.train_nodes
        pred = self.predict(graph, params)
        return micro_f1(pred[nodes], graph.labels[nodes])

    def _resolve_params(self, graph: Graph, params: ModelParams | None) -> ModelParams:
        if params is None:
            if not hasattr(self, "params_"):
                raise InputError("model is not fitted and no params were given")
            params = self.params_
        if params.shapes[0][0] != graph.num_features:
            raise InputError(
                f"params expect {params.shapes[0][0]} features, graph has {graph.num_features}"
            )
        return params

    def _make_objective(self, graph, train):
        """Fused objective closure: one forward and one backward per call."""

        def objective(params):
            loss = self.loss_value(graph, params, train, include_l2=True)
            grad = self.loss_grad(graph, params, train, include_l2=True)
            return loss, grad

        return objective

    def fit(self, graph: Graph) -> "BaseBackbone":
        """Train by full-batch gradient descent for ``epochs`` steps."""
        self._validate_fit_inputs(graph)
        train = graph.train_nodes
        params = self._init_params(graph)
        objective = self._make_objective(graph, train)
        history = []
        step = self.learning_rate / train.size
        for epoch in range(self.epochs):
            loss, grad = objective(params)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            history.append(loss)
            params = params.replace(params.flat - step * grad)
        final_loss, final_grad = objective(params)
        if not np.isfinite(final_loss):
            raise NumericError(f"non-finite training loss at epoch {self.epochs}")
        history.append(final_loss)

        self.params_ = params
        self.n_features_in_ = graph.num_features
        self.n_classes_ = graph.num_classes
        self.objective_history_ = np.array(history)
        self.final_objective_ = final_loss
        self.grad_norm_ = float(np.abs(final_grad).max())
        self.fit_graph_ = graph
        self.fit_probs_ = np.exp(self._log_probs(graph, params))
        return self

    # -- conveniences for config-driven construction --------------------

    def config(self) -> dict:
        out = {"kind": self.kind}
        out.update(self.get_params())
        return out


class SGC(BaseBackbone):
    """Propagate features ``k_hops`` times, then fit a linear softmax layer.

    The objective is convex; with zero initialization the optimum is reached
    deterministically, so ``seed`` only matters to downstream consumers that
    derive per-run randomness from the model config.
    """

    kind = "sgc"
    is_linear = True

    def __init__(self, k_hops=2, self_loops=True, l2=1e-4, epochs=100, learning_rate=0.5, seed=0):
        self.k_hops = k_hops
        self.self_loops = self_loops
        self.l2 = l2
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    @property
    def depth(self) -> int:
        return self.k_hops

    def propagated(self, graph: Graph) -> np.ndarray:
        return propagate(graph, self.depth, self.self_loops)

    def _init_params(self, graph: Graph) -> ModelParams:
        return ModelParams.from_matrices(
            [np.zeros((graph.num_features, graph.num_classes))]
        )

    def _log_probs(self, graph, params):
        (weights,) = params.matrices()
        return log_softmax(self.propagated(graph) @ weights)

    def probabilities(self, graph, params) -> np.ndarray:
        return np.exp(self._log_probs(graph, params))

    def loss_grad(self, graph, params, nodes, include_l2=False) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        (weights,) = params.matrices()
        feats = self.propagated(graph)[nodes]
        probs = softmax(feats @ weights)
        probs[np.arange(nodes.size), graph.labels[nodes]] -= 1.0
        grad = feats.T @ probs
        flat = grad.ravel(order="F")
        if include_l2:
            flat = flat + 2.0 * self.l2 * params.flat
        return flat

    def _make_objective(self, graph, train):
        feats = self.propagated(graph)[train]
        labels = graph.labels[train]
        rows = np.arange(train.size)
        l2 = self.l2

        def objective(params):
            (weights,) = params.matrices()
            logits = feats @ weights
            shifted = logits - logits.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            totals = exp.sum(axis=1)
            loss = float((np.log(totals) - shifted[rows, labels]).sum())
            loss += l2 * float(params.flat @ params.flat)
            probs = exp / totals[:, None]
            probs[rows, labels] -= 1.0
            grad = (feats.T @ probs).ravel(order="F") + 2.0 * l2 * params.flat
            return loss, grad

        return objective


class OneLayerGCN(SGC):
    """Single graph convolution with a softmax classifier (depth fixed to 1)."""

    kind = "gcn1"

    def __init__(self, self_loops=True, l2=1e-4, epochs=100, learning_rate=0.5, seed=0):
        super().__init__(
            k_hops=1,
            self_loops=self_loops,
            l2=l2,
            epochs=epochs,
            learning_rate=learning_rate,
            seed=seed,
        )


class TwoLayerGCN(BaseBackbone):
    """Two-layer graph convolution with a rectified hidden layer.

    Nonconvex: the hidden layer is initialized from a seeded uniform
    ``+-1/sqrt(fan_in)`` draw and trained with a smaller default step.
    """

    kind = "gcn2"
    is_linear = False

    def __init__(self, hidden_dim=16, self_loops=True, l2=1e-4, epochs=100,
                 learning_rate=0.05, seed=0):
        self.hidden_dim = hidden_dim
        self.self_loops = self_loops
        self.l2 = l2
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    @property
    def depth(self) -> int:
        return 2

    def _init_params(self, graph: Graph) -> ModelParams:
        rng = np.random.default_rng(self.seed)
        f, h, c = graph.num_features, self.hidden_dim, graph.num_classes
        w1 = rng.uniform(-1.0, 1.0, size=(f, h)) / np.sqrt(f)
        w2 = rng.uniform(-1.0, 1.0, size=(h, c)) / np.sqrt(h)
        return ModelParams.from_matrices([w1, w2])

    def _layers(self, graph, params):
        w1, w2 = params.matrices()
        adj = _cached_adjacency(graph, self.self_loops)
        prop1 = propagate(graph, 1, self.self_loops)
        pre_hidden = prop1 @ w1
        hidden = np.maximum(pre_hidden, 0.0)
        hidden_prop = adj @ hidden
        logits = hidden_prop @ w2
        return prop1, pre_hidden, hidden_prop, logits

    def _log_probs(self, graph, params):
        return log_softmax(self._layers(graph, params)[3])

    def loss_grad(self, graph, params, nodes, include_l2=False) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        w1, w2 = params.matrices()
        adj = _cached_adjacency(graph, self.self_loops)
        prop1, pre_hidden, hidden_prop, logits = self._layers(graph, params)

        d_logits = np.zeros_like(logits)
        if nodes.size:
            probs = softmax(logits[nodes])
            probs[np.arange(nodes.size), graph.labels[nodes]] -= 1.0
            d_logits[nodes] = probs
        grad_w2 = hidden_prop.T @ d_logits
        back = adj @ d_logits
        d_hidden = (back @ w2.T) * (pre_hidden > 0)
        grad_w1 = prop1.T @ d_hidden

        flat = np.concatenate([grad_w1.ravel(order="F"), grad_w2.ravel(order="F")])
        if include_l2:
            flat = flat + 2.0 * self.l2 * params.flat
        return flat

    def _make_objective(self, graph, train):
        adj = _cached_adjacency(graph, self.self_loops)
        prop1 = propagate(graph, 1, self.self_loops)
        labels = graph.labels[train]
        rows = np.arange(train.size)
        l2 = self.l2

        def objective(params):
            w1, w2 = params.matrices()
            pre_hidden = prop1 @ w1
            hidden = np.maximum(pre_hidden, 0.0)
            hidden_prop = adj @ hidden
            logits = hidden_prop @ w2

            sub = logits[train]
            shifted = sub - sub.max(axis=1, keepdims=True)
            exp = np.exp(shifted)
            totals = exp.sum(axis=1)
            loss = float((np.log(totals) - shifted[rows, labels]).sum())
            loss += l2 * float(params.flat @ params.flat)

            d_logits = np.zeros_like(logits)
            probs = exp / totals[:, None]
            probs[rows, labels] -= 1.0
            d_logits[train] = probs
            grad_w2 = hidden_prop.T @ d_logits
            back = adj @ d_logits
            d_hidden = (back @ w2.T) * (pre_hidden > 0)
            grad_w1 = prop1.T @ d_hidden
            grad = np.concatenate([grad_w1.ravel(order="F"), grad_w2.ravel(order="F")])
            return loss, grad + 2.0 * l2 * params.flat

        return objective


BACKBONE_KINDS = {"sgc": SGC, "gcn1": OneLayerGCN, "gcn2": TwoLayerGCN}


def make_backbone(kind: str, **kwargs) -> BaseBackbone:
    """Instantiate a backbone by kind name (``sgc``, ``gcn1``, ``gcn2``)."""
    try:
        cls = BACKBONE_KINDS[kind]
    except KeyError:
        raise InputError(f"unknown backbone kind {kind!r}") from None
    return cls(**kwargs)


def train(graph: Graph, model: BaseBackbone) -> ModelParams:
    """Fit ``model`` on ``graph`` and return the trained parameter vector."""
    return model.fit(graph).params_
