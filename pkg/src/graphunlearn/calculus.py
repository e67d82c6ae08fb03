"""Gradient, Hessian-vector-product and explicit-Hessian kernels.

The curvature of the training objective is always taken over the full
training set and includes the ``2 * l2 * I`` regularization term, matching
the objective the backbones minimize; that keeps the operator positive
definite whenever ``l2 > 0``.

For the linear backbones everything is analytic.  For the two-layer backbone
the Hessian-vector product falls back to a central finite difference of the
analytic gradient, which avoids second-order back-propagation and is accurate
enough at the scales this package targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InputError, NumericError, UnsupportedOperationError
from .graph import Graph
from .models import BaseBackbone, ModelParams, one_hot

#: Largest flat parameter size for which a dense Hessian may be assembled.
DENSE_SIZE_CAP = 40_000


@dataclass(frozen=True)
class LossSubset:
    """A set of training nodes on a particular graph variant."""

    graph: Graph
    node_ids: tuple

    def __post_init__(self):
        ids = tuple(sorted(int(v) for v in self.node_ids))
        object.__setattr__(self, "node_ids", ids)
        for v in ids:
            if not 0 <= v < self.graph.num_nodes:
                raise InputError(f"subset references unknown node {v}")
            if not self.graph.train_mask[v]:
                raise InputError(f"subset node {v} is not a training node")


def subset_grad(
    model: BaseBackbone, params: ModelParams, subset: LossSubset, include_l2: bool = False
) -> np.ndarray:
    """Summed loss gradient over the subset's nodes, as a flat vector.

    The regularization gradient ``2 * l2 * theta`` is added only when
    ``include_l2`` is set; difference-of-loss constructions exclude it.
    """
    nodes = np.asarray(subset.node_ids, dtype=np.int64)
    if nodes.size == 0:
        grad = np.zeros(params.size)
        if include_l2:
            grad += 2.0 * model.l2 * params.flat
        return grad
    return model.loss_grad(subset.graph, params, nodes, include_l2=include_l2)


class HessianOperator:
    """Matrix-free view of the regularized training Hessian at fixed params.

    ``matvec`` is exact for linear backbones and a finite-difference estimate
    for the two-layer backbone.  ``dense()`` is available for linear backbones
    whose parameter count fits under the configured cap.
    """

    def __init__(self, size, matvec, dense=None, l2=0.0):
        self.size = int(size)
        self._matvec = matvec
        self._dense = dense
        self.l2 = float(l2)

    def matvec(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=np.float64).ravel()
        if vector.size != self.size:
            raise InputError(f"vector has size {vector.size}, operator expects {self.size}")
        out = self._matvec(vector)
        if not np.all(np.isfinite(out)):
            raise NumericError("Hessian-vector product produced non-finite values")
        return out

    def dense(self) -> np.ndarray:
        if self._dense is None:
            raise UnsupportedOperationError("dense assembly not available for this operator")
        return self._dense()


def hvp(operator: HessianOperator, vector: np.ndarray) -> np.ndarray:
    """Apply the Hessian operator to a vector."""
    return operator.matvec(vector)


def _linear_hessian_context(model, graph, params):
    feats = model.propagated(graph)[graph.train_nodes]
    if (
        getattr(model, "fit_graph_", None) is graph
        and getattr(model, "params_", None) is params
    ):
        probs = model.fit_probs_[graph.train_nodes]
    else:
        probs = model.probabilities(graph, params)[graph.train_nodes]
    return feats, probs


def _linear_matvec(feats, probs, l2, shapes):
    f, c = shapes[0]

    def matvec(vector):
        weights = vector.reshape((f, c), order="F")
        projected = feats @ weights
        weighted = probs * projected
        curved = weighted - probs * weighted.sum(axis=1, keepdims=True)
        return (feats.T @ curved).ravel(order="F") + 2.0 * l2 * vector

    return matvec


def hessian_operator(
    model: BaseBackbone,
    graph: Graph,
    params: ModelParams,
    form: str = "exact",
) -> HessianOperator:
    """Build the training-set Hessian operator at ``params``.

    ``form="blockdiag"`` drops the softmax cross-class curvature, keeping
    only the per-class diagonal blocks; it applies to linear backbones only.
    """
    l2 = model.l2
    if model.is_linear:
        feats, probs = _linear_hessian_context(model, graph, params)
        if form == "exact":
            matvec = _linear_matvec(feats, probs, l2, params.shapes)
        elif form == "blockdiag":
            f, c = params.shapes[0]

            def matvec(vector, feats=feats, probs=probs):
                weights = vector.reshape((f, c), order="F")
                curved = (probs * (1.0 - probs)) * (feats @ weights)
                return (feats.T @ curved).ravel(order="F") + 2.0 * l2 * vector

        else:
            raise InputError(f"unknown hessian form {form!r}")

        def dense(model=model, graph=graph, params=params, form=form):
            if form == "exact":
                return exact_hessian(model, graph, params)
            return scipy.linalg.block_diag(*blockdiag_hessian(model, graph, params))

        return HessianOperator(params.size, matvec, dense=dense, l2=l2)

    if form != "exact":
        raise UnsupportedOperationError("blockdiag form requires a linear backbone")
    train = graph.train_nodes

    def matvec(vector, model=model, graph=graph, params=params, train=train):
        theta = params.flat
        step = 1e-4 * (1.0 + np.abs(theta).max()) / max(np.abs(vector).max(), 1e-12)
        plus = model.loss_grad(graph, params.replace(theta + step * vector), train)
        minus = model.loss_grad(graph, params.replace(theta - step * vector), train)
        return (plus - minus) / (2.0 * step) + 2.0 * l2 * vector

    return HessianOperator(params.size, matvec, dense=None, l2=l2)


def exact_hessian(
    model: BaseBackbone, graph: Graph, params: ModelParams, size_cap: int = DENSE_SIZE_CAP
) -> np.ndarray:
    """Dense regularized Hessian; linear backbones only.

    Class block ``(j, k)`` is ``sum_i p_ij (delta_jk - p_ik) h_i^T h_i`` over
    training nodes ``i`` with propagated features ``h_i``.
    """
    if not model.is_linear:
        raise UnsupportedOperationError("dense Hessian requires a linear backbone")
    if params.size > size_cap:
        raise UnsupportedOperationError(
            f"parameter count {params.size} exceeds dense cap {size_cap}"
        )
    feats, probs = _linear_hessian_context(model, graph, params)
    f, c = params.shapes[0]
    out = np.zeros((params.size, params.size))
    for j in range(c):
        for k in range(j, c):
            if j == k:
                weight = probs[:, j] * (1.0 - probs[:, j])
            else:
                weight = -probs[:, j] * probs[:, k]
            block = feats.T @ (weight[:, None] * feats)
            out[j * f : (j + 1) * f, k * f : (k + 1) * f] = block
            if k != j:
                out[k * f : (k + 1) * f, j * f : (j + 1) * f] = block
    out += 2.0 * model.l2 * np.eye(params.size)
    return out


def blockdiag_hessian(model: BaseBackbone, graph: Graph, params: ModelParams) -> list:
    """Per-class diagonal Hessian blocks ``D_j`` (cross-class terms dropped).

    ``D_j = sum_i p_ij (1 - p_ij) h_i^T h_i + 2 * l2 * I`` over training
    nodes.  The omitted cross-class couplings make this an approximation of
    :func:`exact_hessian` whose diagonal blocks it matches exactly.
    """
    if not model.is_linear:
        raise UnsupportedOperationError("block-diagonal Hessian requires a linear backbone")
    feats, probs = _linear_hessian_context(model, graph, params)
    f, c = params.shapes[0]
    reg = 2.0 * model.l2 * np.eye(f)
    blocks = []
    for j in range(c):
        weight = probs[:, j] * (1.0 - probs[:, j])
        blocks.append(feats.T @ (weight[:, None] * feats) + reg)
    return blocks


def signed_error(model: BaseBackbone, graph: Graph, params: ModelParams) -> np.ndarray:
    """Prediction-minus-target residual ``P - Y`` for every node.

    Row ``i`` is the gradient of node ``i``'s loss with respect to its
    logits; its entries are the signed per-class error probabilities.
    """
    probs = (
        model.probabilities(graph, params)
        if model.is_linear
        else model.predict_proba(graph, params)
    )
    return probs - one_hot(graph.labels, graph.num_classes)
