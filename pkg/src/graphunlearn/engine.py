"""Influence-based unlearning: perturbation gradients, inverse-Hessian
solves, and the parameter update.

Two methods are provided.  ``"gif"`` builds the perturbation gradient from
both the deleted elements and their structurally influenced neighbors, where
the neighbor terms re-evaluate the same parameters on the remaining graph.
``"if"`` is the traditional baseline: only the directly deleted training
nodes' loss gradients, evaluated on the original graph.  Either way the
update solves against the full original training Hessian at the trained
parameters and applies ``theta_hat = theta_0 + delta``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
import scipy.linalg

from .calculus import (
    HessianOperator,
    LossSubset,
    blockdiag_hessian,
    exact_hessian,
    hessian_operator,
    signed_error,
    subset_grad,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    InputError,
    SingularHessianError,
    UnsupportedOperationError,
)
from .graph import (
    NODE,
    Graph,
    InfluencedRegion,
    UnlearnRequest,
    apply_request_with_map,
    influenced_region,
)
from .models import BaseBackbone, ModelParams

METHODS = ("gif", "if")
SOLVERS = ("neumann", "direct")


@dataclass(frozen=True)
class GifConfig:
    """Solver configuration for an unlearning run.

    ``scale`` is the coefficient that divides the Hessian inside the
    iterative solver; ``None`` means estimate it from the operator's largest
    eigenvalue.  ``l2`` must equal the regularization the model was trained
    with.  The perturbation sign convention is fixed: deleting data moves the
    parameters along ``+H^-1 v``.
    """

    method: str = "gif"
    solver: str = "neumann"
    scale: float | None = None
    iterations: int = 100
    depth: int | None = None
    l2: float = 1e-4
    residual_tol: float = 1e-3
    region_policy: str = "exact"
    hessian_form: str = "exact"
    scale_as_multiplier: bool = False

    #: Fixed perturbation weight of the deleted loss terms; not configurable.
    epsilon: ClassVar[int] = -1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.solver not in SOLVERS:
            raise ConfigurationError(f"unknown solver {self.solver!r}")
        if self.scale is not None and self.scale <= 0:
            raise ConfigurationError("scale must be positive")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be at least 1")
        if self.depth is not None and self.depth < 0:
            raise ConfigurationError("depth must be nonnegative")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be nonnegative")
        if self.residual_tol <= 0:
            raise ConfigurationError("residual_tol must be positive")


@dataclass(frozen=True)
class UnlearnOutcome:
    """Result of one unlearning run."""

    delta_theta: np.ndarray
    new_params: ModelParams
    solver_residual: float
    wall_clock: float
    region: InfluencedRegion
    scale: float | None = None
    flags: tuple = ()


def _train_intersection(graph: Graph, nodes) -> tuple:
    return tuple(sorted(v for v in nodes if graph.train_mask[v]))


def delta_grad(
    model: BaseBackbone,
    graph: Graph,
    request: UnlearnRequest,
    params: ModelParams | None = None,
    depth: int | None = None,
    region_policy: str = "exact",
) -> np.ndarray:
    """Perturbation gradient of the deleted-plus-influenced loss terms.

    Training nodes inside the influenced region contribute the difference of
    their loss gradients on the original and the remaining graph (same
    parameters); directly removed training nodes contribute their original
    gradient alone.  Regularization is excluded.
    """
    return _delta_grad_parts(model, graph, request, params, depth, region_policy)[0]


def _delta_grad_parts(model, graph, request, params=None, depth=None, region_policy="exact"):
    params = model._resolve_params(graph, params)
    k = model.depth if depth is None else depth
    region = influenced_region(graph, request, k, policy=region_policy)
    remaining, node_map = apply_request_with_map(graph, request)

    original_nodes = _train_intersection(graph, region.all_nodes)
    survivors = _train_intersection(graph, region.influenced)
    vector = subset_grad(model, params, LossSubset(graph, original_nodes))
    if survivors:
        mapped = tuple(int(node_map[v]) for v in survivors)
        vector = vector - subset_grad(model, params, LossSubset(remaining, mapped))
    return vector, region, remaining, node_map


def traditional_grad(
    model: BaseBackbone,
    graph: Graph,
    request: UnlearnRequest,
    params: ModelParams | None = None,
) -> np.ndarray:
    """Perturbation gradient of the traditional baseline.

    Only directly deleted training nodes contribute, with their loss
    gradients on the original graph; structural influence is ignored, so
    edge and feature requests produce a zero vector.
    """
    params = model._resolve_params(graph, params)
    request.validate(graph)
    removed = ()
    if request.kind == NODE:
        removed = _train_intersection(graph, request.node_ids)
    return subset_grad(model, params, LossSubset(graph, removed))


def neumann_ihvp(
    operator: HessianOperator,
    vector: np.ndarray,
    scale: float,
    iterations: int,
    residual_tol: float | None = None,
    scale_as_multiplier: bool = False,
) -> tuple[np.ndarray, float]:
    """Estimate ``H^-1 v`` by the scaled geometric-series recursion.

    Iterates ``X_j = v + X_{j-1} - (1/scale) H X_{j-1}`` from ``X_0 = v`` and
    returns ``X_t / scale`` together with the relative residual
    ``||H x - v|| / max(||v||, 1e-12)``.  Stops early once the residual drops
    below ``residual_tol``; each iteration costs one Hessian-vector product.

    ``scale_as_multiplier`` switches to the variant that multiplies the
    Hessian by ``scale`` and rescales the estimate by ``scale``, which
    converges only for operators with ``sigma_max < 2 / scale``.
    """
    if scale <= 0:
        raise InputError("scale must be positive")
    if iterations < 1:
        raise InputError("iterations must be at least 1")
    vector = np.asarray(vector, dtype=np.float64).ravel()
    vnorm = float(np.linalg.norm(vector))
    denom = max(vnorm, 1e-12)
    if vnorm == 0.0:
        return np.zeros_like(vector), 0.0

    factor = scale if scale_as_multiplier else 1.0 / scale
    iterate = vector.copy()
    for _ in range(iterations):
        applied = factor * operator.matvec(iterate)
        residual = float(np.linalg.norm(applied - vector)) / denom
        if residual_tol is not None and residual < residual_tol:
            return factor * iterate, residual
        iterate = vector + iterate - applied
        norm = float(np.linalg.norm(iterate))
        if not np.isfinite(norm) or norm > 1e12 * vnorm:
            raise DivergenceError(
                "iterative solve diverged: the spectral radius of (I - H/scale) must be "
                "below 1, which requires scale > sigma_max(H) / 2"
            )
    estimate = factor * iterate
    residual = float(np.linalg.norm(operator.matvec(estimate) - vector)) / denom
    return estimate, residual


def direct_ihvp(hessian: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Solve ``H x = v`` by a dense symmetric factorization.

    Raises :class:`SingularHessianError` when the factorization fails or the
    relative residual exceeds 1e-8 (expected for unregularized rank-deficient
    Hessians).
    """
    hessian = np.asarray(hessian, dtype=np.float64)
    vector = np.asarray(vector, dtype=np.float64).ravel()
    if hessian.ndim != 2 or hessian.shape[0] != hessian.shape[1]:
        raise InputError("hessian must be square")
    if vector.size != hessian.shape[0]:
        raise InputError("vector size does not match hessian")
    try:
        solution = scipy.linalg.solve(hessian, vector, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise SingularHessianError(f"factorization failed: {exc}") from exc
    if not np.all(np.isfinite(solution)):
        raise SingularHessianError("solve produced non-finite values")
    residual = float(np.linalg.norm(hessian @ solution - vector)) / max(
        float(np.linalg.norm(vector)), 1e-12
    )
    if residual > 1e-8:
        raise SingularHessianError(f"solve residual {residual:.3e} exceeds 1e-8")
    return solution


def suggest_scale(operator: HessianOperator, iterations: int = 30, seed: int = 0,
                  margin: float = 1.05) -> float:
    """Estimate ``margin * sigma_max(H)`` by power iteration.

    Any value at or above the largest eigenvalue keeps the iterative solve a
    contraction; the default margin absorbs estimation error.
    """
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(operator.size)
    vec /= np.linalg.norm(vec)
    sigma = 1.0
    for _ in range(iterations):
        out = operator.matvec(vec)
        sigma = float(np.linalg.norm(out))
        if sigma == 0.0:
            return margin
        vec = out / sigma
    return margin * sigma


def unlearn(
    model: BaseBackbone,
    graph: Graph,
    request: UnlearnRequest,
    config: GifConfig | None = None,
    params: ModelParams | None = None,
) -> UnlearnOutcome:
    """Remove the requested elements' influence from the trained parameters.

    Builds the perturbation gradient for ``config.method``, solves against
    the regularized full-training-set Hessian at the trained parameters, and
    returns the updated parameters with the solver residual and wall-clock
    time of the unlearning computation.
    """
    config = config or GifConfig()
    params = model._resolve_params(graph, params)
    if config.l2 != model.l2:
        raise ConfigurationError(
            f"config.l2={config.l2} does not match the model's training l2={model.l2}"
        )
    depth = model.depth if config.depth is None else config.depth

    start = time.perf_counter()
    if config.method == "gif":
        vector, region, _, _ = _delta_grad_parts(
            model, graph, request, params, depth, config.region_policy
        )
    else:
        region = influenced_region(graph, request, depth, policy=config.region_policy)
        vector = traditional_grad(model, graph, request, params)

    flags = ()
    if request.kind == NODE and request.node_ids >= set(graph.train_nodes.tolist()):
        if request.node_ids:
            flags = ("full-deletion: estimate unreliable",)

    scale_used: float | None = None
    if not np.any(vector):
        delta = np.zeros(params.size)
        residual = 0.0
    elif config.solver == "neumann":
        operator = hessian_operator(model, graph, params, form=config.hessian_form)
        scale_used = config.scale if config.scale is not None else suggest_scale(operator)
        delta, residual = neumann_ihvp(
            operator,
            vector,
            scale_used,
            config.iterations,
            residual_tol=config.residual_tol,
            scale_as_multiplier=config.scale_as_multiplier,
        )
    else:
        if config.hessian_form == "blockdiag":
            dense = scipy.linalg.block_diag(*blockdiag_hessian(model, graph, params))
        else:
            dense = exact_hessian(model, graph, params)
        delta = direct_ihvp(dense, vector)
        residual = float(np.linalg.norm(dense @ delta - vector)) / max(
            float(np.linalg.norm(vector)), 1e-12
        )

    new_params = params.replace(params.flat + delta)
    wall = time.perf_counter() - start
    return UnlearnOutcome(
        delta_theta=delta,
        new_params=new_params,
        solver_residual=residual,
        wall_clock=wall,
        region=region,
        scale=scale_used,
        flags=flags,
    )


def closed_form_one_layer(
    model: BaseBackbone,
    graph: Graph,
    request: UnlearnRequest,
    params: ModelParams | None = None,
) -> np.ndarray:
    """Per-class closed-form parameter changes for one-linear-layer models.

    Valid for node requests on a backbone with a single linear layer after
    propagation.  Class ``j`` solves ``D_j w_j = E_j`` where ``D_j`` is the
    j-th block of the block-diagonal Hessian and ``E_j`` collects the signed
    prediction errors of removed training nodes (original graph) plus the
    original-minus-remaining error difference of influenced training nodes.
    Returns an array of shape ``(num_classes, num_features)``.
    """
    if not model.is_linear:
        raise UnsupportedOperationError("closed form requires a single linear layer")
    if request.kind != NODE:
        raise UnsupportedOperationError("closed form applies to node requests only")
    params = model._resolve_params(graph, params)

    region = influenced_region(graph, request, model.depth)
    remaining, node_map = apply_request_with_map(graph, request)

    feats = model.propagated(graph)
    errors = signed_error(model, graph, params)
    removed = np.array(_train_intersection(graph, region.directly_removed), dtype=np.int64)
    influenced = np.array(_train_intersection(graph, region.influenced), dtype=np.int64)

    f, c = params.shapes[0]
    rhs = np.zeros((c, f))
    if removed.size:
        rhs += errors[removed].T @ feats[removed]
    if influenced.size:
        mapped = node_map[influenced]
        feats_rem = model.propagated(remaining)
        errors_rem = signed_error(model, remaining, params)
        rhs += errors[influenced].T @ feats[influenced]
        rhs -= errors_rem[mapped].T @ feats_rem[mapped]

    blocks = blockdiag_hessian(model, graph, params)
    out = np.empty((c, f))
    for j in range(c):
        try:
            out[j] = scipy.linalg.solve(blocks[j], rhs[j], assume_a="pos")
        except scipy.linalg.LinAlgError as exc:
            raise SingularHessianError(f"class block {j} is singular: {exc}") from exc
    return out
