"""Graph unlearning for shallow GNN node classifiers.

Train a backbone, then remove the influence of deleted nodes, edges, or
features from its parameters with an influence-function update whose
perturbation loss covers the structurally affected k-hop neighborhood.
A retrain oracle and an adversarial-edge harness measure how well (and how
fast) the edit approximates retraining from scratch.
"""

from .calculus import (
    HessianOperator,
    LossSubset,
    blockdiag_hessian,
    exact_hessian,
    hessian_operator,
    hvp,
    subset_grad,
)
from .datasets import (
    DatasetDescriptor,
    gen_sbm,
    load_citation_dataset,
    load_dataset,
    load_graph_json,
    load_request,
    random_split,
    save_citation_dataset,
    save_graph_json,
    save_request,
)
from .engine import (
    GifConfig,
    UnlearnOutcome,
    closed_form_one_layer,
    delta_grad,
    direct_ihvp,
    neumann_ihvp,
    suggest_scale,
    traditional_grad,
    unlearn,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    GraphUnlearnError,
    InputError,
    NumericError,
    ParseError,
    SingularHessianError,
    UnsupportedOperationError,
)
from .evaluation import (
    ExperimentSpec,
    Report,
    ReportRow,
    adversarial_edges,
    efficacy_experiment,
    inject_edges,
    lambda_sweep,
    ratio_sweep,
    retrain,
    sample_request,
    utility_benchmark,
)
from .graph import (
    Graph,
    InfluencedRegion,
    UnlearnRequest,
    apply_request,
    apply_request_with_map,
    influenced_region,
    k_hop_neighbors,
    normalized_adjacency,
)
from .models import (
    SGC,
    BaseBackbone,
    ModelParams,
    OneLayerGCN,
    TwoLayerGCN,
    make_backbone,
    micro_f1,
    propagate,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "SGC",
    "BaseBackbone",
    "ConfigurationError",
    "DatasetDescriptor",
    "DivergenceError",
    "ExperimentSpec",
    "GifConfig",
    "Graph",
    "GraphUnlearnError",
    "HessianOperator",
    "InfluencedRegion",
    "InputError",
    "LossSubset",
    "ModelParams",
    "NumericError",
    "OneLayerGCN",
    "ParseError",
    "Report",
    "ReportRow",
    "SingularHessianError",
    "TwoLayerGCN",
    "UnlearnOutcome",
    "UnlearnRequest",
    "UnsupportedOperationError",
    "adversarial_edges",
    "apply_request",
    "apply_request_with_map",
    "blockdiag_hessian",
    "closed_form_one_layer",
    "delta_grad",
    "direct_ihvp",
    "efficacy_experiment",
    "exact_hessian",
    "gen_sbm",
    "hessian_operator",
    "hvp",
    "influenced_region",
    "inject_edges",
    "k_hop_neighbors",
    "lambda_sweep",
    "load_citation_dataset",
    "load_dataset",
    "load_graph_json",
    "load_request",
    "make_backbone",
    "micro_f1",
    "neumann_ihvp",
    "normalized_adjacency",
    "propagate",
    "random_split",
    "ratio_sweep",
    "retrain",
    "sample_request",
    "save_citation_dataset",
    "save_graph_json",
    "save_request",
    "subset_grad",
    "suggest_scale",
    "traditional_grad",
    "train",
    "unlearn",
    "utility_benchmark",
]
