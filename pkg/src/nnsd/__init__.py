"""Areal-data spatial modeling with a learned neighborhood structure.

The package fits a hierarchical Gaussian model whose intrinsic
autoregressive random effect lives on an *estimated* adjacency: each pair
of units is linked with a probability driven by geographic distance and by
the distance between latent unit positions.  Four variants share one
engine — NNSD (both distances), NN (geography only), SD (latent positions
only) and ICAR (fixed geographic adjacency).
"""

from ._kernels import BACKEND, get_backend
from .domain import (
    ColumnSpec,
    SpatialDomain,
    delta_method_log_variance,
    load_domain,
    make_domain,
    normalize_to_unit_disk,
    pairwise_distances,
)
from .gmrf import (
    AdjacencyState,
    RandomEffects,
    build_adjacency,
    flip_logdet_ratio,
    icar_logdensity,
    project_sum_to_zero,
    pseudo_logdet,
    sample_epsilon_conditional,
)
from .inference import (
    VARIANTS,
    ChainDraws,
    Hyperparams,
    ModelState,
    RunOptions,
    Sampler,
    gibbs_update_location_params,
    gibbs_update_variances,
    initial_state,
    joint_logdensity,
    mh_flip_edges,
    mh_update_alpha_gamma,
    mh_update_positions,
    run_chain,
    run_chains,
)
from .neighborhood import (
    LatentPositions,
    NeighborhoodParams,
    adjacency_logprob,
    edge_logit,
    edge_prob_matrix,
    position_logprior,
    sample_adjacency,
)
from .diagnostics import (
    DiagnosticsReport,
    diagnostics_report,
    effective_sample_size,
    lugsail_batch_cov,
    mpsrf,
    posterior_summary,
    procrustes_align,
    psrf,
)
from .simulation import (
    GeometrySpec,
    ScenarioSpec,
    ScoreTable,
    gen_pseudo_data,
    gen_scenario,
    make_standin_dataset,
    run_comparison,
    run_pseudo_study,
    score,
)
from .io_cli import RunConfig, cli_dispatch, parse_config, write_outputs

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "VARIANTS",
    "AdjacencyState",
    "ChainDraws",
    "ColumnSpec",
    "DiagnosticsReport",
    "GeometrySpec",
    "Hyperparams",
    "LatentPositions",
    "ModelState",
    "NeighborhoodParams",
    "RandomEffects",
    "RunConfig",
    "RunOptions",
    "Sampler",
    "ScenarioSpec",
    "ScoreTable",
    "SpatialDomain",
    "adjacency_logprob",
    "build_adjacency",
    "cli_dispatch",
    "delta_method_log_variance",
    "diagnostics_report",
    "edge_logit",
    "edge_prob_matrix",
    "effective_sample_size",
    "flip_logdet_ratio",
    "gen_pseudo_data",
    "gen_scenario",
    "get_backend",
    "gibbs_update_location_params",
    "gibbs_update_variances",
    "icar_logdensity",
    "initial_state",
    "joint_logdensity",
    "load_domain",
    "lugsail_batch_cov",
    "make_domain",
    "make_standin_dataset",
    "mh_flip_edges",
    "mh_update_alpha_gamma",
    "mh_update_positions",
    "mpsrf",
    "normalize_to_unit_disk",
    "pairwise_distances",
    "parse_config",
    "position_logprior",
    "posterior_summary",
    "procrustes_align",
    "project_sum_to_zero",
    "pseudo_logdet",
    "psrf",
    "run_chain",
    "run_chains",
    "run_comparison",
    "run_pseudo_study",
    "sample_adjacency",
    "sample_epsilon_conditional",
    "score",
    "write_outputs",
]
