"""Probabilistic annual-layer chronologies for ice-core proxy series.

The latent depth-to-time mapping is a monotone chain over a lattice of
within-year states; seasonal proxy emissions make it a hidden Markov model
whose sparse structure keeps everything linear in the state count.  Three
model variants are provided: shared parameters (batched maximum
likelihood), a hierarchical extension with per-datapoint parameters and
volcanic tie-points (variational inference), and a continuous-index chain
for irregularly spaced depths (matrix-exponential kernels).
"""

from ._kernels import KERNEL_BACKEND
from .ctsmodel import (
    GapKernel,
    GapReport,
    RateVector,
    fit_mle_cts,
    forward_loglik_inhomogeneous,
    gap_kernel,
    gap_posterior,
)
from .errors import (
    IceChronError,
    InferenceError,
    InfeasibleModelError,
    ValidationError,
)
from .fit import (
    FitOptions,
    FitReport,
    MeanFieldPosterior,
    elbo_estimate,
    fit_batched,
    fit_map_hier,
    fit_mle,
    fit_vi,
    vi_chronology,
)
from .hierarchy import (
    HierObservationParams,
    HierPriorConfig,
    TiePoint,
    YearwiseStayProbabilities,
    attach_tiepoints,
    hier_log_joint,
    tie_emission_row,
)
from .hmm import (
    Chronology,
    DepthSeries,
    ObservationParams,
    StateSpace,
    StayProbabilities,
    build_emission_matrix,
    build_state_space,
    default_log_init,
    emission_logdensity,
    forward_backward,
    forward_loglik_sparse,
    layer_boundaries,
    sample_posterior_paths,
    transition_logprobs,
)
from .io import read_dataset, read_tiepoints, write_results
from .simulate import (
    SdePath,
    SdePriorParams,
    euler_maruyama,
    sde_drift,
    simulate_hmm,
    simulate_sde_dataset,
)

__version__ = "0.1.0"
