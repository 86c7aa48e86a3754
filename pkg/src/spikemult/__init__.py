"""Joint estimation of spike counts, multiplicities and values in spiked covariance models."""

__version__ = "0.1.0"

from .model import (
    ObservationMatrix,
    ParameterError,
    SpikeSpec,
    detectable,
    generate_doa,
    generate_isotropic,
    population_covariance,
    steering_matrix,
)
from .spectrum import (
    ClusterPartition,
    DomainError,
    SpectrumSummary,
    ValidationError,
    cluster_sums,
    eigenvalues_desc,
    mp_bulk_edges,
    phi,
    phi_inverse,
    sample_covariance,
    spectrum,
)
from .estimation import (
    JointEstimate,
    MultiplicityEstimate,
    PriorSpec,
    cluster_log_likelihood,
    cluster_variance,
    estimate_alphas,
    estimate_k,
    estimate_multiplicities,
    marginal_log_likelihood,
)
