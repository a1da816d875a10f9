"""Growth-fragmentation dynamics on a truncated size axis.

Numerics for the rescaled size-structured growth-and-splitting semigroup:
coefficient models with exact moments, finite-volume operator assembly,
Perron eigensolves (direct, dual and boundary-pinned brackets), exact
characteristic transport, a perturbation-series propagator with certified
remainders, and scripted experiments for tail exponents, slow-convergence
certificates, spectral-gap sandwiches and kernel-truncation calibration.
"""

from .model import (
    CoefficientSet,
    FragmentationKernel,
    FragmentationRate,
    GrowthRate,
    asymmetric_kernel,
    capital_lambda,
    infimum_support,
    log_damped_kernel,
    mitosis_kernel,
    moment,
    power_law_kernel,
    solve_k,
    truncate_kernel,
    uniform_kernel,
    validate_hypotheses,
)
from .discretization import (
    DiscreteField,
    Grid,
    WeightVector,
    assemble_frag_gain,
    assemble_operator,
    assemble_transport,
    bracket,
    build_grid,
    weighted_norm,
)
from .eigen import (
    PerronOptions,
    PerronTriple,
    TruncatedEigenPair,
    fit_power_tail,
    solve_perron,
    solve_truncated_brackets,
    supersolution_defect,
    transport_resolvent_apply,
)

__version__ = "0.1.0"
