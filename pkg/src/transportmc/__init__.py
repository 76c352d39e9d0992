"""Transport coefficients of stochastic particle systems.

Monte Carlo estimators (coupled transient subtraction, naive transient,
Green-Kubo, TTCF, NEMD) for Langevin dynamics, with a deterministic
finite-difference oracle for the 1D system, a Lennard-Jones fluid backend
and a reproducible parallel experiment harness.
"""

__version__ = "0.1.0"

from .coupling import (
    ContractionResult,
    CoupledPair,
    LinearDrift,
    PerturbationMap,
    apply_map,
    contraction_test,
    coupled_step,
    coupling_distance,
    make_coupled_pair,
)
from .dynamics import (
    BlowUpError,
    Box,
    Cosine1D,
    Harmonic,
    LangevinParams,
    NoiseStream,
    PhaseState,
    SystemSpec,
    Zero,
    baoab_step,
    evolve,
    force,
    sample_momenta,
)
from .estimators import (
    EstimatorError,
    EstimatorResult,
    ResponseSeries,
    SeriesAccumulator,
    green_kubo_estimate,
    integrate_series,
    naive_transient_estimate,
    nemd_estimate,
    subtraction_estimate,
    ttcf_estimate,
    variance_report,
)
from .fdoracle import (
    FDGrid,
    TransportOracle,
    bias_sweep,
    build_generator,
    compute_bias,
    gibbs_weights,
    reference_transport,
    solve_poisson,
)
from .forcing import (
    ColoredDrift,
    Constant1D,
    ShearFourierIm,
    SinusoidalTransverse,
    Test1D,
    VelocityAlongF,
    conjugate_response,
    eval_forcing,
    eval_observable,
)
from .lj import (
    CellList,
    LJParams,
    LennardJonesSF,
    SingularConfigurationError,
    lattice_init,
    lj_forces,
    lj_forces_bruteforce,
    thermalize,
    v_sf,
    v_sf_prime,
)
