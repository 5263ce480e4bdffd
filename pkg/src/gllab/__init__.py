"""Simulation and verification lab for the conservative tilt dynamics of a
one-dimensional anharmonic interface."""

from .model import (
    Asymmetry,
    HeightField,
    LocalField,
    Potential,
    TorusField,
    block_average,
    block_average_all,
    eta_from_phi,
    grad,
    grad_star,
    hamiltonian_eta,
    hamiltonian_phi,
    phi_from_eta,
)
from .dynamics import (
    BatchIntegrator,
    NoiseStream,
    TrajectoryRecord,
    ZeroNoise,
    conservation_residual,
    default_micro_step,
    drift_spectrum,
    drift_torus,
    exact_gaussian_step,
    simulate,
    step_local,
    step_torus,
)
from .measures import (
    CanonicalOptions,
    CanonicalSampler,
    EnsembleParams,
    TiltedSite,
    ValueWithSE,
    ensemble_avg,
    lambda_of_u,
    mean_u,
    partition_1d,
    rejection_sample,
    sample_canonical,
    sample_grand_canonical,
    sample_site,
    tilde_derivs,
    variance,
)
from .observables import Observable, make_observable, obs_block_mean, obs_pair, obs_site, obs_square
from .generator import (
    DynkinResult,
    LinearFunctional,
    carre_du_champ,
    dirichlet_form,
    dynkin_residual,
    generator_apply_batch,
    generator_asymmetric,
    generator_symmetric,
    generator_symmetric_local,
    gradient_on_torus,
    ito_tanaka_ratio,
    phi_gradient,
    poisson_solve_linear,
    symmetry_residuals,
)
from .chains import (
    ReversibleChain,
    centering_constant,
    lps_best_constants,
    pinned_bridge_sample,
    quadratic_local_gap,
    random_chain,
    shifted_lps_check,
    spectral_gap,
    sqrt_minus_generator,
    variational_bounds,
    weak_poincare_ratio,
)
from .eoe import (
    EoECurve,
    clt_block_check,
    cond_exp,
    eoe_residual_first,
    eoe_residual_second,
    residual_curve,
    scaling_exponent,
)
from .bg import (
    BGConfig,
    BGResult,
    HSpec,
    bg_moment,
    bg_moment_multi,
    iteration_diag,
    one_block_diag,
    residual_field_first,
    residual_field_second,
    turnover_scan,
    two_block_diag,
)

__version__ = "0.1.0"
