"""Asymptotic Bayes-optimal limits of matrix sensing with rotationally-
invariant priors: free-entropy, mutual-information and MMSE curves, with
Monte Carlo verification at desk scale."""

from .apps import BSRProblem, NNProblem, bsr_mmse, effective_nn_noise, nn_generalization_mmse
from .channels import (
    ChannelSpec,
    QuadratureSpec,
    TabulatedActivation,
    pout_density,
    psi_out,
    psi_out_prime,
    psi_out_rec,
    psi_out_rec_prime,
    tabulate_activation,
)
from .errors import (
    ConvergenceError,
    DegenerateChannelError,
    DivergenceError,
    DomainError,
    InvalidParameterError,
    NumericError,
    SensingLimitsError,
    UnsupportedParameterError,
)
from .freeconv import (
    ConvolutionResult,
    psi_p0,
    psi_p0_prime,
    psi_rec,
    psi_rec_prime,
    rect_convolve,
    semicircle_convolve,
)
from .measures import (
    SpectralMeasure,
    cauchy_transform,
    load_measure,
    log_abs_moment,
    log_energy,
    marchenko_pastur,
    measure_from_samples,
    moment,
    point_mass,
    save_measure,
    semicircle,
    symmetrized_rect_gaussian,
    wasserstein2,
)
from .montecarlo import (
    MCReport,
    check_clt_universality,
    check_free_convolution,
    check_goe_denoising,
    check_rect_convolution,
)
from .priors import PriorSpec, build_prior, sample_matrix, sample_singular_law
from .solver import (
    RSState,
    SolveResult,
    SweepEntry,
    f_rec_rs,
    f_rs,
    f_rs_spike,
    inf_r,
    solve,
    solve_rec,
    solve_spike,
    sweep,
)

__version__ = "0.1.0"
