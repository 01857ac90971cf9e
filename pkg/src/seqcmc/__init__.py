"""Sequential Monte Carlo filters with conditional moment estimators.

The package covers three settings: single-object filtering in semi-linear
Gaussian and stochastic volatility models, jump Markov state-space systems,
and multi-target PHD filtering, each with a crude sampling estimator and a
conditional (Rao-Blackwellized) counterpart that integrates the newest
sampling stage in closed form.  The ``seqcmc`` command line runs repeated
benchmark experiments from JSON scenario configs.
"""

__version__ = "0.1.0"

from .gaussian import (
    DegenerateInnovationError,
    GaussianBelief,
    batch_kalman_update,
    kalman_predict,
    kalman_update,
)
from .jmss import (
    GeneralJmssReport,
    HybridCloud,
    JmssStateProposal,
    JumpParticle,
    ModeMarginalWeights,
    RbpfCloud,
    RbpfReport,
    general_jmss_step,
    jmss_is_marginal_step,
    jmss_mixture_proposal_step,
    prior_mode_proposal,
    rbpf_init,
    rbpf_step,
)
from .models import (
    ArchModel,
    LinearGaussianJmss,
    LinearGaussianModel,
    MomentFunction,
    SemiLinearGaussianModel,
    SemiLinearJmss,
    StateSpaceModel,
    StochasticVolatilityModel,
    process_variance_moment,
    state_moment,
    volatility_moment,
)
from .ospa import OspaParams, ospa
from .phd import (
    CmcPhdReport,
    CmcPhdState,
    CmcTables,
    GaussianMixture,
    GaussianMixtureBirth,
    GmConfig,
    MeasurementDrivenBirth,
    PhdModelParams,
    PhdParticleSet,
    SmcPhdReport,
    cmc_phd_moment_pair,
    cmc_phd_step,
    extract_targets,
    gm_extract,
    gm_phd_step,
    smc_phd_step,
)
from .rng import RngStream
from .single import (
    FilterState,
    KernelProposal,
    ResamplePolicy,
    StepReport,
    bootstrap_step,
    fa_step,
    generic_proposal_step,
    init_filter,
    kalman_reference_means,
    optimal_kernel_proposal,
    sir_step,
    taylor_proposal,
)
from .scenarios import (
    ConfigError,
    ScenarioConfig,
    build_model,
    build_moment,
    build_phd_params,
    constant_velocity_model,
    coordinated_turn_jmss,
    generate_truth,
    load_config,
    parse_config,
)
from .experiment import RunResult, emit_results, run_experiment
from .weights import (
    DegenerateWeightsError,
    WeightedParticleSet,
    ess,
    normalize_log_weights,
    resample,
    resample_indices,
)
