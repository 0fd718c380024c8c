"""Desk-scale laboratory for offline distributional policy evaluation on
finite MDPs: quantile distortion, distorted distributional evaluation with
ensemble-driven non-uniform pessimism, a uniform-pessimism baseline, a
tabular distorted-distributional actor critic, and empirical verification of
the supporting theory."""

from .mdp import (
    FiniteMdp,
    IidFromWeights,
    MissingDataError,
    MdpValidationError,
    OfflineDataset,
    Policy,
    PointMassMixture,
    Trajectories,
    TruncatedGaussian,
    Uniform,
    generate_offline_dataset,
    monte_carlo_returns,
    point_mass,
    sample_step,
    truncation_horizon,
    uniform_policy,
    validate_mdp,
)
from .quantiles import (
    AtomMixture,
    QuantileTable,
    cdf,
    inverse_cdf,
    project_w1,
    quantile_huber,
    quantile_huber_grad,
    sup_wasserstein,
    wasserstein,
)
from .bellman import (
    empirical_bellman_cdf,
    empirical_bellman_mixture,
    empirical_bellman_quantiles,
    exact_bellman_atoms,
    exact_bellman_cdf,
    exact_bellman_quantiles,
)
from .distortion import (
    DatasetSource,
    DistortionTable,
    FixedPointReport,
    contraction_ratio,
    dde_step,
    default_max_iter,
    distort,
    iterate_fixed_point,
    sandwich_bounds,
    uniform_pessimism_step,
)
from .ensemble import (
    Ensemble,
    SigmaTable,
    build_phi,
    distorted_target,
    ensemble_regression_step,
    ensemble_stats,
    init_ensemble,
    polyak_update,
    sample_batch,
)
from .control import (
    DdacConfig,
    cvar_of_samples,
    evaluate_policy,
    greedy_policy,
    q_value,
    risk_q,
    train_ddac_tabular,
)
from .theory import (
    TheoremReport,
    asymptotic_variance,
    certify_target_density,
    clt_experiment,
    concentration_delta,
    concentration_experiment,
    empirical_cdf_variance,
    reference_mdp,
    reference_setup,
    sandwich_check,
    target_density,
    target_quantile,
    variance_lower_bound,
)
from .benchmarks import chain_mdp, exact_q_values, gridworld_mdp, optimal_policy_value_iteration, random_mdp
from .config import Config, ConfigError, apply_overrides, config_hash, load_config
from .seeding import rng_for

__all__ = [name for name in dir() if not name.startswith("_")]
