"""Variance reduction for Metropolis-Hastings output via Poisson-equation control variates."""

from pecv.control_variates import (
    CVReport,
    G0Params,
    analytic_a,
    analytic_ag,
    cv_reports_to_csv,
    cv_reports_to_json,
    default_params,
    estimate,
    g0_eval,
    pg_hat,
    theta_hat,
    theta_hat_detail,
)
from pecv.experiments import (
    ExperimentSpec,
    VrfReport,
    build_problem,
    emit_trace_series,
    experiment_spec_from_dict,
    run_experiment,
    running_estimates,
)
from pecv.fitting import (
    FitResult,
    fit_g0,
    load_fitted_params,
    poisson_residual_loss,
    reference_chain,
    save_fit,
)
from pecv.gaussian import GaussianApprox, build_approx, destandardize, standardize
from pecv.ncchisq import (
    NcChiSq,
    SeriesConvergenceError,
    ncchisq_cdf,
    ncchisq_cdf_batch,
    tilted_tail_batch,
    tilted_tail_expectation,
)
from pecv.samplers import (
    AdaptSpec,
    ChainTrace,
    ProposalSpec,
    adapt_step,
    default_step2,
    load_trace,
    run_chain,
    save_trace,
    save_trace_csv,
)
from pecv.targets import (
    GaussMixtureSpec,
    LogisticData,
    SvModelSpec,
    TargetModel,
    bundled_dataset,
    bundled_dataset_names,
    gaussian_target,
    load_logistic_csv,
    logistic_mle_cov,
    logistic_target,
    mixture_cov_draw,
    mixture_target,
    sv_map_cov,
    sv_simulate,
    sv_target,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
