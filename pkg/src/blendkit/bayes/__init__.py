from blendkit.bayes.covariates import (
    CovariateInfo,
    CovariateSet,
    Transform,
    covariate_info,
    transform_covariates,
)
from blendkit.bayes.diagnostics import ess_bulk, split_rhat
from blendkit.bayes.hmc import HmcConfig, HmcResult, hmc_sample
from blendkit.bayes.models import (
    HierLayout,
    Priors,
    log_post_hier,
    log_post_pooled,
    softmax_with_reference,
)
from blendkit.bayes.stacking import (
    FitKind,
    StackingCoefficients,
    StackingFit,
    fit_bayes_stacking,
    fit_hier_stacking,
    predict_weights,
)

__all__ = [
    "CovariateInfo",
    "CovariateSet",
    "FitKind",
    "HierLayout",
    "HmcConfig",
    "HmcResult",
    "Priors",
    "StackingCoefficients",
    "StackingFit",
    "Transform",
    "covariate_info",
    "ess_bulk",
    "fit_bayes_stacking",
    "fit_hier_stacking",
    "hmc_sample",
    "log_post_hier",
    "log_post_pooled",
    "predict_weights",
    "softmax_with_reference",
    "split_rhat",
    "transform_covariates",
]
