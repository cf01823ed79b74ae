"""Model averaging, stacking and blending for Bayesian posterior draws."""

from blendkit.bayes import (
    CovariateSet,
    HmcConfig,
    Priors,
    StackingFit,
    fit_bayes_stacking,
    fit_hier_stacking,
    predict_weights,
    softmax_with_reference,
)
from blendkit.blend import ElpdComparison, blend, compare, elpd_of
from blendkit.draws import Draws, DrawsCollection, lpd, make_draws
from blendkit.errors import BlendkitError, NumericalError, ValidationError
from blendkit.psis import PointwiseElpd, elpd_from_test, elpd_psis_loo, fit_gpd, psis_smooth
from blendkit.weighting import (
    OptimizeReport,
    WeightMatrix,
    mle_stacking,
    pseudo_bma,
    pseudo_bma_plus,
    stacking_objective,
)

__version__ = "0.1.0"

__all__ = [
    "BlendkitError",
    "CovariateSet",
    "Draws",
    "DrawsCollection",
    "ElpdComparison",
    "HmcConfig",
    "NumericalError",
    "OptimizeReport",
    "PointwiseElpd",
    "Priors",
    "StackingFit",
    "ValidationError",
    "WeightMatrix",
    "blend",
    "compare",
    "elpd_from_test",
    "elpd_of",
    "elpd_psis_loo",
    "fit_bayes_stacking",
    "fit_gpd",
    "fit_hier_stacking",
    "lpd",
    "make_draws",
    "mle_stacking",
    "predict_weights",
    "pseudo_bma",
    "pseudo_bma_plus",
    "psis_smooth",
    "softmax_with_reference",
    "stacking_objective",
]
