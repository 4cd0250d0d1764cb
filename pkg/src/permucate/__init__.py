"""PermuCATE: variable importance for CATE models with statistical guarantees."""

from .cate import (
    CateModel,
    LearnerSet,
    NuisanceEstimates,
    fit_dr_learner,
    fit_nuisances_crossfit,
    linear_learner_set,
    pehe,
    predict_cate,
    pseudo_outcome,
    superlearner_set,
    transport_nuisances,
)
from .dgp import Dataset, DgpSpec, OracleFunctions, ld_spec, oracle_eval, sample, sample_hl, sample_hp, sample_ld
from .importance import (
    ConditionalModel,
    ImportanceEstimate,
    LinearDiagnostics,
    fit_conditional_models,
    linear_diagnostics,
    loco,
    permucate,
)
from .inference import (
    CrossfitPlan,
    ImportanceTable,
    power_accounting,
    run_crossfit_importance,
    run_seed,
    wald_statistic,
)
from .learners import (
    LearnerSpec,
    PolynomialMap,
    expand_polynomial,
    fit_gbt,
    fit_logistic_cv,
    fit_ridge_cv,
    fit_stacked,
    predict_proba,
    predict_regressor,
)
from .risks import (
    oracle_nuisances,
    po_risk,
    r_risk,
    verify_po_decomposition,
    verify_r_decomposition,
)

__version__ = "0.1.0"
