"""Variable-importance estimators for fitted CATE models.

Two methods:

* conditional-permutation importance: replace a covariate by its
  conditional mean plus a permuted residual, re-score the same fitted
  model, and halve the risk increase;
* leave-one-covariate-out: refit the final stage on the remaining
  covariates against pseudo-outcomes computed from the full covariate
  set (no nuisance refits), and take the risk increase.

Sign convention: importance is (perturbed - full) risk, so important
variables come out positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cate import CateModel, NuisanceEstimates, predict_cate, pseudo_outcome
from .dgp import Dataset
from .errors import DiagnosticsUnavailableError, DimensionError
from .learners import LearnerSpec, as_matrix, fit_regressor, predict_regressor
from .rng import derive_seed, stream
from .risks import risk_value


@dataclass
class ConditionalModel:
    j: int
    regressor: object
    residual_variance: float  # training-residual variance of column j
    constant_column: bool = False

    def predict(self, x_rest: np.ndarray) -> np.ndarray:
        return predict_regressor(self.regressor, x_rest)


@dataclass
class ImportanceEstimate:
    method: str
    j: int
    psi: float
    risk_full: float
    risk_perturbed: float
    n_permutations: Optional[int] = None
    per_permutation: Optional[np.ndarray] = None
    reduced_model: Optional[object] = None
    flagged_constant: bool = False


@dataclass
class LinearDiagnostics:
    j: int
    delta_beta_norm_sq: float
    nu_variance: float


def _drop_column(x: np.ndarray, j: int) -> np.ndarray:
    return np.delete(x, j, axis=1)


def fit_conditional_models(x_train, spec: LearnerSpec, seed: int) -> list[ConditionalModel]:
    """One covariate predictor per variable: column j regressed on the rest."""
    x_train = as_matrix(x_train)
    d = x_train.shape[1]
    if d < 2:
        raise DimensionError("conditional models need at least 2 covariates")
    out = []
    for j in range(d):
        col = x_train[:, j]
        constant = bool(np.all(col == col[0]))
        model = fit_regressor(
            _drop_column(x_train, j), col, spec, derive_seed(seed, "cond", j)
        )
        resid = col - predict_regressor(model, _drop_column(x_train, j))
        out.append(ConditionalModel(j, model, float(np.var(resid)), constant))
    return out


def _test_risk_inputs(risk: str, test: Dataset, nuis_test: NuisanceEstimates):
    phi = None
    if risk == "po_risk":
        phi = pseudo_outcome(test.y, test.a, nuis_test)
    return dict(phi=phi, y=test.y, a=test.a, nuis=nuis_test, dataset=test)


def permucate(
    model: CateModel,
    nuis_test: NuisanceEstimates,
    test: Dataset,
    cond: list[ConditionalModel],
    n_permutations: int = 50,
    risk: str = "po_risk",
    seed: int = 0,
) -> list[ImportanceEstimate]:
    if n_permutations < 1:
        raise ValueError("need at least one permutation")
    x = as_matrix(test.x)
    if len(cond) != x.shape[1]:
        raise DimensionError("conditional models must cover every covariate")
    risk_kwargs = _test_risk_inputs(risk, test, nuis_test)
    tau_full = predict_cate(model, x)
    risk_full = risk_value(risk, tau_full, **risk_kwargs)
    out = []
    for cm in cond:
        j = cm.j
        if cm.constant_column:
            out.append(
                ImportanceEstimate("permucate", j, 0.0, risk_full, risk_full,
                                   n_permutations, np.zeros(n_permutations),
                                   flagged_constant=True)
            )
            continue
        nu = cm.predict(_drop_column(x, j))
        resid = x[:, j] - nu
        per_perm = np.empty(n_permutations)
        x_pert = x.copy()
        for k in range(n_permutations):
            rng = stream(seed, "perm", j, k)
            x_pert[:, j] = nu + resid[rng.permutation(len(resid))]
            tau_pert = predict_cate(model, x_pert)
            per_perm[k] = (risk_value(risk, tau_pert, **risk_kwargs) - risk_full) / 2.0
        out.append(
            ImportanceEstimate(
                "permucate", j, float(per_perm.mean()), risk_full,
                risk_full + 2.0 * float(per_perm.mean()),
                n_permutations, per_perm,
            )
        )
    return out


def loco(
    model: CateModel,
    nuis_train: NuisanceEstimates,
    nuis_test: NuisanceEstimates,
    train: Dataset,
    test: Dataset,
    final_spec: LearnerSpec,
    risk: str = "po_risk",
    seed: int = 0,
) -> list[ImportanceEstimate]:
    """LOCO with the pseudo-outcome projection trick.

    Reduced models regress the training pseudo-outcome (from full-covariate
    nuisances) on the remaining covariates; nuisances are never refitted.
    """
    x_train = as_matrix(train.x)
    x_test = as_matrix(test.x)
    if x_train.shape[1] != x_test.shape[1]:
        raise DimensionError("train/test covariate dimensions differ")
    phi_train = pseudo_outcome(train.y, train.a, nuis_train)
    risk_kwargs = _test_risk_inputs(risk, test, nuis_test)
    tau_full = predict_cate(model, x_test)
    risk_full = risk_value(risk, tau_full, **risk_kwargs)
    out = []
    for j in range(x_train.shape[1]):
        col = x_train[:, j]
        if np.all(col == col[0]):
            out.append(
                ImportanceEstimate("loco", j, 0.0, risk_full, risk_full,
                                   flagged_constant=True)
            )
            continue
        reduced = fit_regressor(
            _drop_column(x_train, j), phi_train, final_spec, derive_seed(seed, "loco", j)
        )
        tau_red = predict_regressor(reduced, _drop_column(x_test, j))
        risk_red = risk_value(risk, tau_red, **risk_kwargs)
        out.append(
            ImportanceEstimate("loco", j, risk_red - risk_full, risk_full, risk_red,
                               reduced_model=reduced)
        )
    return out


def linear_diagnostics(
    full, reduced: list, cond: list[ConditionalModel], x_test
) -> list[LinearDiagnostics]:
    """Finite-sample error terms of the two methods (linear final stages only).

    For each variable: the squared norm of the coefficient shift induced by
    the LOCO refit, and the variance of the conditional-mean predictions on
    the test split (the population conditional mean is zero in uncorrelated
    designs, where this diagnostic is exact).
    """
    x_test = as_matrix(x_test)
    beta_full = getattr(full, "coefficients", None)
    if beta_full is None:
        raise DiagnosticsUnavailableError("full model exposes no coefficients")
    out = []
    for cm, red in zip(cond, reduced):
        j = cm.j
        beta_red = getattr(red, "coefficients", None)
        if beta_red is None:
            raise DiagnosticsUnavailableError(f"reduced model {j} exposes no coefficients")
        delta = np.delete(beta_full, j) - beta_red
        nu = cm.predict(_drop_column(x_test, j))
        out.append(LinearDiagnostics(j, float(delta @ delta), float(np.var(nu))))
    return out
