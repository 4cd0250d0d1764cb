"""Cross-fitted DR-learner: nuisances, pseudo-outcomes, final CATE stage.

Nuisance predictions are strictly out-of-fold (folds stratified on the
treatment arm), pseudo-outcomes follow the doubly-robust construction,
and the final stage regresses the pseudo-outcome on the covariates.
Alongside the out-of-fold vectors we keep "transport" models fitted on
the whole split, used to evaluate risks on held-out data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dgp import Dataset
from .errors import DataError, DimensionError
from .learners import (
    LearnerSpec,
    as_matrix,
    fit_classifier,
    fit_regressor,
    predict_proba,
    predict_regressor,
    stratified_fold_assignment,
)
from .rng import derive_seed, stream


def linear_learner_set() -> "LearnerSet":
    """Ridge/logistic everywhere (the paper's linear preset)."""
    return LearnerSet(
        outcome=LearnerSpec("ridge_cv"),
        propensity=LearnerSpec("logistic_cv"),
        final=LearnerSpec("ridge_cv"),
        conditional=LearnerSpec("ridge_cv"),
    )


def superlearner_set() -> "LearnerSet":
    """Stacked GBT + ridge for outcome/final stages, logistic propensity."""
    stacked = LearnerSpec(
        "stacked", base=(LearnerSpec("gbt_regress"), LearnerSpec("ridge_cv"))
    )
    return LearnerSet(
        outcome=stacked,
        propensity=LearnerSpec("logistic_cv"),
        final=stacked,
        conditional=LearnerSpec("ridge_cv"),
    )


@dataclass(frozen=True)
class LearnerSet:
    outcome: LearnerSpec
    propensity: LearnerSpec
    final: LearnerSpec
    conditional: LearnerSpec


@dataclass
class NuisanceModels:
    mu0: object
    mu1: object
    pi: object


@dataclass
class NuisanceEstimates:
    mu0_hat: np.ndarray
    mu1_hat: np.ndarray
    pi_hat: np.ndarray
    m_hat: np.ndarray
    fold_assignment: Optional[np.ndarray]
    models: Optional[NuisanceModels] = None


def fit_nuisances_crossfit(
    data: Dataset, k: int, specs: LearnerSet, seed: int
) -> NuisanceEstimates:
    if k < 2:
        raise ValueError("k must be >= 2")
    x = as_matrix(data.x)
    a = np.asarray(data.a, dtype=float)
    y = np.asarray(data.y, dtype=float)
    n = len(y)
    if np.sum(a == 1) < 2 or np.sum(a == 0) < 2:
        raise DataError("stratification requires at least 2 samples per arm")
    fold = stratified_fold_assignment(a, k, stream(seed, "nuisance-folds"))
    mu0_hat = np.empty(n)
    mu1_hat = np.empty(n)
    pi_hat = np.empty(n)
    for f in range(k):
        held = fold == f
        train = ~held
        t1 = train & (a == 1)
        t0 = train & (a == 0)
        if not t1.any() or not t0.any():
            raise DataError(f"training portion of fold {f} is missing a treatment arm")
        m0 = fit_regressor(x[t0], y[t0], specs.outcome, derive_seed(seed, "mu0", f))
        m1 = fit_regressor(x[t1], y[t1], specs.outcome, derive_seed(seed, "mu1", f))
        mp = fit_classifier(x[train], a[train], specs.propensity, derive_seed(seed, "pi", f))
        mu0_hat[held] = predict_regressor(m0, x[held])
        mu1_hat[held] = predict_regressor(m1, x[held])
        pi_hat[held] = predict_proba(mp, x[held])
    models = NuisanceModels(
        mu0=fit_regressor(x[a == 0], y[a == 0], specs.outcome, derive_seed(seed, "mu0-full")),
        mu1=fit_regressor(x[a == 1], y[a == 1], specs.outcome, derive_seed(seed, "mu1-full")),
        pi=fit_classifier(x, a, specs.propensity, derive_seed(seed, "pi-full")),
    )
    m_hat = pi_hat * mu1_hat + (1.0 - pi_hat) * mu0_hat
    return NuisanceEstimates(mu0_hat, mu1_hat, pi_hat, m_hat, fold, models)


def transport_nuisances(nuis: NuisanceEstimates, x_new) -> NuisanceEstimates:
    """Nuisance estimates on new data, using models fitted on the training split."""
    if nuis.models is None:
        raise DataError("nuisance estimates carry no transport models")
    x_new = as_matrix(x_new)
    mu0 = predict_regressor(nuis.models.mu0, x_new)
    mu1 = predict_regressor(nuis.models.mu1, x_new)
    pi = predict_proba(nuis.models.pi, x_new)
    m = pi * mu1 + (1.0 - pi) * mu0
    return NuisanceEstimates(mu0, mu1, pi, m, None, nuis.models)


def pseudo_outcome(y, a, nuis: NuisanceEstimates) -> np.ndarray:
    """Doubly-robust pseudo-outcome: unbiased for tau(X) given oracle nuisances."""
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    if not (len(y) == len(a) == len(nuis.pi_hat)):
        raise DimensionError("y, a and nuisance vectors must share length")
    mu_a = np.where(a == 1, nuis.mu1_hat, nuis.mu0_hat)
    return (y - mu_a) * (a - nuis.pi_hat) / (nuis.pi_hat * (1.0 - nuis.pi_hat)) + (
        nuis.mu1_hat - nuis.mu0_hat
    )


@dataclass
class CateModel:
    final_regressor: object
    specs: LearnerSet
    k: int
    seed: int


def fit_dr_learner(
    data: Dataset, k: int, specs: LearnerSet, seed: int
) -> tuple[CateModel, NuisanceEstimates]:
    nuis = fit_nuisances_crossfit(data, k, specs, seed)
    phi = pseudo_outcome(data.y, data.a, nuis)
    final = fit_regressor(data.x, phi, specs.final, derive_seed(seed, "final"))
    return CateModel(final, specs, k, seed), nuis


def predict_cate(model: CateModel, x) -> np.ndarray:
    return predict_regressor(model.final_regressor, x)


def pehe(tau_hat, dataset: Dataset) -> float:
    """Mean squared error against the oracle CATE (simulation only)."""
    if dataset.oracle is None:
        raise DataError("PEHE needs an oracle")
    tau_hat = np.asarray(tau_hat, dtype=float)
    truth = dataset.oracle.tau(dataset.x)
    if len(tau_hat) != len(truth):
        raise DimensionError("tau_hat length does not match dataset")
    return float(np.mean((tau_hat - truth) ** 2))
