"""Feasible causal risks and numerical checks of their decompositions.

The pseudo-outcome risk (default everywhere) and the R-risk are both
computable from observed data given nuisance estimates; the oracle PEHE
is available in simulations only.  `verify_po_decomposition` and
`verify_r_decomposition` evaluate both sides of the population
decompositions under oracle nuisances so tests can assert closeness.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .cate import NuisanceEstimates, pehe, pseudo_outcome
from .dgp import Dataset
from .errors import DataError, DimensionError

RISK_KINDS = ("po_risk", "r_risk", "oracle_pehe")


def po_risk(tau_pred, phi) -> float:
    """Mean squared distance between predictions and pseudo-outcomes."""
    tau_pred = np.asarray(tau_pred, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if len(tau_pred) != len(phi):
        raise DimensionError("tau_pred and phi lengths differ")
    return float(np.mean((phi - tau_pred) ** 2))


def r_risk(tau_pred, y, a, nuis: NuisanceEstimates) -> float:
    """Mean of ((y - m_hat) - (a - pi_hat) * tau_pred)^2."""
    tau_pred = np.asarray(tau_pred, dtype=float)
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    if not (len(tau_pred) == len(y) == len(a) == len(nuis.m_hat)):
        raise DimensionError("r_risk inputs must share length")
    resid = (y - nuis.m_hat) - (a - nuis.pi_hat) * tau_pred
    return float(np.mean(resid**2))


def risk_value(kind: str, tau_pred, *, phi=None, y=None, a=None,
               nuis: NuisanceEstimates | None = None, dataset: Dataset | None = None) -> float:
    """Dispatch a risk evaluation; arguments beyond tau_pred depend on kind."""
    if kind == "po_risk":
        return po_risk(tau_pred, phi)
    if kind == "r_risk":
        return r_risk(tau_pred, y, a, nuis)
    if kind == "oracle_pehe":
        return pehe(tau_pred, dataset)
    raise ValueError(f"unknown risk kind {kind!r}")


def oracle_nuisances(dataset: Dataset) -> NuisanceEstimates:
    """Nuisance estimates evaluated from the oracle functions (clipped propensity)."""
    if dataset.oracle is None:
        raise DataError("dataset has no oracle")
    mu0 = dataset.oracle.mu0(dataset.x)
    tau = dataset.oracle.tau(dataset.x)
    pi = np.clip(dataset.oracle.pi(dataset.x), 0.01, 0.99)
    mu1 = mu0 + tau
    m = pi * mu1 + (1.0 - pi) * mu0
    return NuisanceEstimates(mu0, mu1, pi, m, None, None)


def noise_values(dataset: Dataset) -> np.ndarray:
    """Realized outcome noise eps = y - mu0(x) - a * tau(x) under the oracle."""
    if dataset.oracle is None:
        raise DataError("dataset has no oracle")
    return dataset.y - dataset.oracle.mu0(dataset.x) - dataset.a * dataset.oracle.tau(dataset.x)


class PoDecomposition(NamedTuple):
    lhs: float          # empirical PO-risk under oracle nuisances
    rhs: float          # PEHE + rescaled noise term
    pehe: float
    noise_term: float   # mean (eps / (pi (1-pi)))^2 with eps = (y - mu_a)(a - pi)
    cross_term: float   # mean 2 (tau - tau_hat) eps / (pi (1-pi)); ~0


def verify_po_decomposition(dataset: Dataset, tau_pred) -> PoDecomposition:
    """Both sides of the PO-risk decomposition into tau-MSE + rescaled noise.

    The noise variable is the influence-weighted residual
    eps = (y - mu_a(x)) (a - pi(x)), which makes lhs = pehe + noise + cross
    an exact pointwise identity; the cross term vanishes in expectation.
    """
    nuis = oracle_nuisances(dataset)
    phi = pseudo_outcome(dataset.y, dataset.a, nuis)
    lhs = po_risk(tau_pred, phi)
    w = nuis.pi_hat * (1.0 - nuis.pi_hat)
    eps = noise_values(dataset) * (dataset.a - nuis.pi_hat)
    tau = dataset.oracle.tau(dataset.x)
    mse = float(np.mean((tau - np.asarray(tau_pred)) ** 2))
    noise_term = float(np.mean((eps / w) ** 2))
    cross = float(np.mean(2.0 * (tau - np.asarray(tau_pred)) * eps / w))
    return PoDecomposition(lhs, mse + noise_term, mse, noise_term, cross)


class RDecomposition(NamedTuple):
    lhs: float                # empirical R-risk under oracle nuisances
    rhs_mean_weight: float    # mean pi(1-pi)(tau - tau_hat)^2 + noise variance
    rhs_squared_weight: float  # mean (pi(1-pi))^2 (tau - tau_hat)^2 + noise variance
    noise_term: float


def verify_r_decomposition(dataset: Dataset, tau_pred) -> RDecomposition:
    """Both candidate right-hand sides of the R-risk decomposition.

    The derivation's penultimate line implies the pi(1-pi)-weighted tau-MSE;
    its final display squares the weight.  Both are returned so the test can
    assert against whichever matches empirically.
    """
    nuis = oracle_nuisances(dataset)
    lhs = r_risk(tau_pred, dataset.y, dataset.a, nuis)
    eps = noise_values(dataset)
    tau = dataset.oracle.tau(dataset.x)
    w = nuis.pi_hat * (1.0 - nuis.pi_hat)
    gap2 = (tau - np.asarray(tau_pred)) ** 2
    noise_term = float(np.mean(eps**2))
    return RDecomposition(
        lhs,
        float(np.mean(w * gap2)) + noise_term,
        float(np.mean(w**2 * gap2)) + noise_term,
        noise_term,
    )
