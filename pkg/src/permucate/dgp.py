"""Seeded generators for the three simulation scenarios (LD, HL, HP).

Each sampler returns a `Dataset` carrying full oracle access: the true
CATE, control response and propensity as callables, plus the index sets
of truly important variables.  Randomness is split into documented
streams (covariates / treatment / noise), and coefficient draws for
HL/HP depend only on ``seed_coeffs`` so the same data-generating process
is shared across Monte-Carlo repetitions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import DataError
from .learners import PROPENSITY_CLIP, PolynomialMap, expand_polynomial
from .rng import stream

_KINDS = ("LD", "HL", "HP")


@dataclass(frozen=True)
class DgpSpec:
    kind: str
    d: int = 6
    d_imp: int = 10
    rho: float = 0.5
    effect_size: float = 0.5
    noise_sd: float = 1.0
    treat_quantile: float = 0.1
    degree: int = 3
    seed_coeffs: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if self.kind == "LD" and self.d != 6:
            raise ValueError("LD has exactly 6 covariates")
        if self.kind != "LD" and self.d_imp > self.d:
            raise ValueError("d_imp must not exceed d")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if not 0.0 <= self.effect_size <= 1.0:
            raise ValueError("effect_size must lie in [0, 1]")
        if self.noise_sd <= 0:
            raise ValueError("noise_sd must be positive")
        if not 0.0 <= self.treat_quantile < 1.0:
            raise ValueError("treat_quantile must lie in [0, 1)")
        if self.kind == "HP" and self.degree != 3:
            raise ValueError("HP uses polynomial degree 3")


@dataclass
class OracleFunctions:
    tau: Callable[[np.ndarray], np.ndarray]
    mu0: Callable[[np.ndarray], np.ndarray]
    pi: Callable[[np.ndarray], np.ndarray]
    important_sets: dict
    analytic_importance: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)


@dataclass
class Dataset:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    oracle: Optional[OracleFunctions] = None

    def __post_init__(self):
        if not (len(self.a) == len(self.y) == self.x.shape[0]):
            raise DataError("x, a, y row counts differ")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.a[idx], self.y[idx], self.oracle)


def ld_spec(rho: float = 0.5, noise_sd: float = 3.0, seed_coeffs: int = 0) -> DgpSpec:
    return DgpSpec(kind="LD", d=6, d_imp=3, rho=rho, noise_sd=noise_sd, seed_coeffs=seed_coeffs)


def sample_ld(n: int, seed: int, rho: float = 0.5, noise_sd: float = 3.0) -> Dataset:
    """Low-dimensional benchmark: three correlated pairs, linear links.

    tau(X) = X1 + 2*X2 + X3, mu0(X) = X3 - X6,
    pi(X) = expit(-0.4*X1 + 0.1*X1*X2 + 0.25*X5),
    Y = mu0 + A*tau + Normal(0, noise_sd).

    ``rho`` is the within-pair correlation (0.5 in the benchmark; 0 gives the
    uncorrelated variant used in the variance/diagnostics experiments).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    g_x = stream("ld-x", seed)
    g_a = stream("ld-a", seed)
    g_e = stream("ld-noise", seed)
    z = g_x.standard_normal((n, 6))
    x = z.copy()
    s = np.sqrt(1.0 - rho**2)
    for lead in (0, 2, 4):
        x[:, lead + 1] = rho * z[:, lead] + s * z[:, lead + 1]

    def tau(xm):
        return xm[:, 0] + 2.0 * xm[:, 1] + xm[:, 2]

    def mu0(xm):
        return xm[:, 2] - xm[:, 5]

    def pi(xm):
        return expit(-0.4 * xm[:, 0] + 0.1 * xm[:, 0] * xm[:, 1] + 0.25 * xm[:, 4])

    a = (g_a.random(n) < pi(x)).astype(float)
    y = mu0(x) + a * tau(x) + noise_sd * g_e.standard_normal(n)
    analytic = (1.0 - rho**2) * np.array([1.0, 4.0, 1.0, 0.0, 0.0, 0.0])
    oracle = OracleFunctions(
        tau=tau,
        mu0=mu0,
        pi=pi,
        important_sets={"tau": frozenset({0, 1, 2}), "mu0": frozenset({2, 5}), "pi": frozenset({0, 1, 4})},
        analytic_importance=analytic,
        meta={"noise_sd": noise_sd, "rho": rho},
    )
    return Dataset(x, a, y, oracle)


def _equicorrelated_normal(n, d, rho, rng):
    z = rng.standard_normal((n, d))
    if rho == 0.0:
        return z
    shared = rng.standard_normal((n, 1))
    return np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * z


def _rademacher(rng, size):
    return rng.integers(0, 2, size=size) * 2.0 - 1.0


def _hl_links(spec: DgpSpec):
    rng = stream("hl-coeffs", spec.seed_coeffs, spec.d, spec.d_imp)
    sets, betas = {}, {}
    for name in ("pi", "mu0", "tau"):
        idx = np.sort(rng.choice(spec.d, size=spec.d_imp, replace=False))
        beta = np.zeros(spec.d)
        beta[idx] = _rademacher(rng, spec.d_imp)
        sets[name] = frozenset(int(i) for i in idx)
        betas[name] = beta
    return sets, betas


def sample_hl(spec: DgpSpec, n: int, seed: int) -> Dataset:
    """High-dimensional linear scenario: equicorrelated Gaussians, sparse
    Rademacher loadings on three independently drawn important sets."""
    if spec.kind != "HL":
        raise ValueError("spec.kind must be HL")
    sets, betas = _hl_links(spec)
    g_x = stream("hl-x", seed)
    g_a = stream("hl-a", seed)
    g_e = stream("hl-noise", seed)
    x = _equicorrelated_normal(n, spec.d, spec.rho, g_x)
    e = spec.effect_size

    def tau(xm, _b=betas["tau"]):
        return e * (xm @ _b)

    def mu0(xm, _b=betas["mu0"]):
        return (1.0 - e) * (xm @ _b)

    def pi(xm, _b=betas["pi"]):
        return expit(xm @ _b)

    a = (g_a.random(n) < pi(x)).astype(float)
    y = mu0(x) + a * tau(x) + spec.noise_sd * g_e.standard_normal(n)
    oracle = OracleFunctions(
        tau=tau, mu0=mu0, pi=pi, important_sets=sets,
        meta={"betas": betas, "noise_sd": spec.noise_sd},
    )
    return Dataset(x, a, y, oracle)


def _hp_links(spec: DgpSpec):
    rng = stream("hp-coeffs", spec.seed_coeffs, spec.d, spec.d_imp)
    links = {}
    for name in ("pi", "mu0", "tau"):
        idx = np.sort(rng.choice(spec.d, size=spec.d_imp, replace=False))
        pmap = PolynomialMap(degree=spec.degree, include_interactions=True, input_dim=spec.d_imp)
        coefs = _rademacher(rng, pmap.output_dim)
        links[name] = (idx, pmap, coefs)
    return links


def sample_hp(spec: DgpSpec, n: int, seed: int) -> Dataset:
    """High-dimensional polynomial scenario.

    Link functions are degree-3 polynomial expansions (with interactions)
    restricted to monomials whose every index lies in the relevant important
    set.  Treatment is drawn as Bernoulli(clip(pi(X) - Q_p)) where Q_p is
    the empirical ``treat_quantile`` of the sampled propensities, which
    controls the treated/control balance.
    """
    if spec.kind != "HP":
        raise ValueError("spec.kind must be HP")
    links = _hp_links(spec)
    g_x = stream("hp-x", seed)
    g_a = stream("hp-a", seed)
    g_e = stream("hp-noise", seed)
    x = _equicorrelated_normal(n, spec.d, spec.rho, g_x)
    e = spec.effect_size

    def _poly(xm, name):
        idx, pmap, coefs = links[name]
        return expand_polynomial(xm[:, idx], pmap) @ coefs

    def tau(xm):
        return e * _poly(xm, "tau")

    def mu0(xm):
        return (1.0 - e) * _poly(xm, "mu0")

    def pi(xm):
        return expit(_poly(xm, "pi"))

    p_raw = pi(x)
    q = np.quantile(p_raw, spec.treat_quantile)
    p_shift = np.clip(p_raw - q, PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)
    a = (g_a.random(n) < p_shift).astype(float)
    y = mu0(x) + a * tau(x) + spec.noise_sd * g_e.standard_normal(n)
    oracle = OracleFunctions(
        tau=tau, mu0=mu0, pi=pi,
        important_sets={k: frozenset(int(i) for i in v[0]) for k, v in links.items()},
        meta={"links": links, "noise_sd": spec.noise_sd, "treat_quantile": spec.treat_quantile},
    )
    return Dataset(x, a, y, oracle)


def sample(spec: DgpSpec, n: int, seed: int) -> Dataset:
    """Sample from any scenario via its spec."""
    if spec.kind == "LD":
        return sample_ld(n, seed, rho=spec.rho, noise_sd=spec.noise_sd)
    if spec.kind == "HL":
        return sample_hl(spec, n, seed)
    return sample_hp(spec, n, seed)


def oracle_eval(dataset: Dataset, which: str) -> np.ndarray:
    if dataset.oracle is None:
        raise DataError("dataset has no oracle")
    fn = {"tau": dataset.oracle.tau, "mu0": dataset.oracle.mu0, "pi": dataset.oracle.pi}
    if which not in fn:
        raise ValueError(f"unknown oracle function {which!r}")
    return fn[which](dataset.x)
