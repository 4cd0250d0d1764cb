"""Nested cross-fitting orchestration, Wald statistics and power accounting.

Per random sample ("seed"): an outer stratified rotation where each fold
serves once as the held-out importance-evaluation split; per outer fold,
a DR-learner is cross-fitted on the remaining data and both importance
methods are evaluated on the held-out fold.  Wald statistics pool the
fold-by-seed importance values; p-values are one-sided upper-tail normal.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
import pandas as pd
from scipy.stats import norm

from .cate import (
    LearnerSet,
    fit_dr_learner,
    transport_nuisances,
)
from .dgp import Dataset, DgpSpec, sample
from .errors import DataError
from .importance import (
    fit_conditional_models,
    linear_diagnostics,
    loco,
    permucate,
)
from .learners import stratified_fold_assignment
from .rng import derive_seed, stream

_Z_CAP = 1e6


@dataclass(frozen=True)
class CrossfitPlan:
    outer_frac_heldout: float = 0.2
    outer_folds: int = 5
    inner_folds: int = 5
    n_seeds: int = 10
    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.outer_frac_heldout < 1.0:
            raise ValueError("outer_frac_heldout must lie in (0, 1)")
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ValueError("fold counts must be >= 2")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


def wald_statistic(psis) -> tuple[float, float]:
    """z = mean/std (ddof=1) of the pooled importance values; one-sided p."""
    psis = np.asarray(psis, dtype=float)
    if len(psis) < 2:
        raise ValueError("need at least 2 values for a Wald statistic")
    mean = psis.mean()
    std = psis.std(ddof=1)
    if std < 1e-12:
        z = float(np.sign(mean) * _Z_CAP)
    else:
        z = float(mean / std)
    return z, float(norm.sf(z))


DataSource = Union[Dataset, DgpSpec, Callable[[int], Dataset]]


def _materialize(source: DataSource, seed_index: int, master_seed: int, n: Optional[int]) -> Dataset:
    if isinstance(source, Dataset):
        return source
    if isinstance(source, DgpSpec):
        if n is None:
            raise ValueError("n is required when sampling from a DgpSpec")
        return sample(source, n, derive_seed(master_seed, "data", seed_index, n))
    return source(seed_index)


def run_seed(
    source: DataSource,
    plan: CrossfitPlan,
    specs: LearnerSet,
    master_seed: int,
    seed_index: int,
    methods=("permucate", "loco"),
    risks=("po_risk",),
    n: Optional[int] = None,
    n_permutations: int = 50,
    collect_diagnostics: bool = False,
) -> list[dict]:
    """All importance rows for one random sample (one seed)."""
    data = _materialize(source, seed_index, master_seed, n)
    fold = stratified_fold_assignment(
        data.a, plan.outer_folds, stream(master_seed, "outer", seed_index)
    )
    per_arm = min(int(np.sum(data.a == 1)), int(np.sum(data.a == 0)))
    if per_arm < 2 * plan.inner_folds:
        raise DataError("fewer than 2*inner_folds samples per arm")
    rows: list[dict] = []
    for f in range(plan.outer_folds):
        held = fold == f
        train = data.subset(~held)
        test = data.subset(held)
        fit_seed = derive_seed(master_seed, "fit", seed_index, f)
        model, nuis = fit_dr_learner(train, plan.inner_folds, specs, fit_seed)
        nuis_test = transport_nuisances(nuis, test.x)
        cond = fit_conditional_models(
            train.x, specs.conditional, derive_seed(master_seed, "cond", seed_index, f)
        )
        for risk in risks:
            if "permucate" in methods:
                for est in permucate(
                    model, nuis_test, test, cond, n_permutations, risk,
                    seed=derive_seed(master_seed, "perm", seed_index, f),
                ):
                    rows.append(
                        dict(method="permucate", variable=est.j + 1, seed=seed_index,
                             fold=f, risk_kind=risk, psi=est.psi, risk_full=est.risk_full,
                             delta_beta=np.nan, nu_var=np.nan)
                    )
            if "loco" in methods:
                ests = loco(
                    model, nuis, nuis_test, train, test, specs.final, risk,
                    seed=derive_seed(master_seed, "loco", seed_index, f),
                )
                diag = {}
                if collect_diagnostics:
                    diag = {
                        dg.j: dg
                        for dg in linear_diagnostics(
                            model.final_regressor,
                            [e.reduced_model for e in ests],
                            cond,
                            test.x,
                        )
                    }
                for est in ests:
                    dg = diag.get(est.j)
                    rows.append(
                        dict(method="loco", variable=est.j + 1, seed=seed_index,
                             fold=f, risk_kind=risk, psi=est.psi, risk_full=est.risk_full,
                             delta_beta=dg.delta_beta_norm_sq if dg else np.nan,
                             nu_var=dg.nu_variance if dg else np.nan)
                    )
    return rows


@dataclass
class ImportanceTable:
    rows: pd.DataFrame
    alpha: float

    _KEY = ["method", "variable", "risk_kind"]

    def _group_key(self):
        extra = [c for c in ("d", "n") if c in self.rows.columns]
        return extra + self._KEY

    def aggregates(self) -> pd.DataFrame:
        """Pooled fold-by-seed Wald statistics per (method, variable)."""
        recs = []
        for key, grp in self.rows.groupby(self._group_key(), sort=True):
            z, p = wald_statistic(grp["psi"].to_numpy())
            rec = dict(zip(self._group_key(), key))
            rec.update(
                mean_psi=float(grp["psi"].mean()),
                std_psi=float(grp["psi"].std(ddof=1)),
                wald=z,
                p_value=p,
                decision=bool(p < self.alpha),
            )
            recs.append(rec)
        return pd.DataFrame.from_records(recs)

    def per_seed_decisions(self) -> pd.DataFrame:
        """Per-seed Wald decisions (across folds within each seed)."""
        recs = []
        for key, grp in self.rows.groupby(self._group_key() + ["seed"], sort=True):
            z, p = wald_statistic(grp["psi"].to_numpy())
            rec = dict(zip(self._group_key() + ["seed"], key))
            rec.update(wald=z, p_value=p, decision=bool(p < self.alpha))
            recs.append(rec)
        return pd.DataFrame.from_records(recs)


def run_crossfit_importance(
    source: DataSource,
    plan: CrossfitPlan,
    specs: LearnerSet,
    master_seed: int = 0,
    methods=("permucate", "loco"),
    risks=("po_risk",),
    n: Optional[int] = None,
    n_permutations: int = 50,
    collect_diagnostics: bool = False,
    seed_indices=None,
) -> ImportanceTable:
    if seed_indices is None:
        seed_indices = range(plan.n_seeds)
    rows: list[dict] = []
    for s in seed_indices:
        rows.extend(
            run_seed(
                source, plan, specs, master_seed, s,
                methods=methods, risks=risks, n=n,
                n_permutations=n_permutations,
                collect_diagnostics=collect_diagnostics,
            )
        )
    return ImportanceTable(pd.DataFrame.from_records(rows), plan.alpha)


class PowerSummary(NamedTuple):
    tp_rate: dict       # per method
    fn_rate: dict       # per method
    type1_rate: dict    # per method
    min_detect_n: dict  # (method, variable) -> smallest n with majority detection


def power_accounting(table: ImportanceTable, truth) -> PowerSummary:
    """True-positive / false-negative / type-1 rates from per-seed decisions.

    `truth` is the set of truly important variables (1-based, matching the
    table's `variable` column).  Minimum detection n is the smallest n in the
    sweep where more than half the seeds flag the variable.
    """
    truth = {int(v) for v in truth}
    if not len(table.rows):
        raise DataError("empty importance table")
    dec = table.per_seed_decisions()
    tp, fn, t1, min_n = {}, {}, {}, {}
    for method, grp in dec.groupby("method"):
        imp = grp[grp["variable"].isin(truth)]
        nul = grp[~grp["variable"].isin(truth)]
        tp[method] = float(imp["decision"].mean()) if len(imp) else float("nan")
        fn[method] = 1.0 - tp[method] if len(imp) else float("nan")
        t1[method] = float(nul["decision"].mean()) if len(nul) else float("nan")
        if "n" in grp.columns:
            for var, vg in imp.groupby("variable"):
                detected = None
                for nval, ng in sorted(vg.groupby("n"), key=lambda t: t[0]):
                    if ng["decision"].mean() > 0.5:
                        detected = int(nval)
                        break
                min_n[(method, int(var))] = detected
    return PowerSummary(tp, fn, t1, min_n)
