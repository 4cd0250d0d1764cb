"""Acceptance suite: twelve statistical and engineering criteria.

Each test prints a single PASS/FAIL line (bypassing capture) and asserts.
Expensive simulation runs are shared through session-scoped fixtures:
the LD benchmark run feeds criteria 1, 3* and 8; the variance-study runs
feed criteria 4 and 5; the high-dimensional power run feeds 7 and 8.
"""


import numpy as np
import pytest
from scipy.stats import spearmanr

from permucate.bench import parse_config, run_experiment
from permucate.cate import linear_learner_set
from permucate.dgp import Dataset, DgpSpec, ld_spec
from permucate.inference import CrossfitPlan, run_crossfit_importance
from permucate.learners import (
    LearnerSpec,
    fit_gbt,
    fit_logistic_cv,
    fit_ridge_cv,
    fit_stacked,
)
from permucate.risks import verify_po_decomposition, verify_r_decomposition
from permucate.rng import stream


_CAPTURE = []


@pytest.fixture(autouse=True)
def _capture_handle(capfd):
    _CAPTURE.append(capfd)
    yield
    _CAPTURE.pop()


def _report(num: int, description: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    line = f"[criterion {num:02d}] {status} - {description}"
    if detail:
        line += f" ({detail})"
    # one PASS/FAIL line per criterion must reach the terminal even without -s
    with _CAPTURE[-1].disabled():
        print(line, flush=True)
    assert ok, line


def _mean_psi(table, method, variable, risk="po_risk"):
    rows = table.rows
    sel = (rows["method"] == method) & (rows["variable"] == variable) & (
        rows["risk_kind"] == risk
    )
    return float(rows.loc[sel, "psi"].mean())


# ---------------------------------------------------------------------------
# Shared simulation runs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def ld_run():
    """LD benchmark: n=5000, linear preset, 10 seeds x 5 folds, both methods."""
    return run_crossfit_importance(
        ld_spec(), CrossfitPlan(), linear_learner_set(), master_seed=0, n=5000
    )


def _linear_design(seed_index: int) -> Dataset:
    """Uncorrelated 5-variable linear CATE with beta = (1, 2, 0, 0, 0)."""
    rng = stream("acceptance-linear", seed_index)
    n = 5000
    x = rng.standard_normal((n, 5))
    tau = x @ np.array([1.0, 2.0, 0.0, 0.0, 0.0])
    a = (rng.random(n) < 0.5).astype(float)
    y = a * tau + rng.standard_normal(n)
    return Dataset(x, a, y)


@pytest.fixture(scope="session")
def linear_design_run():
    return run_crossfit_importance(
        _linear_design, CrossfitPlan(), linear_learner_set(), master_seed=0
    )


@pytest.fixture(scope="session")
def variance_runs():
    """Uncorrelated LD variant with diagnostics at n in {100, 200, 400}."""
    spec = ld_spec(rho=0.0)
    out = {}
    for n in (100, 200, 400):
        out[n] = run_crossfit_importance(
            spec, CrossfitPlan(), linear_learner_set(), master_seed=0, n=n,
            collect_diagnostics=True,
        )
    return out


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def test_criterion_01_ld_convergence(ld_run):
    means = {m: [_mean_psi(ld_run, m, v) for v in range(1, 7)]
             for m in ("permucate", "loco")}
    targets = (0.75, 3.0, 0.75)
    ok = True
    for m in ("permucate", "loco"):
        for j in range(3):
            ok &= abs(means[m][j] - targets[j]) <= 0.2 * targets[j]
        for j in range(3, 6):
            ok &= abs(means[m][j]) < 0.1
    detail = ", ".join(
        f"{m}: ({means[m][0]:.2f}, {means[m][1]:.2f}, {means[m][2]:.2f})"
        for m in means
    )
    _report(1, "LD importance converges to (0.75, 3, 0.75), nulls < 0.1", ok, detail)


def test_criterion_02_linear_agreement(linear_design_run):
    psi = [_mean_psi(linear_design_run, "permucate", v) for v in range(1, 6)]
    ok = (abs(psi[0] - 1.0) <= 0.15 and abs(psi[1] - 4.0) <= 0.6
          and all(abs(p) < 0.05 for p in psi[2:]))
    _report(2, "PermuCATE recovers squared coefficients (1, 4, 0, 0, 0)", ok,
            "psi = " + ", ".join(f"{p:.3f}" for p in psi))


def test_criterion_03_cpi_loco_scaling(linear_design_run):
    ok = True
    details = []
    for v in (1, 2):
        cpi_unrescaled = 2.0 * _mean_psi(linear_design_run, "permucate", v)
        loco_twice = 2.0 * _mean_psi(linear_design_run, "loco", v)
        ratio = cpi_unrescaled / loco_twice
        ok &= abs(ratio - 1.0) <= 0.15
        details.append(f"X{v}: ratio {ratio:.3f}")
    _report(3, "unrescaled CPI equals 2x LOCO within 15%", ok, "; ".join(details))


def test_criterion_04_variance_ordering(variance_runs):
    ok = True
    details = []
    for n, table in variance_runs.items():
        rows = table.rows
        var2 = rows[rows["variable"] == 2]
        wins = 0
        for seed in sorted(set(var2["seed"])):
            sg = var2[var2["seed"] == seed]
            v_loco = sg.loc[sg["method"] == "loco", "psi"].var(ddof=1)
            v_cpi = sg.loc[sg["method"] == "permucate", "psi"].var(ddof=1)
            wins += int(v_loco > v_cpi)
        ok &= wins >= 8
        details.append(f"n={n}: {wins}/10")
    _report(4, "LOCO fold-variance exceeds PermuCATE in >= 8/10 seeds", ok,
            "; ".join(details))


def test_criterion_05_error_term_gap(variance_runs):
    rows200 = variance_runs[200].rows
    loco200 = rows200[rows200["method"] == "loco"]
    med_db = float(loco200["delta_beta"].median())
    med_nu = float(loco200["nu_var"].median())
    gap_ok = med_db >= 10.0 * med_nu

    big = run_crossfit_importance(
        ld_spec(rho=0.0), CrossfitPlan(), linear_learner_set(), master_seed=0,
        n=20_000, methods=("loco",), collect_diagnostics=True,
    )
    loco_big = big.rows[big.rows["method"] == "loco"]
    med_db_big = float(loco_big["delta_beta"].median())
    med_nu_big = float(loco_big["nu_var"].median())
    small_ok = med_db_big < 1e-3 and med_nu_big < 1e-3
    _report(
        5, "refit coefficient shift >> conditional-mean variance; both vanish",
        gap_ok and small_ok,
        f"n=200: {med_db:.2e} vs {med_nu:.2e}; n=20000: {med_db_big:.2e}, {med_nu_big:.2e}",
    )


def test_criterion_06_dimension_scaling():
    # The coefficient draws change with d, so single-draw comparisons confound
    # the dimension trend with the draw; average over several draws. Effect
    # size 1.0 keeps the cross-validated final stage out of the regime where
    # maximal shrinkage is optimal at d=80 and the refit error collapses.
    means_db, means_nu = [], []
    for d in (20, 40, 80):
        per_draw_db, per_draw_nu = [], []
        for seed_coeffs in range(5):
            spec = DgpSpec(kind="HL", d=d, d_imp=10, rho=0.5, effect_size=1.0,
                           seed_coeffs=seed_coeffs)
            table = run_crossfit_importance(
                spec, CrossfitPlan(n_seeds=2), linear_learner_set(),
                master_seed=seed_coeffs, n=500, methods=("loco",),
                collect_diagnostics=True,
            )
            loco_rows = table.rows[table.rows["method"] == "loco"]
            per_draw_db.append(float(loco_rows["delta_beta"].mean()))
            per_draw_nu.append(float(loco_rows["nu_var"].mean()))
        means_db.append(float(np.mean(per_draw_db)))
        means_nu.append(float(np.mean(per_draw_nu)))
    db_ok = means_db[0] < means_db[1] < means_db[2]
    nu_ok = max(means_nu) < 2.0 * min(means_nu)
    _report(
        6, "coefficient-shift term grows with dimension; nu-variance stays flat",
        db_ok and nu_ok,
        f"delta_beta: {means_db[0]:.3g} -> {means_db[1]:.3g} -> {means_db[2]:.3g}; "
        f"nu_var range x{max(means_nu) / min(means_nu):.2f}",
    )


@pytest.fixture(scope="session")
def hl_power_tables():
    from permucate.dgp import sample_hl

    spec = DgpSpec(kind="HL", d=50, d_imp=10, rho=0.5, effect_size=0.5)
    truth = {v + 1 for v in sample_hl(spec, 5, 0).oracle.important_sets["tau"]}
    tables = {
        n: run_crossfit_importance(
            spec, CrossfitPlan(), linear_learner_set(), master_seed=0, n=n
        )
        for n in (300, 600, 1200)
    }
    return tables, truth


def test_criterion_07_power_ordering(hl_power_tables):
    tables, truth = hl_power_tables
    ok_all, strict_any = True, False
    details = []
    for n, table in tables.items():
        dec = table.per_seed_decisions()
        rates = {}
        for method in ("permucate", "loco"):
            sel = dec[(dec["method"] == method) & dec["variable"].isin(truth)]
            rates[method] = float(sel["decision"].mean())
        ok_all &= rates["permucate"] >= rates["loco"]
        strict_any |= rates["permucate"] > rates["loco"]
        details.append(f"n={n}: cpi {rates['permucate']:.2f} vs loco {rates['loco']:.2f}")
    _report(7, "PermuCATE TP rate >= LOCO at every n, strictly better somewhere",
            ok_all and strict_any, "; ".join(details))


def test_criterion_08_type1_control(ld_run, hl_power_tables):
    tables, truth = hl_power_tables
    fps = {"permucate": [], "loco": []}
    ld_dec = ld_run.per_seed_decisions()
    for method in fps:
        sel = ld_dec[(ld_dec["method"] == method) & ld_dec["variable"].isin({4, 5, 6})]
        fps[method].extend(sel["decision"].tolist())
    for table in tables.values():
        dec = table.per_seed_decisions()
        for method in fps:
            sel = dec[(dec["method"] == method) & ~dec["variable"].isin(truth)]
            fps[method].extend(sel["decision"].tolist())
    ok = True
    details = []
    for method, decisions in fps.items():
        rate = float(np.mean(decisions))
        bound = 0.05 + 3.0 * np.sqrt(0.05 * 0.95 / len(decisions))
        ok &= rate <= bound
        details.append(f"{method}: {rate:.3f} <= {bound:.3f}")
    _report(8, "pooled null false-positive rate within 3 SE of alpha", ok,
            "; ".join(details))


def test_criterion_09_risk_equivalence():
    table = run_crossfit_importance(
        ld_spec(), CrossfitPlan(n_seeds=5), linear_learner_set(), master_seed=0,
        n=2000, risks=("po_risk", "r_risk"),
    )
    ok = True
    details = []
    for method in ("permucate", "loco"):
        vec = {
            risk: np.array([_mean_psi(table, method, v, risk) for v in range(1, 7)])
            for risk in ("po_risk", "r_risk")
        }
        rho = float(spearmanr(vec["po_risk"], vec["r_risk"])[0])
        top_po = set(np.argsort(vec["po_risk"])[-3:])
        top_r = set(np.argsort(vec["r_risk"])[-3:])
        ok &= rho >= 0.9 and top_po == top_r
        details.append(f"{method}: rho {rho:.2f}, top3 {'==' if top_po == top_r else '!='}")
    _report(9, "po_risk and r_risk give the same importance ranking", ok,
            "; ".join(details))


def test_criterion_10_decomposition_identities():
    from permucate.dgp import sample_ld

    data = sample_ld(50_000, seed=0)
    tau_pred = np.zeros(data.n)
    po = verify_po_decomposition(data, tau_pred)
    po_ok = abs(po.lhs - po.rhs) <= 0.02 * po.rhs
    r = verify_r_decomposition(data, tau_pred)
    r_ok = abs(r.lhs - r.rhs_mean_weight) <= 0.02 * r.rhs_mean_weight
    _report(10, "PO- and R-risk decompositions hold within 2% at n=50000",
            po_ok and r_ok,
            f"po gap {abs(po.lhs - po.rhs) / po.rhs:.3%}, "
            f"r gap {abs(r.lhs - r.rhs_mean_weight) / r.rhs_mean_weight:.3%}")


def test_criterion_11_learner_oracles():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((80, 4))
    y = x @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.1 * rng.standard_normal(80)
    ridge = fit_ridge_cv(x, y, LearnerSpec("ridge_cv", penalty_grid=(2.0,)), seed=0)
    xc = x - x.mean(axis=0)
    beta_ref = np.linalg.solve(xc.T @ xc + 2.0 * np.eye(4), xc.T @ (y - y.mean()))
    ridge_ok = bool(np.max(np.abs(ridge.coefficients - beta_ref)) < 1e-8)

    from scipy.special import expit

    a = (rng.random(300) < expit(rng.standard_normal(300))).astype(float)
    xl = rng.standard_normal((300, 3))
    logit = fit_logistic_cv(xl, a, LearnerSpec("logistic_cv"), seed=0)
    p = expit(xl @ logit.coefficients + logit.intercept)
    grad = xl.T @ (a - p) - logit.selected_penalty * logit.coefficients
    logit_ok = bool(np.max(np.abs(grad)) < 1e-6)

    yg = np.sin(x[:, 0]) + x[:, 1]
    gbt = fit_gbt(x, yg, LearnerSpec("gbt_regress", gbt_n_rounds=50), "squared", seed=0)
    gbt_ok = bool(np.all(np.diff(gbt.train_loss_path) <= 1e-12))

    xs = rng.standard_normal((300, 1))
    ys = 3.0 * xs[:, 0]
    stacked = fit_stacked(
        xs, ys,
        [LearnerSpec("ridge_cv"), LearnerSpec("gbt_regress", gbt_n_rounds=1, gbt_max_leaves=2)],
        seed=0,
    )
    stack_ok = bool(stacked.weights[0] >= 0.95)
    _report(11, "learner unit oracles (ridge/logistic/GBT/stacked)",
            ridge_ok and logit_ok and gbt_ok and stack_ok,
            f"ridge {ridge_ok}, logistic {logit_ok}, gbt {gbt_ok}, stacked {stack_ok}")


def test_criterion_12_determinism(tmp_path, monkeypatch):
    base = """
    experiment = fig1_ld_power
    n_grid = 150, 250
    n_seeds = 2
    outer_folds = 3
    inner_folds = 2
    n_permutations = 5
    """
    blobs = {}
    for workers in ("1", "8"):
        monkeypatch.setenv("PERMUCATE_WORKERS", workers)
        out = tmp_path / f"w{workers}"
        config = parse_config(base + f"output_dir = {out}\n")
        paths = run_experiment(config)
        blobs[workers] = (paths["results"].read_bytes(), paths["summary"].read_bytes())
    ok = blobs["1"] == blobs["8"]
    _report(12, "bench output byte-identical across worker counts", ok)
