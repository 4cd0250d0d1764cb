"""Command-line interface.

Subcommands: simulate (emit a dataset CSV), fit (DR-learner + risks),
importance (one-shot PermuCATE/LOCO on a dataset file), bench (run an
experiment config), plot (CSV -> figures).

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from .bench import parse_config, run_experiment
from .cate import fit_dr_learner, linear_learner_set, predict_cate, superlearner_set, transport_nuisances
from .dgp import Dataset, DgpSpec, sample
from .errors import ConfigError, DataError, NumericError
from .inference import CrossfitPlan, run_crossfit_importance
from .io import load_dataset, save_dataset
from .learners import stratified_fold_assignment
from .cate import pseudo_outcome
from .risks import po_risk, r_risk
from .rng import stream


def _preset(name: str):
    return superlearner_set() if name == "superlearner" else linear_learner_set()


@click.group()
def cli():
    """Variable importance for CATE models: PermuCATE and LOCO."""


@cli.command()
@click.option("--dgp", type=click.Choice(["ld", "hl", "hp"]), required=True)
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--d", type=int, default=50, show_default=True, help="covariate count (hl/hp)")
@click.option("--d-imp", type=int, default=10, show_default=True)
@click.option("--rho", type=float, default=0.5, show_default=True)
@click.option("--effect-size", type=float, default=0.5, show_default=True)
@click.option("--noise-sd", type=float, default=None, help="default: 3 for ld, 1 otherwise")
@click.option("--treat-quantile", type=float, default=0.1, show_default=True)
@click.option("--seed-coeffs", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def simulate(dgp, n, seed, d, d_imp, rho, effect_size, noise_sd, treat_quantile, seed_coeffs, out):
    """Draw a dataset from one of the simulation scenarios."""
    if noise_sd is None:
        noise_sd = 3.0 if dgp == "ld" else 1.0
    if dgp == "ld":
        spec = DgpSpec(kind="LD", d=6, d_imp=3, rho=rho, noise_sd=noise_sd, seed_coeffs=seed_coeffs)
    else:
        spec = DgpSpec(kind=dgp.upper(), d=d, d_imp=d_imp, rho=rho, effect_size=effect_size,
                       noise_sd=noise_sd, treat_quantile=treat_quantile, seed_coeffs=seed_coeffs)
    dataset = sample(spec, n, seed)
    save_dataset(out, dataset)
    click.echo(f"wrote {dataset.n} x {dataset.d} dataset to {out}")


@cli.command()
@click.option("--data", type=click.Path(dir_okay=False), required=True)
@click.option("--preset", type=click.Choice(["linear", "superlearner"]), default="linear", show_default=True)
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--test-frac", type=float, default=0.2, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def fit(data, preset, folds, test_frac, seed):
    """Fit a cross-fitted DR-learner and report held-out risks (and PEHE)."""
    dataset, tau_oracle = load_dataset(data)
    k = max(2, round(1.0 / test_frac))
    fold = stratified_fold_assignment(dataset.a, k, stream(seed, "cli-fit-split"))
    held = fold == 0
    train = dataset.subset(~held)
    test = dataset.subset(held)
    model, nuis = fit_dr_learner(train, folds, _preset(preset), seed)
    nuis_test = transport_nuisances(nuis, test.x)
    tau_hat = predict_cate(model, test.x)
    phi_test = pseudo_outcome(test.y, test.a, nuis_test)
    click.echo(f"n_train={train.n} n_test={test.n} d={dataset.d}")
    click.echo(f"po_risk={po_risk(tau_hat, phi_test):.6g}")
    click.echo(f"r_risk={r_risk(tau_hat, test.y, test.a, nuis_test):.6g}")
    if tau_oracle is not None:
        gap = tau_hat - tau_oracle[held]
        click.echo(f"pehe={float(np.mean(gap ** 2)):.6g}")


@cli.command()
@click.option("--data", type=click.Path(dir_okay=False), required=True)
@click.option("--method", type=click.Choice(["both", "permucate", "loco"]), default="both", show_default=True)
@click.option("--risk", type=click.Choice(["po_risk", "r_risk"]), default="po_risk", show_default=True)
@click.option("--permutations", type=int, default=50, show_default=True)
@click.option("--outer-folds", type=int, default=5, show_default=True)
@click.option("--inner-folds", type=int, default=5, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--preset", type=click.Choice(["linear", "superlearner"]), default="linear", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def importance(data, method, risk, permutations, outer_folds, inner_folds, alpha, preset, seed):
    """One-shot importance estimation on a dataset file."""
    dataset, _ = load_dataset(data)
    methods = ("permucate", "loco") if method == "both" else (method,)
    plan = CrossfitPlan(outer_folds=outer_folds, inner_folds=inner_folds, n_seeds=1, alpha=alpha)
    table = run_crossfit_importance(
        dataset, plan, _preset(preset), master_seed=seed,
        methods=methods, risks=(risk,), n_permutations=permutations,
    )
    agg = table.aggregates()
    click.echo(agg.to_csv(index=False, float_format="%.6g"), nl=False)


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), required=True)
@click.option("--resume", is_flag=True, help="skip cells already recorded in the manifest")
@click.option("--seed", type=int, default=None, help="override master_seed")
@click.option("--output-dir", type=click.Path(file_okay=False), default=None)
def bench(config_path, resume, seed, output_dir):
    """Run an experiment config and emit deterministic CSV artifacts."""
    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    config = parse_config(path.read_text())
    if seed is not None:
        config.master_seed = seed
    if output_dir is not None:
        config.output_dir = output_dir
    paths = run_experiment(config, resume=resume)
    for name, p in paths.items():
        click.echo(f"{name}: {p}")


@cli.command()
@click.option("--results", type=click.Path(dir_okay=False), required=True, help="result CSV from bench")
@click.option("--out", type=click.Path(file_okay=False), default="figures", show_default=True)
def plot(results, out):
    """Render figures from a result CSV."""
    from .plotting import plot_results

    for p in plot_results(results, out):
        click.echo(f"wrote {p}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 2
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 3
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 4
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.exceptions.Abort:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
