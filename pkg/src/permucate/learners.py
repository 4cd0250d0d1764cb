"""Self-contained supervised learners behind a uniform fit/predict surface.

Everything downstream (nuisance fits, final CATE stage, covariate
predictors) goes through `fit_regressor` / `fit_classifier` with a
`LearnerSpec`.  Implemented here:

* ridge regression with internal k-fold CV over a penalty grid,
* L2-penalized logistic regression fitted by IRLS, penalty chosen by CV,
* gradient-boosted trees with leaf-limited best-first growth and exact
  split search,
* a stacked ensemble whose combiner is non-negative least squares on
  out-of-fold predictions.

All fits are deterministic given (inputs, seed); fitted models are
immutable and safe to share across threads.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import (
    DegenerateInputError,
    DegenerateLabelsError,
    DimensionError,
)
from .rng import derive_seed, stream

DEFAULT_PENALTY_GRID = tuple(float(v) for v in np.logspace(-3.0, 3.0, 10))

#: predicted probabilities are clipped to [PROPENSITY_CLIP, 1 - PROPENSITY_CLIP]
PROPENSITY_CLIP = 0.01

_VALID_KINDS = ("ridge_cv", "logistic_cv", "gbt_regress", "gbt_classify", "stacked")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    penalty_grid: tuple = DEFAULT_PENALTY_GRID
    cv_folds: int = 5
    gbt_learning_rate: float = 0.1
    gbt_max_leaves: int = 10
    gbt_n_rounds: int = 100
    base: tuple = ()  # base specs, stacked kind only

    def __post_init__(self):
        if self.kind not in _VALID_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        grid = tuple(float(v) for v in self.penalty_grid)
        if not grid:
            raise ValueError("penalty_grid must be non-empty")
        if any(v <= 0 for v in grid):
            raise ValueError("penalty_grid entries must be strictly positive")
        if list(grid) != sorted(grid):
            raise ValueError("penalty_grid must be sorted ascending")
        object.__setattr__(self, "penalty_grid", grid)
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be >= 2")
        if self.gbt_learning_rate <= 0:
            raise ValueError("gbt_learning_rate must be positive")
        if self.gbt_max_leaves < 2:
            raise ValueError("gbt_max_leaves must be >= 2")
        if self.gbt_n_rounds < 1:
            raise ValueError("gbt_n_rounds must be >= 1")


@dataclass(frozen=True)
class PolynomialMap:
    degree: int
    include_interactions: bool
    input_dim: int
    output_dim: int = field(init=False)

    def __post_init__(self):
        if self.degree < 1 or self.input_dim < 1:
            raise ValueError("degree and input_dim must be positive")
        object.__setattr__(
            self, "output_dim", len(monomial_exponents(self))
        )


def monomial_exponents(pmap: PolynomialMap) -> list[tuple]:
    """Index tuples (i <= j <= ...) of all monomials, constant excluded.

    Ordering is by total degree, then lexicographic on the index tuple.
    """
    out = []
    for deg in range(1, pmap.degree + 1):
        for combo in itertools.combinations_with_replacement(range(pmap.input_dim), deg):
            if not pmap.include_interactions and len(set(combo)) > 1:
                continue
            out.append(combo)
    return out


def expand_polynomial(x, pmap: PolynomialMap) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[1] != pmap.input_dim:
        raise DimensionError(
            f"expected {pmap.input_dim} input columns, got {x.shape[1]}"
        )
    cols = [np.prod(x[:, list(combo)], axis=1) for combo in monomial_exponents(pmap)]
    return np.column_stack(cols)


def as_matrix(x) -> np.ndarray:
    """Validate and coerce a design matrix (1-d input becomes one column)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-d design matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DimensionError("design matrix contains non-finite entries")
    return x


def _check_lengths(x, y):
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != x.shape[0]:
        raise DimensionError(f"{x.shape[0]} rows but {len(y)} targets")
    return y


def _check_predict_dim(n_features, x):
    if x.shape[1] != n_features:
        raise DimensionError(
            f"model expects {n_features} columns, got {x.shape[1]}"
        )


def kfold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled k-fold partition; fold sizes differ by at most one."""
    perm = rng.permutation(n)
    return [np.sort(perm[i::k]) for i in range(k)]


def stratified_fold_assignment(a, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold labels balanced within each class of the binary vector `a`.

    Shuffled class-1 indices followed by shuffled class-0 indices are dealt
    round-robin, so overall fold sizes and per-class fold counts each differ
    by at most one.
    """
    a = np.asarray(a)
    order = np.concatenate(
        [rng.permutation(np.flatnonzero(a == 1)), rng.permutation(np.flatnonzero(a == 0))]
    )
    fold = np.empty(len(a), dtype=int)
    fold[order] = np.arange(len(a)) % k
    return fold


# ---------------------------------------------------------------------------
# Ridge regression with CV penalty selection
# ---------------------------------------------------------------------------


@dataclass
class RidgeModel:
    spec: LearnerSpec
    coefficients: np.ndarray
    intercept: float
    selected_penalty: float
    cv_mse: np.ndarray  # mean CV error per grid member

    @property
    def n_features(self):
        return len(self.coefficients)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return x @ self.coefficients + self.intercept


def _ridge_solve(xc, yc, penalties):
    """Coefficients for centered data at each penalty, one linear solve each."""
    d = xc.shape[1]
    g = xc.T @ xc
    b = xc.T @ yc
    eye = np.eye(d)
    return [np.linalg.solve(g + lam * eye, b) for lam in penalties]


def fit_ridge_cv(x, y, spec: LearnerSpec, seed: int) -> RidgeModel:
    x = as_matrix(x)
    y = _check_lengths(x, y)
    if spec.kind != "ridge_cv":
        raise ValueError(f"spec kind {spec.kind!r} is not ridge_cv")
    n = len(y)
    grid = spec.penalty_grid
    if len(grid) == 1 or n < 3:
        errs = np.zeros(len(grid))
    else:
        k = min(spec.cv_folds, n)
        folds = kfold_indices(n, k, stream(seed, "ridge-cv"))
        errs = np.zeros(len(grid))
        mask = np.ones(n, dtype=bool)
        for val in folds:
            mask[:] = True
            mask[val] = False
            xt, yt = x[mask], y[mask]
            xm, ym = xt.mean(axis=0), yt.mean()
            betas = _ridge_solve(xt - xm, yt - ym, grid)
            for i, beta in enumerate(betas):
                pred = (x[val] - xm) @ beta + ym
                errs[i] += np.sum((pred - y[val]) ** 2)
        errs /= n
    sel = int(np.argmin(errs))
    xm, ym = x.mean(axis=0), y.mean()
    beta = _ridge_solve(x - xm, y - ym, [grid[sel]])[0]
    intercept = float(ym - xm @ beta)
    return RidgeModel(spec, beta, intercept, grid[sel], errs)


def predict_regressor(model, x) -> np.ndarray:
    x = as_matrix(x)
    _check_predict_dim(model.n_features, x)
    return model.predict(x)


# ---------------------------------------------------------------------------
# Logistic regression fitted by IRLS
# ---------------------------------------------------------------------------

_IRLS_TOL = 1e-8
_IRLS_MAX_ITER = 100


@dataclass
class LogisticModel:
    spec: LearnerSpec
    coefficients: np.ndarray
    intercept: float
    selected_penalty: float

    @property
    def n_features(self):
        return len(self.coefficients)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        return x @ self.coefficients + self.intercept

    def predict_proba_raw(self, x: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(x))


def _penalized_nll(xa, a, pen, beta):
    z = xa @ beta
    # log(1 + e^z) - a z, numerically stable
    return float(np.sum(np.logaddexp(0.0, z) - a * z) + 0.5 * np.sum(pen * beta**2))


def _irls(xa, a, pen):
    """Newton/IRLS for the L2-penalized logistic log-likelihood."""
    beta = np.zeros(xa.shape[1])
    nll = _penalized_nll(xa, a, pen, beta)
    for _ in range(_IRLS_MAX_ITER):
        p = expit(xa @ beta)
        grad = xa.T @ (a - p) - pen * beta
        w = np.maximum(p * (1.0 - p), 1e-10)
        h = (xa * w[:, None]).T @ xa + np.diag(pen)
        step = np.linalg.solve(h, grad)
        t = 1.0
        while t > 1e-6:
            cand = beta + t * step
            cand_nll = _penalized_nll(xa, a, pen, cand)
            if cand_nll <= nll + 1e-12:
                break
            t *= 0.5
        beta = beta + t * step
        nll = _penalized_nll(xa, a, pen, beta)
        if np.max(np.abs(t * step)) < _IRLS_TOL:
            break
    return beta


def fit_logistic_cv(x, a, spec: LearnerSpec, seed: int) -> LogisticModel:
    x = as_matrix(x)
    a = _check_lengths(x, a)
    if spec.kind != "logistic_cv":
        raise ValueError(f"spec kind {spec.kind!r} is not logistic_cv")
    classes = np.unique(a)
    if len(classes) < 2:
        raise DegenerateLabelsError("both classes must be present")
    n, d = x.shape
    xa = np.column_stack([np.ones(n), x])
    grid = spec.penalty_grid
    losses = np.zeros(len(grid))
    if len(grid) > 1:
        k = min(spec.cv_folds, int(np.sum(a == 1)), int(np.sum(a == 0)))
        k = max(k, 2)
        fold = stratified_fold_assignment(a, k, stream(seed, "logistic-cv"))
        for f in range(k):
            val = fold == f
            if np.all(val) or not np.any(val):
                continue
            for i, lam in enumerate(grid):
                pen = np.concatenate([[0.0], np.full(d, lam)])  # intercept unpenalized
                beta = _irls(xa[~val], a[~val], pen)
                p = np.clip(expit(xa[val] @ beta), 1e-12, 1 - 1e-12)
                losses[i] -= np.sum(a[val] * np.log(p) + (1 - a[val]) * np.log(1 - p))
        losses /= n
    sel = int(np.argmin(losses))
    pen = np.concatenate([[0.0], np.full(d, grid[sel])])
    beta = _irls(xa, a, pen)
    return LogisticModel(spec, beta[1:], float(beta[0]), grid[sel])


def predict_proba(model, x) -> np.ndarray:
    x = as_matrix(x)
    _check_predict_dim(model.n_features, x)
    return np.clip(model.predict_proba_raw(x), PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP)


# ---------------------------------------------------------------------------
# Gradient-boosted trees
# ---------------------------------------------------------------------------


@dataclass
class _Tree:
    feature: list
    threshold: list
    left: list
    right: list
    value: list

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0])
        stack = [(0, np.arange(x.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = self.value[node]
                continue
            go_left = x[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out


_MIN_GAIN = 1e-12


def _best_split(xcol, g, h):
    """Exact search over midpoints of sorted unique values.

    Returns (gain, threshold) or None when the column is constant.
    """
    order = np.argsort(xcol, kind="stable")
    xs = xcol[order]
    cg = np.cumsum(g[order])
    ch = np.cumsum(h[order])
    valid = xs[:-1] < xs[1:]
    if not np.any(valid):
        return None
    total = cg[-1] ** 2 / ch[-1]
    gl, hl = cg[:-1][valid], ch[:-1][valid]
    gr, hr = cg[-1] - gl, ch[-1] - hl
    gains = gl**2 / hl + gr**2 / hr - total
    best = int(np.argmax(gains))
    cut = np.flatnonzero(valid)[best]
    return float(gains[best]), float(0.5 * (xs[cut] + xs[cut + 1]))


def _node_best(x, g, h, idx):
    best = None
    for j in range(x.shape[1]):
        found = _best_split(x[idx, j], g[idx], h[idx])
        if found is None:
            continue
        gain, thr = found
        if best is None or gain > best[0] + _MIN_GAIN:
            best = (gain, j, thr)
    return best


def _fit_tree(x, g, h, max_leaves) -> _Tree:
    """Best-first growth: repeatedly split the leaf with the largest gain."""
    tree = _Tree([-1], [np.nan], [-1], [-1], [float(g.sum() / h.sum())])
    all_idx = np.arange(x.shape[0])
    heap = []
    counter = itertools.count()
    cand = _node_best(x, g, h, all_idx)
    if cand is not None and cand[0] > _MIN_GAIN:
        heapq.heappush(heap, (-cand[0], next(counter), 0, cand[1], cand[2], all_idx))
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, _, node, j, thr, idx = heapq.heappop(heap)
        go_left = x[idx, j] <= thr
        for side, side_idx in enumerate((idx[go_left], idx[~go_left])):
            child = len(tree.feature)
            tree.feature.append(-1)
            tree.threshold.append(np.nan)
            tree.left.append(-1)
            tree.right.append(-1)
            tree.value.append(float(g[side_idx].sum() / h[side_idx].sum()))
            if side == 0:
                tree.left[node] = child
            else:
                tree.right[node] = child
            cand = _node_best(x, g, h, side_idx)
            if cand is not None and cand[0] > _MIN_GAIN:
                heapq.heappush(
                    heap, (-cand[0], next(counter), child, cand[1], cand[2], side_idx)
                )
        tree.feature[node] = j
        tree.threshold[node] = thr
        n_leaves += 1
    return tree


@dataclass
class GbtModel:
    spec: LearnerSpec
    loss: str
    init_value: float
    trees: list
    train_loss_path: np.ndarray
    n_features: int

    def raw_score(self, x: np.ndarray) -> np.ndarray:
        score = np.full(x.shape[0], self.init_value)
        for tree in self.trees:
            score += self.spec.gbt_learning_rate * tree.predict(x)
        return score

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.raw_score(x)


@dataclass
class GbtClassifier:
    spec: LearnerSpec
    booster: GbtModel

    @property
    def n_features(self):
        return self.booster.n_features

    def predict_proba_raw(self, x: np.ndarray) -> np.ndarray:
        return expit(self.booster.raw_score(x))


def fit_gbt(x, target, spec: LearnerSpec, loss: str, seed: int):
    x = as_matrix(x)
    y = _check_lengths(x, target)
    if loss not in ("squared", "logistic"):
        raise ValueError(f"unknown loss {loss!r}")
    if x.shape[0] < 2 or np.all(np.all(x == x[0], axis=0)):
        raise DegenerateInputError("need at least 2 distinct samples")
    n = len(y)
    if loss == "squared":
        f0 = float(y.mean())
    else:
        if len(np.unique(y)) < 2:
            raise DegenerateLabelsError("both classes must be present")
        pbar = min(max(y.mean(), 1e-12), 1 - 1e-12)
        f0 = float(math.log(pbar / (1 - pbar)))
    score = np.full(n, f0)
    trees = []
    loss_path = []
    for _ in range(spec.gbt_n_rounds):
        if loss == "squared":
            g = y - score
            h = np.ones(n)
        else:
            p = expit(score)
            g = y - p
            h = np.maximum(p * (1.0 - p), 1e-6)
        tree = _fit_tree(x, g, h, spec.gbt_max_leaves)
        trees.append(tree)
        score = score + spec.gbt_learning_rate * tree.predict(x)
        if loss == "squared":
            loss_path.append(float(np.mean((y - score) ** 2)))
        else:
            loss_path.append(float(np.mean(np.logaddexp(0.0, score) - y * score)))
    booster = GbtModel(spec, loss, f0, trees, np.asarray(loss_path), x.shape[1])
    if loss == "logistic":
        return GbtClassifier(spec, booster)
    return booster


# ---------------------------------------------------------------------------
# Stacked ensemble ("super-learner")
# ---------------------------------------------------------------------------

_NNLS_TOL = 1e-8


def nnls_coordinate_descent(z, y, tol=_NNLS_TOL, max_iter=10_000) -> np.ndarray:
    """min_w ||z w - y||^2 s.t. w >= 0, by projected coordinate descent."""
    a = z.T @ z
    b = z.T @ y
    w = np.zeros(z.shape[1])
    for _ in range(max_iter):
        delta = 0.0
        for j in range(len(w)):
            if a[j, j] <= 0:
                continue
            new = max(0.0, (b[j] - a[j] @ w + a[j, j] * w[j]) / a[j, j])
            delta = max(delta, abs(new - w[j]))
            w[j] = new
        if delta < tol:
            break
    return w


@dataclass
class StackedModel:
    base_models: list
    weights: np.ndarray
    n_features: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = np.column_stack([m.predict(x) for m in self.base_models])
        return z @ self.weights


def fit_stacked(x, target, base_specs, seed: int) -> StackedModel:
    x = as_matrix(x)
    y = _check_lengths(x, target)
    base_specs = list(base_specs)
    if len(base_specs) < 2:
        raise ValueError("need at least 2 base specs")
    n = len(y)
    folds = kfold_indices(n, min(5, n), stream(seed, "stack-folds"))
    oof = np.empty((n, len(base_specs)))
    mask = np.ones(n, dtype=bool)
    for f, val in enumerate(folds):
        mask[:] = True
        mask[val] = False
        for i, spec in enumerate(base_specs):
            model = fit_regressor(x[mask], y[mask], spec, derive_seed(seed, "stack", i, f))
            oof[val, i] = model.predict(x[val])
    weights = nnls_coordinate_descent(oof, y)
    full = [
        fit_regressor(x, y, spec, derive_seed(seed, "stack-full", i))
        for i, spec in enumerate(base_specs)
    ]
    return StackedModel(full, weights, x.shape[1])


# ---------------------------------------------------------------------------
# Dispatchers
# ---------------------------------------------------------------------------


def fit_regressor(x, y, spec: LearnerSpec, seed: int):
    if spec.kind == "ridge_cv":
        return fit_ridge_cv(x, y, spec, seed)
    if spec.kind == "gbt_regress":
        return fit_gbt(x, y, spec, "squared", seed)
    if spec.kind == "stacked":
        return fit_stacked(x, y, spec.base, seed)
    raise ValueError(f"{spec.kind!r} is not a regression learner")


def fit_classifier(x, a, spec: LearnerSpec, seed: int):
    if spec.kind == "logistic_cv":
        return fit_logistic_cv(x, a, spec, seed)
    if spec.kind == "gbt_classify":
        return fit_gbt(x, a, spec, "logistic", seed)
    raise ValueError(f"{spec.kind!r} is not a classification learner")
