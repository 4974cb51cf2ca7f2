"""Regression fingerprinting: measurement-cycle features -> position.

Pipeline per model: transform raw axis magnitudes, standardise, optionally
expand (powers up to ``degree`` plus pairwise products), standardise the
expanded columns, then fit one LASSO per output coordinate.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import kernels
from .environment import Dataset, MeasurementCycle
from .errors import ConvergenceError, DomainError, InsufficientDataError, SchemaError
from .localization import PositionEstimate

KINDS = {"lasso": 1, "poly3-lasso": 3}
DEFAULT_LAMBDA = 0.01
CV_LADDER = tuple(np.logspace(-4, 0, 10))
FEATURE_TRANSFORMS = ("magnitude", "log", "range")
DEFAULT_TRANSFORM = "range"


def poly_expand(features, degree: int) -> np.ndarray:
    """Powers ``1..degree`` of every feature, then pairwise products.

    Column order: all first powers, all squares, all cubes, then ``x_i * x_j``
    for ``i < j`` in lexicographic order. Pairwise products are only added
    for ``degree >= 2``. Accepts a vector or a (samples, features) matrix.
    """
    if degree not in (1, 2, 3):
        raise DomainError(f"degree must be 1, 2 or 3, got {degree}")
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    X = f[None, :] if single else f
    cols = [X**k for k in range(1, degree + 1)]
    if degree >= 2 and X.shape[1] > 1:
        i, j = np.triu_indices(X.shape[1], 1)
        cols.append(X[:, i] * X[:, j])
    out = np.concatenate(cols, axis=1)
    return out[0] if single else out


def expanded_length(n_features: int, degree: int) -> int:
    pairs = n_features * (n_features - 1) // 2 if degree >= 2 else 0
    return n_features * degree + pairs


@dataclass
class LassoResult:
    weights: np.ndarray
    intercept: float
    n_iter: int


def lasso_objective(X, y, weights, intercept, lam) -> float:
    X = np.asarray(X, dtype=np.float64)
    r = np.asarray(y, dtype=np.float64) - X @ weights - intercept
    return float(r @ r / (2 * len(r)) + lam * np.sum(np.abs(weights)))


def lasso_fit(X, y, lam: float, tol: float = 1e-10, max_iter: int = 100_000,
              w0=None) -> LassoResult:
    """Coordinate-descent LASSO with an unpenalised intercept.

    Minimises ``(1/2n)||y - Xw - c||^2 + lam * ||w||_1``. Converged when the
    largest coordinate change in a sweep is below ``tol``.

    Raises:
        ConvergenceError: after ``max_iter`` sweeps; ``last_iterate`` is
            the current :class:`LassoResult`.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DomainError("X must be (n, p) with one target per row")
    if X.shape[0] < 2:
        raise InsufficientDataError("LASSO needs at least 2 samples")
    if lam < 0:
        raise DomainError("lambda must be >= 0")
    xm = X.mean(axis=0)
    ym = y.mean()
    w, sweeps, ok = kernels.lasso_cd(X - xm, y - ym, float(lam), float(tol), int(max_iter), w0)
    res = LassoResult(np.asarray(w), float(ym - xm @ w), int(sweeps))
    if not ok:
        raise ConvergenceError(f"LASSO did not converge in {max_iter} sweeps", res)
    return res


def lambda_max(X, y) -> float:
    """Smallest lambda for which all weights are exactly zero."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    return float(np.max(np.abs(Xc.T @ (y - y.mean()))) / len(y))


def transform_features(features, transform: str) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if transform == "magnitude":
        return f
    if transform == "log":
        return np.log(f)
    if transform == "range":
        return f ** (-1.0 / 3.0)
    raise DomainError(f"unknown feature transform {transform!r}")


def _standardize(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


@dataclass
class FingerprintModel:
    kind: str
    degree: int
    transform: str
    base_mean: np.ndarray
    base_scale: np.ndarray
    exp_mean: np.ndarray
    exp_scale: np.ndarray
    weights: np.ndarray
    intercepts: np.ndarray
    lam: float
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.base_mean)

    def design(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.shape[-1] != self.n_features:
            raise SchemaError(f"model expects {self.n_features} features, got {f.shape[-1]}")
        z = (transform_features(f, self.transform) - self.base_mean) / self.base_scale
        return (poly_expand(z, self.degree) - self.exp_mean) / self.exp_scale

    def predict_array(self, features) -> np.ndarray:
        """(n, 3) positions for a (n, features) matrix (or (3,) for a vector)."""
        return self.design(features) @ self.weights.T + self.intercepts

    def to_dict(self) -> dict:
        return {
            "format": "magloc-fingerprint/1",
            "kind": self.kind,
            "degree": self.degree,
            "transform": self.transform,
            "lambda": self.lam,
            "standardization": {
                "base_mean": self.base_mean.tolist(),
                "base_scale": self.base_scale.tolist(),
                "expanded_mean": self.exp_mean.tolist(),
                "expanded_scale": self.exp_scale.tolist(),
            },
            "weights": self.weights.tolist(),
            "intercepts": self.intercepts.tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FingerprintModel":
        if data.get("format") != "magloc-fingerprint/1":
            raise SchemaError(f"not a fingerprint model (format={data.get('format')!r})")
        try:
            st = data["standardization"]
            model = cls(
                kind=data["kind"], degree=int(data["degree"]), transform=data["transform"],
                base_mean=np.array(st["base_mean"], float), base_scale=np.array(st["base_scale"], float),
                exp_mean=np.array(st["expanded_mean"], float), exp_scale=np.array(st["expanded_scale"], float),
                weights=np.array(data["weights"], float), intercepts=np.array(data["intercepts"], float),
                lam=float(data["lambda"]), meta=dict(data.get("meta", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"fingerprint model: {exc}") from exc
        if model.weights.shape[1] != expanded_length(model.n_features, model.degree):
            raise SchemaError("weight dimension does not match the expansion")
        if np.any(model.base_scale <= 0) or np.any(model.exp_scale <= 0):
            raise SchemaError("standardization scales must be > 0")
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FingerprintModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def fit_model(features, positions, kind: str = "lasso", lam: float = DEFAULT_LAMBDA,
              transform: str = DEFAULT_TRANSFORM, tol: float = 1e-6,
              max_iter: int = 200_000, meta: dict | None = None) -> FingerprintModel:
    """Fit a fingerprint model on raw feature rows and their positions."""
    if kind not in KINDS:
        raise DomainError(f"unknown regressor kind {kind!r}; choose from {sorted(KINDS)}")
    F = np.asarray(features, dtype=np.float64)
    P = np.asarray(positions, dtype=np.float64)
    degree = KINDS[kind]
    T = transform_features(F, transform)
    base_mean, base_scale = _standardize(T)
    E = poly_expand((T - base_mean) / base_scale, degree)
    exp_mean, exp_scale = _standardize(E)
    X = (E - exp_mean) / exp_scale
    if lam == 0 and X.shape[0] < X.shape[1]:
        warnings.warn(
            f"{X.shape[0]} training samples for {X.shape[1]} features with lambda=0; "
            "the fit is not unique", RuntimeWarning, stacklevel=2)
    weights, intercepts = [], []
    for k in range(P.shape[1]):
        res = lasso_fit(X, P[:, k], lam, tol=tol, max_iter=max_iter)
        weights.append(res.weights)
        intercepts.append(res.intercept)
    return FingerprintModel(kind, degree, transform, base_mean, base_scale, exp_mean, exp_scale,
                            np.array(weights), np.array(intercepts), float(lam), dict(meta or {}))


def cross_validate_lambda(features, positions, kind: str = "lasso", ladder=CV_LADDER,
                          folds: int = 5, seed: int = 0,
                          transform: str = DEFAULT_TRANSFORM) -> float:
    """Pick the ladder value with the lowest mean held-out position error."""
    F = np.asarray(features, dtype=np.float64)
    P = np.asarray(positions, dtype=np.float64)
    n = len(F)
    if n < folds:
        raise InsufficientDataError(f"{n} samples cannot be split into {folds} folds")
    order = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(order, folds)
    best, best_err = None, np.inf
    for lam in ladder:
        errs = []
        for k in range(folds):
            test = parts[k]
            train = np.concatenate([parts[j] for j in range(folds) if j != k])
            model = fit_model(F[train], P[train], kind, lam, transform)
            pred = model.predict_array(F[test])
            errs.append(np.linalg.norm(pred - P[test], axis=1))
        err = float(np.mean(np.concatenate(errs)))
        if err < best_err:
            best, best_err = float(lam), err
    return best


def select_kind(features, positions, lam: float = DEFAULT_LAMBDA, seed: int = 0,
                folds: int = 5, transform: str = DEFAULT_TRANSFORM) -> str:
    """Regressor kind with the lower cross-validated median position error."""
    F = np.asarray(features, dtype=np.float64)
    P = np.asarray(positions, dtype=np.float64)
    if len(F) < folds:
        raise InsufficientDataError(f"{len(F)} samples cannot be split into {folds} folds")
    parts = np.array_split(np.random.default_rng(seed).permutation(len(F)), folds)
    best, best_err = None, np.inf
    for kind in KINDS:
        errs = []
        for k in range(folds):
            train = np.concatenate([parts[j] for j in range(folds) if j != k])
            model = fit_model(F[train], P[train], kind, lam, transform)
            errs.append(np.linalg.norm(model.predict_array(F[parts[k]]) - P[parts[k]], axis=1))
        err = float(np.median(np.concatenate(errs)))
        if err < best_err:
            best, best_err = kind, err
    return best


def build_map(dataset: Dataset, train_fraction: float, kind: str = "lasso", seed: int = 0,
              lam: float | str = DEFAULT_LAMBDA, transform: str = DEFAULT_TRANSFORM):
    """Train on a seeded random split; returns ``(model, held-out median error)``.

    ``lam="cv"`` selects lambda by 5-fold cross-validation on the training
    split and ``kind="auto"`` picks the regressor the same way. The held-out
    median is NaN when the split leaves nothing out.
    """
    from .evaluation import median_position_error, split_dataset

    if not dataset.has_truth:
        raise InsufficientDataError("fingerprint training requires ground-truth positions")
    if not 0 < train_fraction <= 1:
        raise DomainError(f"train_fraction must be in (0, 1], got {train_fraction}")
    train_idx, test_idx = split_dataset(dataset, [train_fraction], seed)
    if len(train_idx) < 2:
        raise InsufficientDataError("training split has fewer than 2 samples")
    F = dataset.feature_matrix()
    P = dataset.positions
    if lam == "cv":
        lam = cross_validate_lambda(F[train_idx], P[train_idx], "lasso" if kind == "auto" else kind,
                                    seed=seed, transform=transform)
    if kind == "auto":
        kind = select_kind(F[train_idx], P[train_idx], float(lam), seed, transform=transform)
    meta = {"train_fraction": train_fraction, "seed": int(seed), "n_train": int(len(train_idx)),
            "scenario": dataset.scenario_id}
    model = fit_model(F[train_idx], P[train_idx], kind, float(lam), transform, meta=meta)
    if len(test_idx) == 0:
        return model, float("nan")
    pred = model.predict_array(F[test_idx])
    return model, median_position_error(pred, P[test_idx])


def predict(model: FingerprintModel, cycle: MeasurementCycle) -> PositionEstimate:
    feats = cycle.features()
    if feats.shape[0] != model.n_features:
        raise SchemaError(f"cycle has {feats.shape[0]} features, model expects {model.n_features}")
    pos = model.predict_array(feats)
    return PositionEstimate(pos, 0.0, "fingerprint", cycle.n_transmitters)
