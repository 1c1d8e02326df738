"""Min-max feature scaling with persisted, named parameters."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigurationError, ValidationError


@dataclass(frozen=True)
class NormalizationParams:
    """Per-feature ``(min, max)`` pairs.

    Features whose fitted range is empty are listed in ``constant``; they are
    shifted by their fitted value but never divided, so the fitted value maps
    to 0 and other values keep their raw spacing.
    """

    names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    constant: tuple[str, ...] = field(default=())

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        if mins.shape != (len(self.names),) or maxs.shape != mins.shape:
            raise ValidationError("names, mins and maxs must have matching lengths")
        if np.any(maxs < mins):
            raise ValidationError("max < min for at least one feature")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        flagged = tuple(n for n, lo, hi in zip(self.names, mins, maxs) if not hi > lo)
        object.__setattr__(self, "constant", flagged)

    @property
    def n_features(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigurationError(f"feature {name!r} is not in the fitted parameters") from None

    def span(self) -> np.ndarray:
        width = self.maxs - self.mins
        return np.where(width > 0, width, 1.0)

    def offset(self) -> np.ndarray:
        return self.mins

    def subset(self, names) -> "NormalizationParams":
        idx = [self.index(n) for n in names]
        return NormalizationParams(tuple(names), self.mins[idx], self.maxs[idx])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "min": [float(v) for v in self.mins],
            "max": [float(v) for v in self.maxs],
            "constant": list(self.constant),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(tuple(d["names"]), np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "NormalizationParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def minmax_fit(X, names=None) -> NormalizationParams:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValidationError("cannot fit min-max parameters on zero rows")
    if not np.all(np.isfinite(X)):
        raise ValidationError("min-max fit input contains NaN or Inf")
    if names is None:
        names = tuple(f"x{i}" for i in range(X.shape[1]))
    return NormalizationParams(tuple(names), X.min(axis=0), X.max(axis=0))


def minmax_apply(X, params: NormalizationParams):
    X = np.asarray(X, dtype=np.float64)
    return (X - params.offset()) / params.span()


def minmax_invert(Y, params: NormalizationParams):
    Y = np.asarray(Y, dtype=np.float64)
    return Y * params.span() + params.offset()


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Scale each column to ``[0, 1]`` using fitted minima and maxima.

    Parameters
    ----------
    feature_names : sequence of str, optional
        Column names stored in the fitted :class:`NormalizationParams`.
    """

    def __init__(self, feature_names=None):
        self.feature_names = feature_names

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        names = tuple(self.feature_names) if self.feature_names is not None else None
        self.params_ = minmax_fit(X, names)
        self.n_features_in_ = self.params_.n_features
        return self

    @classmethod
    def from_params(cls, params: NormalizationParams) -> "MinMaxNormalizer":
        est = cls(feature_names=params.names)
        est.params_ = params
        est.n_features_in_ = params.n_features
        return est

    def _check(self, X):
        if not hasattr(self, "params_"):
            raise ConfigurationError("MinMaxNormalizer is not fitted; call fit() first")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[-1]}")
        return X

    def transform(self, X):
        return minmax_apply(self._check(X), self.params_)

    def inverse_transform(self, X):
        return minmax_invert(self._check(X), self.params_)
