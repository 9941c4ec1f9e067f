"""Tied-covariance class-conditional Gaussian density model.

Every class shares one covariance matrix; class identity only moves the
mean. Distances are the positive quadratic form
``(v - mu_k)^T (Sigma + eps*I)^{-1} (v - mu_k)`` evaluated through
triangular solves against a stored Cholesky factor, never an explicit
inverse. The covariance normalizer is the total sample count, so the model
is the plain maximum-likelihood pooled-scatter estimate.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from sklearn.base import BaseEstimator

from ._fileio import atomic_write_bytes
from .dataset import CategoryTable
from .errors import (CorruptionError, FormatError, SingularModelError,
                     UnknownCategoryError)
from .features import FeatureArchive
from .validation import check_feature_matrix, check_labels

MODEL_MAGIC = b"UQGM0001"


class ClassConditionalGaussian(BaseEstimator):
    """Gaussian density model with per-class means and one shared covariance.

    Parameters
    ----------
    eps : "auto" or float, default "auto"
        Ridge added to the covariance diagonal before factorization.
        "auto" resolves to ``max(1e-6 * trace(cov)/dim, 1e-12)``; an
        explicit float (including 0.0) is used verbatim.

    Attributes
    ----------
    classes_ : (K,) int64 array of fitted category ids, ascending.
    class_counts_ : (K,) int64 array, samples per class.
    means_ : (K, dim) float64 array of class means.
    covariance_ : (dim, dim) float64 shared covariance (unregularized).
    eps_ : float, the resolved ridge.
    factor_ : (dim, dim) lower Cholesky factor of ``covariance_ + eps_*I``.
    logdet_ : float, log determinant of the regularized covariance.
    n_features_in_ : int.
    """

    def __init__(self, eps: str | float = "auto"):
        self.eps = eps

    def fit(self, X, y) -> "ClassConditionalGaussian":
        """Fit per-class means and the pooled within-class covariance.

        Means are per-class arithmetic means; the covariance is the sum of
        within-class scatters divided by the total sample count. Classes
        are processed in ascending id order so refits are reproducible.
        """
        X = check_feature_matrix(X)
        y = check_labels(y, X.shape[0])
        classes, counts = np.unique(y, return_counts=True)
        dim = X.shape[1]
        means = np.empty((classes.size, dim))
        scatter = np.zeros((dim, dim))
        for i, k in enumerate(classes):
            rows = X[y == k]
            means[i] = rows.mean(axis=0)
            centered = rows - means[i]
            scatter += centered.T @ centered
        covariance = scatter / X.shape[0]
        self._install(classes, counts, means, covariance)
        return self

    @classmethod
    def from_parameters(cls, class_means: dict[int, np.ndarray], covariance,
                        *, eps: str | float = "auto",
                        class_counts: dict[int, int] | None = None,
                        ) -> "ClassConditionalGaussian":
        """Build a fitted model directly from means and a covariance matrix."""
        classes = np.array(sorted(class_means), dtype=np.int64)
        if classes.size == 0:
            raise ValueError("class_means is empty")
        means = np.stack([np.asarray(class_means[int(k)], dtype=np.float64)
                          for k in classes])
        if means.ndim != 2:
            raise ValueError("class means must be 1-dimensional vectors")
        covariance = np.asarray(covariance, dtype=np.float64)
        if covariance.shape != (means.shape[1], means.shape[1]):
            raise ValueError(f"covariance shape {covariance.shape} does not match "
                             f"mean dim {means.shape[1]}")
        sym_gap = np.max(np.abs(covariance - covariance.T))
        scale = max(np.max(np.abs(covariance)), 1.0)
        if sym_gap > 1e-9 * scale:
            raise ValueError(f"covariance is asymmetric (relative gap {sym_gap / scale:g})")
        counts = np.array([(class_counts or {}).get(int(k), 1) for k in classes],
                          dtype=np.int64)
        model = cls(eps=eps)
        model._install(classes, counts, means, covariance)
        return model

    def _install(self, classes, counts, means, covariance) -> None:
        dim = means.shape[1]
        if self.eps == "auto":
            eps = max(1e-6 * float(np.trace(covariance)) / dim, 1e-12)
        else:
            eps = float(self.eps)
            if eps < 0:
                raise ValueError(f"eps must be >= 0, got {eps}")
        regularized = covariance + eps * np.eye(dim)
        try:
            factor = cholesky(regularized, lower=True)
        except LinAlgError as exc:
            smallest = float(np.linalg.eigvalsh(regularized)[0])
            raise SingularModelError(
                f"covariance factorization failed even with eps={eps:g}; "
                f"smallest eigenvalue ~ {smallest:.6e}") from exc
        self.classes_ = classes
        self.class_counts_ = counts
        self.means_ = means
        self.covariance_ = covariance
        self.eps_ = eps
        self.factor_ = factor
        self.logdet_ = float(2.0 * np.sum(np.log(np.diag(factor))))
        self.n_features_in_ = dim
        self._class_index = {int(k): i for i, k in enumerate(classes)}

    def _check_fitted(self) -> None:
        if not hasattr(self, "factor_"):
            raise UnknownCategoryError("model is not fitted")

    def _rows_by_class(self, X, y):
        self._check_fitted()
        X = check_feature_matrix(X, dim=self.n_features_in_)
        y = check_labels(y, X.shape[0])
        unknown = sorted(set(y.tolist()) - set(self._class_index))
        if unknown:
            raise UnknownCategoryError(f"categories not fitted: {unknown}")
        return X, y

    def mahalanobis(self, X, y) -> np.ndarray:
        """Squared Mahalanobis distance of each row to its class mean."""
        X, y = self._rows_by_class(X, y)
        out = np.empty(X.shape[0])
        for k in np.unique(y):
            mask = y == k
            diff = X[mask] - self.means_[self._class_index[int(k)]]
            z = solve_triangular(self.factor_, diff.T, lower=True)
            out[mask] = np.einsum("ij,ij->j", z, z)
        return out

    def log_density(self, X, y) -> np.ndarray:
        """Gaussian log density of each row under its class's distribution."""
        maha = self.mahalanobis(X, y)
        dim = self.n_features_in_
        return -0.5 * (dim * np.log(2.0 * np.pi) + self.logdet_ + maha)

    def means_by_class(self) -> dict[int, np.ndarray]:
        self._check_fitted()
        return {int(k): self.means_[i].copy() for i, k in enumerate(self.classes_)}


def fit_density_model(archive: FeatureArchive, *, eps: str | float = "auto",
                      categories: CategoryTable | None = None,
                      ) -> ClassConditionalGaussian:
    """Fit the density model on an archive, in ascending annotation-id order.

    When a category table is supplied, categories with no pooled vectors
    are skipped with a warning instead of failing.
    """
    X, y, _ = archive.vectors_and_labels()
    if X.shape[0] == 0:
        raise ValueError("archive is empty")
    if categories is not None:
        present = set(int(k) for k in np.unique(y))
        for cid in categories.ids:
            if cid not in present:
                warnings.warn(f"category {cid} has no pooled features and was "
                              f"skipped", UserWarning, stacklevel=2)
    return ClassConditionalGaussian(eps=eps).fit(X, y)


def _serialize_model(model: ClassConditionalGaussian) -> bytes:
    model._check_fitted()
    dim = model.n_features_in_
    parts = [MODEL_MAGIC, struct.pack("<II", dim, model.classes_.size),
             struct.pack("<d", model.eps_)]
    for i, k in enumerate(model.classes_):
        parts.append(struct.pack("<IQ", int(k), int(model.class_counts_[i])))
        parts.append(model.means_[i].astype("<f8").tobytes())
    parts.append(model.covariance_.astype("<f8").tobytes())
    return b"".join(parts)


def model_checksum(model: ClassConditionalGaussian) -> str:
    """64-bit content checksum, also used as the score-file model reference."""
    return hashlib.blake2b(_serialize_model(model), digest_size=8).hexdigest()


def save_model(model: ClassConditionalGaussian, path: str | Path) -> None:
    payload = _serialize_model(model)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    atomic_write_bytes(Path(path), payload + digest)


def load_model(path: str | Path) -> ClassConditionalGaussian:
    """Load a model file; the Cholesky factor is recomputed, not stored."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:8]!r}, expected {MODEL_MAGIC!r}")
    if len(blob) < 24 + 8:
        raise CorruptionError(f"{path}: truncated header")
    dim, n_classes = struct.unpack("<II", blob[8:16])
    (eps,) = struct.unpack("<d", blob[16:24])
    expected = 24 + n_classes * (12 + 8 * dim) + 8 * dim * dim + 8
    if len(blob) != expected:
        raise CorruptionError(f"{path}: expected {expected} bytes, found {len(blob)}")
    payload, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise CorruptionError(f"{path}: checksum mismatch")
    offset = 24
    class_means: dict[int, np.ndarray] = {}
    class_counts: dict[int, int] = {}
    for _ in range(n_classes):
        cid, count = struct.unpack_from("<IQ", blob, offset)
        offset += 12
        mean = np.frombuffer(blob, dtype="<f8", count=dim, offset=offset).copy()
        offset += 8 * dim
        class_means[cid] = mean
        class_counts[cid] = count
    covariance = np.frombuffer(blob, dtype="<f8", count=dim * dim,
                               offset=offset).reshape(dim, dim).copy()
    return ClassConditionalGaussian.from_parameters(
        class_means, covariance, eps=eps, class_counts=class_counts)
