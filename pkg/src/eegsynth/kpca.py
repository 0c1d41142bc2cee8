"""Kernel PCA with stored standardizer, as a scikit-learn style transformer."""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import _binio
from .exceptions import InvalidConfigError, RankDeficientError, ShapeError

_MAGIC = b"KPCA"
_VERSION = 1

# relative cutoff below which eigenvalues count as numerically zero
EIG_RTOL = 1e-10


def median_gamma(X):
    """Median heuristic: ``1 / median`` of the pairwise squared distances."""
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    iu = np.triu_indices(len(X), k=1)
    med = np.median(d2[iu]) if len(iu[0]) else 0.0
    return 1.0 / med if med > 0 else 1.0


def kernel_matrix(A, B, kernel="rbf", gamma=1.0, degree=3, coef0=1.0):
    if kernel == "linear":
        return A @ B.T
    if kernel == "poly":
        return (gamma * (A @ B.T) + coef0) ** degree
    if kernel == "rbf":
        d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
        return np.exp(-gamma * np.maximum(d2, 0.0))
    raise InvalidConfigError(f"unknown kernel {kernel!r}")


class KernelPCA(TransformerMixin, BaseEstimator):
    """Kernel PCA on per-dimension standardized inputs.

    Projections of the training points equal ``sqrt(lambda_i) * v_i`` where
    ``(lambda_i, v_i)`` are eigenpairs of the double-centred Gram matrix, so
    with ``kernel="linear"`` and ``standardize=False`` the output coincides
    with ordinary PCA scores (up to sign). Each component's empirical
    variance over the training set is ``lambda_i / n``.

    Parameters
    ----------
    n_components : int
        Number of retained components.
    kernel : {"rbf", "linear", "poly"}
    gamma : float or None
        RBF / poly scale. ``None`` uses the median heuristic on the
        standardized training data.
    standardize : bool
        z-score every input dimension with training statistics first.
    max_fit_samples : int or None
        Fit on a seeded random subset of at most this many rows; the Gram
        matrix is quadratic in the number of rows.
    bypass : bool
        Identity reduction: ``transform`` returns its input unchanged.
    """

    def __init__(self, n_components=30, kernel="rbf", gamma=None, degree=3, coef0=1.0,
                 standardize=True, max_fit_samples=None, random_state=0, bypass=False):
        self.n_components = n_components
        self.kernel = kernel
        self.gamma = gamma
        self.degree = degree
        self.coef0 = coef0
        self.standardize = standardize
        self.max_fit_samples = max_fit_samples
        self.random_state = random_state
        self.bypass = bypass

    def _kernel(self, A, B):
        return kernel_matrix(A, B, self.kernel, self.gamma_, self.degree, self.coef0)

    def _scale(self, X):
        return (X - self.mean_) / self.scale_

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        self.n_features_in_ = d
        if self.bypass:
            self.mean_ = np.zeros(d)
            self.scale_ = np.ones(d)
            self.gamma_ = 0.0
            self.train_points_ = np.zeros((0, d))
            self.alphas_ = np.zeros((0, d))
            self.lambdas_ = np.zeros(0)
            self.all_lambdas_ = np.zeros(0)
            self.k_ = d
            return self
        k = int(self.n_components)
        if not 1 <= k <= n:
            raise InvalidConfigError(f"need 1 <= n_components <= n_samples, got k={k}, n={n}")

        if self.max_fit_samples is not None and n > self.max_fit_samples:
            rng = np.random.default_rng(self.random_state)
            X = X[np.sort(rng.choice(n, self.max_fit_samples, replace=False))]
            n = len(X)
            if k > n:
                raise InvalidConfigError(f"n_components={k} exceeds max_fit_samples={n}")

        if self.standardize:
            self.mean_ = X.mean(axis=0)
            std = X.std(axis=0)
            self.scale_ = np.where(std > 0, std, 1.0)
        else:
            self.mean_ = np.zeros(d)
            self.scale_ = np.ones(d)
        Z = self._scale(X)
        self.gamma_ = median_gamma(Z) if self.gamma is None else float(self.gamma)

        K = self._kernel(Z, Z)
        self.k_train_col_means_ = K.mean(axis=0)
        self.k_train_mean_ = K.mean()
        Kc = K - self.k_train_col_means_[None, :] - self.k_train_col_means_[:, None] + self.k_train_mean_
        Kc = (Kc + Kc.T) / 2.0

        evals, evecs = np.linalg.eigh(Kc)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        lam_max = evals[0] if len(evals) else 0.0
        positive = evals > max(EIG_RTOL * lam_max, 0.0) if lam_max > 0 else np.zeros(len(evals), bool)
        n_pos = int(positive.sum())
        if n_pos < k:
            raise RankDeficientError(n_pos, k)
        lambdas = evals[:k]
        vecs = evecs[:, :k]
        # deterministic sign: largest-magnitude entry of each eigenvector is positive
        idx = np.argmax(np.abs(vecs), axis=0)
        vecs = vecs * np.sign(vecs[idx, np.arange(k)])

        self.train_points_ = Z
        self.lambdas_ = lambdas
        self.all_lambdas_ = evals[positive]
        self.alphas_ = vecs / np.sqrt(lambdas)
        self.k_ = k
        return self

    def transform(self, X):
        check_is_fitted(self, "alphas_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        if self.bypass:
            return X.copy()
        Kx = self._kernel(self._scale(X), self.train_points_)
        Kx = Kx - Kx.mean(axis=1, keepdims=True) - self.k_train_col_means_[None, :] + self.k_train_mean_
        return Kx @ self.alphas_

    def explained_variance_ratio(self):
        """Retained eigenvalues over the sum of all positive eigenvalues."""
        check_is_fitted(self, "alphas_")
        if self.bypass:
            return np.full(self.k_, 1.0 / self.k_)
        return self.lambdas_ / self.all_lambdas_.sum()

    def save(self, path):
        check_is_fitted(self, "alphas_")
        meta = {"params": self.get_params(), "gamma_": self.gamma_, "k_": self.k_,
                "n_features_in_": self.n_features_in_, "k_train_mean_": getattr(self, "k_train_mean_", 0.0)}
        arrays = {"train_points": self.train_points_, "alphas": self.alphas_, "lambdas": self.lambdas_,
                  "all_lambdas": self.all_lambdas_, "mean": self.mean_, "scale": self.scale_,
                  "k_train_col_means": getattr(self, "k_train_col_means_", np.zeros(0))}
        _binio.save_arrays(path, _MAGIC, _VERSION, meta, arrays)

    @classmethod
    def load(cls, path):
        _, meta, arr = _binio.load_arrays(path, _MAGIC)
        model = cls(**meta["params"])
        model.gamma_ = meta["gamma_"]
        model.k_ = meta["k_"]
        model.n_features_in_ = meta["n_features_in_"]
        model.k_train_mean_ = meta["k_train_mean_"]
        model.train_points_ = arr["train_points"]
        model.alphas_ = arr["alphas"]
        model.lambdas_ = arr["lambdas"]
        model.all_lambdas_ = arr["all_lambdas"]
        model.mean_ = arr["mean"]
        model.scale_ = arr["scale"]
        model.k_train_col_means_ = arr["k_train_col_means"]
        return model
