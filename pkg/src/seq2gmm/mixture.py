"""Gaussian mixture in latent space: moments, sample energy, K-means, EM."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.special import logsumexp

from .errors import NumericalError

log = logging.getLogger(__name__)

DEFAULT_EPS = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmParams:
    phi: np.ndarray  # (K,)
    mu: np.ndarray  # (K, d)
    sigma: np.ndarray  # (K, d, d)
    eps: float = DEFAULT_EPS
    _chol: list | None = field(default=None, repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def cholesky(self) -> list[np.ndarray]:
        """Lower Cholesky factors of every covariance (cached)."""
        if self._chol is None:
            factors = []
            for k, S in enumerate(self.sigma):
                try:
                    c, _ = cho_factor(S, lower=True, check_finite=True)
                except (np.linalg.LinAlgError, ValueError) as exc:
                    raise NumericalError(f"covariance of component {k} is not positive definite") from exc
                factors.append(np.tril(c))
            self._chol = factors
        return self._chol

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "dim": self.dim,
            "layout": "row-major",
            "Phi": self.phi.tolist(),
            "mu": self.mu.tolist(),
            "Sigma": self.sigma.tolist(),
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmParams":
        K, dim = int(d["K"]), int(d["dim"])
        return cls(
            phi=np.asarray(d["Phi"], dtype=np.float64).reshape(K),
            mu=np.asarray(d["mu"], dtype=np.float64).reshape(K, dim),
            sigma=np.asarray(d["Sigma"], dtype=np.float64).reshape(K, dim, dim),
            eps=float(d["eps"]),
        )


def _check_gamma(gamma: np.ndarray, n: int) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.ndim != 2 or gamma.shape[0] != n:
        raise ValueError(f"responsibilities must have shape ({n}, K)")
    if np.any(gamma < -1e-12) or not np.allclose(gamma.sum(axis=1), 1.0, atol=1e-8):
        raise ValueError("responsibility rows must be non-negative and sum to 1")
    return gamma


def mixture_stats(ys, gamma, eps: float = DEFAULT_EPS, seed: int = 0) -> GmmParams:
    """Weighted moments: mixture weights, means and regularised covariances."""
    Y = np.asarray(ys, dtype=np.float64)
    n, d = Y.shape
    gamma = _check_gamma(gamma, n)
    K = gamma.shape[1]
    if n < K:
        raise ValueError(f"need at least K={K} points, got {n}")
    mass = gamma.sum(axis=0)
    phi = mass / n
    mu = np.zeros((K, d))
    sigma = np.zeros((K, d, d))
    rng = None
    for k in range(K):
        if mass[k] < 1e-12:
            rng = rng or np.random.default_rng(seed)
            warnings.warn(f"mixture component {k} has no mass; reinitialising", RuntimeWarning, stacklevel=2)
            mu[k] = Y[rng.integers(n)]
            centred = Y - Y.mean(axis=0)
            sigma[k] = centred.T @ centred / n + eps * np.eye(d)
            continue
        w = gamma[:, k]
        mu[k] = w @ Y / mass[k]
        centred = Y - mu[k]
        sigma[k] = (centred * w[:, None]).T @ centred / mass[k] + eps * np.eye(d)
        sigma[k] = 0.5 * (sigma[k] + sigma[k].T)
    return GmmParams(phi=phi, mu=mu, sigma=sigma, eps=eps)


def component_log_density(Y: np.ndarray, params: GmmParams) -> np.ndarray:
    """``log N(y_i | mu_k, Sigma_k)`` as an (n, K) array."""
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n, d = Y.shape
    out = np.empty((n, params.K))
    for k, L in enumerate(params.cholesky()):
        sol = solve_triangular(L, (Y - params.mu[k]).T, lower=True)
        maha = np.sum(sol * sol, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, k] = -0.5 * (maha + logdet + d * _LOG_2PI)
    return out


def _log_weighted(Y, params: GmmParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return component_log_density(Y, params) + np.log(params.phi)[None, :]


def sample_energies(Y, params: GmmParams) -> np.ndarray:
    """Negative log mixture density of every row of ``Y``."""
    return -logsumexp(_log_weighted(Y, params), axis=1)


def sample_energy(y, params: GmmParams) -> float:
    return float(sample_energies(np.asarray(y, dtype=np.float64)[None, :], params)[0])


def posteriors(Y, params: GmmParams) -> np.ndarray:
    lw = _log_weighted(Y, params)
    return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))


# ----------------------------------------------------------------------
# K-means


def _plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centres = [X[rng.integers(n)]]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centres.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centres)


def _assign(X: np.ndarray, centres: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = np.sum((X[:, None, :] - centres[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def kmeans(points, K: int, seed: int = 0, max_iters: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """K-means++ seeding followed by Lloyd iterations; returns (labels, centroids)."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if K < 1 or n < K:
        raise ValueError(f"kmeans needs 1 <= K <= N, got K={K}, N={n}")
    rng = np.random.default_rng(seed)
    centres = _plusplus(X, K, rng)
    labels, dist = _assign(X, centres)
    for _ in range(max_iters):
        _repair_empty(labels, dist, K)
        centres = _centres(X, labels, K)
        new_labels, dist = _assign(X, centres)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    else:
        if _repair_empty(labels, dist, K):
            centres = _centres(X, labels, K)
    return labels, centres


def _repair_empty(labels: np.ndarray, dist: np.ndarray, K: int) -> bool:
    """Give every empty cluster the point farthest from its centroid (in place)."""
    repaired = False
    for k in range(K):
        if not np.any(labels == k):
            far = int(np.argmax(dist))
            labels[far] = k
            dist[far] = 0.0
            repaired = True
    return repaired


def _centres(X: np.ndarray, labels: np.ndarray, K: int) -> np.ndarray:
    return np.array([X[labels == k].mean(axis=0) for k in range(K)])


def inertia(points, labels, centres) -> float:
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return float(np.sum((X - centres[labels]) ** 2))


# ----------------------------------------------------------------------
# EM


def one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    g = np.zeros((labels.size, K))
    g[np.arange(labels.size), labels] = 1.0
    return g


def kmeans_init(ys, K: int, seed: int = 0, eps: float = DEFAULT_EPS) -> GmmParams:
    labels, _ = kmeans(ys, K, seed=seed)
    return mixture_stats(ys, one_hot(labels, K), eps=eps, seed=seed)


def em_refine(ys, init: GmmParams, max_iters: int = 200, tol: float = 1e-6, return_history: bool = False):
    """Alternate E- and M-steps until the mean energy improves by less than ``tol``."""
    Y = np.asarray(ys, dtype=np.float64)
    params = init
    energy = float(np.mean(sample_energies(Y, params)))
    history = [energy]
    for _ in range(max_iters):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            candidate = mixture_stats(Y, posteriors(Y, params), eps=params.eps)
        new_energy = float(np.mean(sample_energies(Y, candidate)))
        if not np.isfinite(new_energy):
            raise NumericalError("EM produced a non-finite mean energy")
        if new_energy > energy:
            # only the covariance regulariser can break EM monotonicity; stop at the better point
            log.debug("EM step would raise mean energy %.6g -> %.6g; stopping", energy, new_energy)
            break
        improvement = energy - new_energy
        params, energy = candidate, new_energy
        history.append(energy)
        if improvement < tol:
            break
    return (params, history) if return_history else params
