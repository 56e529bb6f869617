"""Surrogate-based training: autoencoder pretraining, per-round EM, joint SGD."""
from __future__ import annotations

import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autograd as ag
from . import neuralnet as nn
from .autograd import Tensor
from .dataio import Dataset, holdout_split
from .errors import ConfigError, NumericalError
from .mixture import GmmParams, em_refine, kmeans_init, sample_energies
from .segmentation import optimize_breakpoints, segment_spans, select_num_segments

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class TrainingConfig:
    lam: float = 0.1
    K: int | None = None  # None: pick from k_candidates on a validation split
    H: int = 8
    D_E: int = 10
    T: int = 20
    pretrain_epochs: int = 50
    eta0: float = 0.01
    decay: float = 0.01
    batch_size: int = 32
    seed: int = 0
    M: int | None = None  # None: Calinski-Harabasz selection
    M_max: int = 6
    resample_len: int = 16
    eps: float = 1e-6
    em_max_iters: int = 200
    em_tol: float = 1e-6
    k_candidates: tuple[int, ...] = (2, 5, 10)
    validation_fraction: float = 0.2
    quantile: float = 0.95
    clip_norm: float | None = 5.0
    progress: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        for name in ("H", "D_E", "pretrain_epochs", "batch_size", "M_max", "resample_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.T < 0:
            raise ConfigError("T must be non-negative")
        if self.K is not None and self.K < 1:
            raise ConfigError("K must be positive")
        if self.M is not None and self.M < 1:
            raise ConfigError("M must be positive")
        if self.eta0 <= 0 or self.decay < 0:
            raise ConfigError("learning-rate schedule needs eta0 > 0 and decay >= 0")
        self.k_candidates = tuple(int(k) for k in self.k_candidates)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_candidates"] = list(self.k_candidates)
        return d


@dataclass
class RoundRecord:
    round: int
    objective: float
    recon: float
    energy: float
    bound_lower: float
    bound_upper: float
    em_energy_before: float
    em_energy_after: float
    seconds: float


@dataclass
class TrainingTrace:
    pretrain_losses: list[float] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    o1: float = float("nan")
    o3: float = float("nan")
    bound_violation: bool = False
    M_scores: dict = field(default_factory=dict)
    K_scores: dict = field(default_factory=dict)

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.rounds]

    def to_dict(self) -> dict:
        return {
            "pretrain_losses": self.pretrain_losses,
            "rounds": [asdict(r) for r in self.rounds],
            "o1": self.o1,
            "o3": self.o3,
            "bound_violation": self.bound_violation,
            "M_scores": {str(k): v for k, v in self.M_scores.items()},
            "K_scores": {str(k): v for k, v in self.K_scores.items()},
        }


@dataclass
class TrainedModel:
    num_segments: int
    net: nn.Network
    gmm: GmmParams
    config: TrainingConfig
    normalized: bool = True
    train_energies: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pretrain_recon: float = float("nan")

    def threshold(self, quantile: float | None = None) -> float:
        q = self.config.quantile if quantile is None else quantile
        if len(self.train_energies) == 0:
            raise ValueError("model carries no training energies; load it together with its sidecar")
        return float(np.quantile(self.train_energies, q))


# ----------------------------------------------------------------------
# segments


def collect_segments(dataset: Dataset, num_segments: int) -> list[np.ndarray]:
    segments = []
    for s in dataset.series:
        b = optimize_breakpoints(s, num_segments).breakpoints
        segments.extend(s.values[a:c] for a, c in segment_spans(b))
    return segments


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _apply(net: nn.Network, wrapped: dict, lr: float, blocks: Sequence[str], clip_norm: float | None) -> None:
    grads = nn.collect_grads(wrapped)
    if clip_norm is not None:
        grads = nn.clip_gradients({name: grads[name] for name in blocks}, clip_norm)
    for name in blocks:
        updated = nn.sgd_step(getattr(net, name), grads[name], lr, block=name)
        getattr(net, name).update(updated)


def reconstruction_total(segments: Sequence[np.ndarray], net: nn.Network) -> float:
    _, err = nn.latent_batch(segments, net)
    return float(err.sum())


# ----------------------------------------------------------------------
# pretraining


def pretrain_autoencoder(segments: Sequence[np.ndarray], config: TrainingConfig, net: nn.Network | None = None,
                         step0: int = 0):
    """Minimise the summed squared reconstruction error with mini-batch SGD.

    Returns ``(net, losses, steps)``; ``losses[e]`` is the summed
    reconstruction error accumulated over the mini-batches of epoch ``e``.
    """
    if not segments:
        raise ValueError("no segments to train on")
    if net is None:
        net = nn.Network.initialize(config.H, config.D_E, config.K or 2, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    step = step0
    losses = []
    for epoch in range(config.pretrain_epochs):
        epoch_loss = 0.0
        for idx in _batches(len(segments), config.batch_size, rng):
            w = nn.wrap_network(net)
            fw = nn.forward([segments[i] for i in idx], w["enc"], w["dec"])
            loss = ag.sum(fw.sq_error)
            if not np.isfinite(loss.item()):
                raise NumericalError(f"pretraining diverged at epoch {epoch} (loss {loss.item()})")
            epoch_loss += loss.item()
            (loss * (1.0 / len(idx))).backward()
            _apply(net, w, nn.learning_rate(config.eta0, config.decay, step), ("enc", "dec"), config.clip_norm)
            step += 1
        losses.append(epoch_loss)
    log.info("pretraining finished: loss %.6g after %d epochs", losses[-1] if losses else float("nan"),
             config.pretrain_epochs)
    return net, losses, step


# ----------------------------------------------------------------------
# joint objective


def _frozen_terms(gmm: GmmParams):
    """Per-component inverse Cholesky factors and log normalisers."""
    terms = []
    d = gmm.dim
    for k, L in enumerate(gmm.cholesky()):
        Linv = np.linalg.solve(L, np.eye(d))
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        terms.append((gmm.mu[k], Linv.T, -0.5 * (logdet + d * _LOG_2PI)))
    return terms


def energy_tensor(y: Tensor, gamma: Tensor, gmm: GmmParams) -> Tensor:
    """Per-row sample energy with frozen means/covariances and batch mixture weights."""
    cols = []
    for mu_k, LinvT, const in _frozen_terms(gmm):
        sol = (y - mu_k) @ LinvT
        cols.append(ag.sum(ag.square(sol), axis=1) * -0.5 + const)
    logn = ag.stack(cols, axis=1)
    phi = ag.mean(gamma, axis=0)
    return ag.logsumexp(logn + ag.log(phi), axis=1) * -1.0


def joint_loss(segments: Sequence[np.ndarray], wrapped: dict, frozen_gmm: GmmParams, lam: float):
    """Summed reconstruction error plus ``lam`` times summed frozen-GMM energy."""
    fw = nn.forward(segments, wrapped["enc"], wrapped["dec"], wrapped["est"])
    recon = ag.sum(fw.sq_error)
    energy = ag.sum(energy_tensor(fw.y, fw.gamma, frozen_gmm))
    total = recon + energy * lam
    return total, recon, energy


def full_objective(segments: Sequence[np.ndarray], net: nn.Network, gmm: GmmParams, lam: float):
    """Dataset-level objective with mixture weights from the estimation network."""
    y, err = nn.latent_batch(segments, net)
    return _objective_from_latents(y, err, net, gmm, lam)


def _objective_from_latents(y: np.ndarray, err: np.ndarray, net: nn.Network, gmm: GmmParams, lam: float):
    gamma = nn.estimate_membership(y, net.est)
    live = GmmParams(phi=gamma.mean(axis=0), mu=gmm.mu, sigma=gmm.sigma, eps=gmm.eps)
    live._chol = gmm.cholesky()
    energy = float(sample_energies(y, live).sum())
    recon = float(err.sum())
    return recon + lam * energy, recon, energy


def objective_bounds(o1: float, o3: float, trace: TrainingTrace | None = None) -> tuple[float, float]:
    """Check the lower/upper objective bounds; a violation is logged and flagged."""
    if not o1 <= o3:
        log.warning("objective bound violated: o1=%.6g > o3=%.6g", o1, o3)
        if trace is not None:
            trace.bound_violation = True
    return o1, o3


# ----------------------------------------------------------------------
# training loop


def _fit_gmm(y: np.ndarray, K: int, config: TrainingConfig, warm: GmmParams | None):
    if warm is None:
        init = kmeans_init(y, K, seed=config.seed, eps=config.eps)
    else:
        init = GmmParams(phi=warm.phi, mu=warm.mu, sigma=warm.sigma, eps=warm.eps)
    fitted, history = em_refine(y, init, max_iters=config.em_max_iters, tol=config.em_tol, return_history=True)
    return fitted, history


def _progress(config: TrainingConfig, rec: RoundRecord) -> None:
    if config.progress:
        print(f"t={rec.round} o_t={rec.objective:.6g} recon={rec.recon:.6g} energy={rec.energy:.6g} "
              f"seconds={rec.seconds:.2f}", file=sys.stderr)


@dataclass
class _Pretrained:
    net: nn.Network
    losses: list[float]
    steps: int
    recon: float


def _pretrain(segments: list[np.ndarray], config: TrainingConfig, K: int) -> _Pretrained:
    net = nn.Network.initialize(config.H, config.D_E, K, config.seed)
    net, losses, step = pretrain_autoencoder(segments, config, net)
    return _Pretrained(net, losses, step, reconstruction_total(segments, net))


def _train_fixed(segments: list[np.ndarray], config: TrainingConfig, K: int, trace: TrainingTrace,
                 pretrained: _Pretrained | None = None):
    """Pretrain, then ``T`` rounds of (joint SGD epoch, EM refit).

    The first EM fit (K-means initialised) follows pretraining; every later
    fit is warm-started and sees the latents produced by the epoch just
    finished. Each trace record is taken right after an EM fit, so the
    objective pairs the networks with the mixture fitted to their own
    latents. Record 1 is the pretrained state; record ``t + 1`` follows
    joint epoch ``t``.

    ``pretrained`` lets several K share one pretraining run: the encoder and
    decoder initialisation does not depend on K, and the estimator is
    re-initialised here exactly as a fresh run would draw it.
    """
    if pretrained is None:
        pretrained = _pretrain(segments, config, K)
    net = pretrained.net.copy()
    net.est = nn.Network.initialize(config.H, config.D_E, K, config.seed).est
    step = pretrained.steps
    o1 = pretrained.recon
    trace.pretrain_losses = list(pretrained.losses)
    rng = np.random.default_rng([config.seed, 2])

    started = time.perf_counter()
    y, err = nn.latent_batch(segments, net)
    gmm, history = _fit_gmm(y, K, config, None)
    _record(trace, config, 1, y, err, net, gmm, o1, history, started)
    for t in range(1, config.T + 1):
        started = time.perf_counter()
        for idx in _batches(len(segments), config.batch_size, rng):
            w = nn.wrap_network(net)
            total, _, _ = joint_loss([segments[i] for i in idx], w, gmm, config.lam)
            if not np.isfinite(total.item()):
                raise NumericalError(f"joint objective became non-finite in round {t}")
            (total * (1.0 / len(idx))).backward()
            _apply(net, w, nn.learning_rate(config.eta0, config.decay, step), ("enc", "dec", "est"), config.clip_norm)
            step += 1
        y, err = nn.latent_batch(segments, net)
        gmm, history = _fit_gmm(y, K, config, gmm)
        _record(trace, config, t + 1, y, err, net, gmm, o1, history, started)
    trace.o1, trace.o3 = objective_bounds(o1, trace.rounds[-1].objective, trace)
    return net, gmm, o1, y


def _record(trace, config, t, y, err, net, gmm, o1, history, started) -> None:
    obj, recon, energy = _objective_from_latents(y, err, net, gmm, config.lam)
    if not np.isfinite(obj):
        raise NumericalError(f"objective became non-finite at trace point {t}")
    rec = RoundRecord(t, obj, recon, energy, o1, obj, history[0], history[-1], time.perf_counter() - started)
    trace.rounds.append(rec)
    _progress(config, rec)


def surrogate_train(train: Dataset, config: TrainingConfig | None = None, normalized: bool = True):
    """Segment, pretrain, then alternate EM and one epoch of joint SGD for ``T`` rounds."""
    config = config or TrainingConfig()
    trace = TrainingTrace()
    M = config.M
    if M is None:
        M, trace.M_scores = select_num_segments(train, config.M_max, config.resample_len, config.seed,
                                                return_scores=True)
        log.info("selected M=%d", M)
    K = config.K
    if K is None:
        K, trace.K_scores = select_num_components(train, config, M)
        log.info("selected K=%d", K)
    segments = collect_segments(train, M)
    if len(segments) < K:
        raise ValueError(f"{len(segments)} segments cannot support K={K} components")
    net, gmm, o1, y = _train_fixed(segments, config, K, trace)
    resolved = TrainingConfig.from_dict({**config.to_dict(), "M": M, "K": K})
    model = TrainedModel(M, net, gmm, resolved, normalized, np.sort(sample_energies(y, gmm)), o1)
    return model, trace


def select_num_components(train: Dataset, config: TrainingConfig, M: int) -> tuple[int, dict]:
    """Pick K with the lowest mean held-out energy on a split of the normal series."""
    fit, held = holdout_split(train, config.validation_fraction, config.seed)
    if len(held) == 0:
        return config.k_candidates[0], {}
    fit_segments = collect_segments(fit, M)
    held_segments = collect_segments(held, M)
    scores = {}
    shared = None
    for K in config.k_candidates:
        if len(fit_segments) < K:
            continue
        cfg = TrainingConfig.from_dict({**config.to_dict(), "M": M, "K": K, "progress": False})
        shared = shared or _pretrain(fit_segments, cfg, K)
        net, gmm, _, _ = _train_fixed(fit_segments, cfg, K, TrainingTrace(), shared)
        y, _ = nn.latent_batch(held_segments, net)
        scores[K] = float(np.mean(sample_energies(y, gmm)))
        log.info("validation K=%d mean energy %.6g", K, scores[K])
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores
