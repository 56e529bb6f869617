"""Temporal compression network and GMM estimation network.

The encoder is a single-layer GRU over a univariate segment.  The decoder is
a GRU initialised with the encoder's final state that, at every step,
attends (additively) over the encoder outputs and is fed its own previous
reconstructed sample.  The estimation network maps a latent vector
``y = [h_c, z_r]`` to mixture memberships.

All forward passes run on :mod:`seq2gmm.autograd` tensors so the same code
path serves inference and training.  Segments of different lengths are
batched with a padding mask; padded steps never touch the recurrent state
and are excluded from attention and from the reconstruction features.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import NumericalError

INIT_SCALE = 0.08

EncoderParams = dict  # name -> ndarray
DecoderParams = dict
EstimatorParams = dict

def _uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


def _init_gru(rng, n_in: int, hidden: int) -> dict:
    p = {}
    for gate in ("z", "r", "h"):
        p[f"W_{gate}"] = _uniform(rng, (n_in, hidden))
        p[f"U_{gate}"] = _uniform(rng, (hidden, hidden))
        p[f"b_{gate}"] = np.zeros(hidden)
    return p


def init_encoder(hidden: int, rng: np.random.Generator) -> EncoderParams:
    return _init_gru(rng, 1, hidden)


def init_decoder(hidden: int, rng: np.random.Generator, attn_dim: int | None = None) -> DecoderParams:
    attn_dim = attn_dim or hidden
    p = _init_gru(rng, 1 + hidden, hidden)
    p["W_q"] = _uniform(rng, (hidden, attn_dim))
    p["W_k"] = _uniform(rng, (hidden, attn_dim))
    p["v"] = _uniform(rng, (attn_dim, 1))
    p["W_o"] = _uniform(rng, (2 * hidden, 1))
    p["b_o"] = np.zeros(1)
    return p


def init_estimator(latent_dim: int, middle: int, n_components: int, rng: np.random.Generator) -> EstimatorParams:
    return {
        "W_1": _uniform(rng, (latent_dim, middle)),
        "b_1": np.zeros(middle),
        "W_2": _uniform(rng, (middle, n_components)),
        "b_2": np.zeros(n_components),
    }


@dataclass
class Network:
    """Encoder, decoder and estimator weights trained together."""

    enc: EncoderParams
    dec: DecoderParams
    est: EstimatorParams
    hidden: int = field(default=8)

    @classmethod
    def initialize(cls, hidden: int, middle: int, n_components: int, seed: int) -> "Network":
        rng = np.random.default_rng(seed)
        enc = init_encoder(hidden, rng)
        dec = init_decoder(hidden, rng)
        est = init_estimator(hidden + 2, middle, n_components, rng)
        return cls(enc=enc, dec=dec, est=est, hidden=hidden)

    def blocks(self) -> dict[str, dict]:
        return {"enc": self.enc, "dec": self.dec, "est": self.est}

    def copy(self) -> "Network":
        return Network(
            enc={k: v.copy() for k, v in self.enc.items()},
            dec={k: v.copy() for k, v in self.dec.items()},
            est={k: v.copy() for k, v in self.est.items()},
            hidden=self.hidden,
        )


def _wrap(params: dict, requires_grad: bool) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def pad_segments(segments: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad variable-length segments; returns (values, mask, lengths)."""
    lengths = np.array([len(s) for s in segments], dtype=np.int64)
    if lengths.size == 0 or lengths.min() < 1:
        raise ValueError("every segment needs at least one sample")
    values = np.zeros((len(segments), int(lengths.max())))
    mask = np.zeros_like(values)
    for i, s in enumerate(segments):
        s = np.asarray(s, dtype=np.float64)
        if not np.all(np.isfinite(s)):
            raise NumericalError(f"segment {i} contains non-finite samples")
        values[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return values, mask, lengths


# ----------------------------------------------------------------------
# batched forward pieces


def _gates(p: dict[str, Tensor]):
    return (p["W_z"], p["W_r"], p["W_h"]), (p["U_z"], p["U_r"], p["U_h"]), (p["b_z"], p["b_r"], p["b_h"])


def encode_batch(values: np.ndarray, mask: np.ndarray, enc: dict[str, Tensor]):
    """Run the encoder GRU; returns final states (B, H) and outputs (B, L, H).

    Padded steps carry the previous state through unchanged, so the last
    output row of every sequence is its final state.
    """
    states = ag.gru_sequence(values[:, :, None], None if mask.all() else mask, *_gates(enc))
    return states[:, -1, :], states


def decode_batch(h_c: Tensor, s_o: Tensor, mask: np.ndarray, dec: dict[str, Tensor], steps: int,
                 keep_attention: bool = False):
    """Attentive decoding for ``steps`` samples; returns (B, steps) outputs."""
    recon, attn = ag.attentive_decode(h_c, s_o, mask, dec["W_k"], dec["W_q"], dec["v"], *_gates(dec),
                                      dec["W_o"], dec["b_o"], steps)
    return recon, (attn if keep_attention else None)


def recon_features_batch(values: np.ndarray, recon: Tensor, mask: np.ndarray, lengths: np.ndarray) -> tuple[Tensor, Tensor]:
    """Per-row (z_r, squared reconstruction error) for a padded batch."""
    masked = recon * mask
    diff = masked - values
    sq = ag.sum(ag.square(diff), axis=1)
    eu = ag.norm(diff, axis=1) * (1.0 / np.sqrt(lengths))
    cos = ag.cosine(Tensor(values), masked, axis=1)
    return ag.stack([eu, cos], axis=1), sq


def estimate_batch(y: Tensor, est: dict[str, Tensor]) -> Tensor:
    hidden = ag.tanh(y @ est["W_1"] + est["b_1"])
    return ag.masked_softmax(hidden @ est["W_2"] + est["b_2"], axis=1)


@dataclass
class BatchForward:
    h_c: Tensor
    recon: Tensor
    z_r: Tensor
    y: Tensor
    sq_error: Tensor
    mask: np.ndarray
    lengths: np.ndarray
    gamma: Tensor | None = None


def forward(segments: Sequence[np.ndarray], enc: dict[str, Tensor], dec: dict[str, Tensor],
            est: dict[str, Tensor] | None = None) -> BatchForward:
    values, mask, lengths = pad_segments(segments)
    h_c, s_o = encode_batch(values, mask, enc)
    recon, _ = decode_batch(h_c, s_o, mask, dec, values.shape[1])
    z_r, sq = recon_features_batch(values, recon, mask, lengths)
    y = ag.concat([h_c, z_r], axis=1)
    gamma = estimate_batch(y, est) if est is not None else None
    return BatchForward(h_c, recon, z_r, y, sq, mask, lengths, gamma)


def latent_batch(segments: Sequence[np.ndarray], net: Network, chunk: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Latent vectors and squared reconstruction errors for many segments."""
    enc, dec = _wrap(net.enc, False), _wrap(net.dec, False)
    ys, errs = [], []
    order = np.argsort([len(s) for s in segments], kind="stable")
    for start in range(0, len(order), chunk):
        idx = order[start : start + chunk]
        fw = forward([segments[i] for i in idx], enc, dec)
        ys.append(fw.y.data)
        errs.append(fw.sq_error.data)
    y = np.empty((len(segments), net.hidden + 2))
    err = np.empty(len(segments))
    if ys:
        y[order] = np.concatenate(ys)
        err[order] = np.concatenate(errs)
    return y, err


# ----------------------------------------------------------------------
# single-segment operations


def encode(segment: Sequence[float], params: EncoderParams) -> tuple[np.ndarray, np.ndarray]:
    """Encode one segment; returns the final state ``h_c`` and every per-step state ``s_o``."""
    values, mask, _ = pad_segments([np.asarray(segment, dtype=np.float64)])
    h, s_o = encode_batch(values, mask, _wrap(params, False))
    return h.data[0], s_o.data[0]


def decode_attentive(h_c: np.ndarray, s_o: np.ndarray, params: DecoderParams, target_len: int,
                     return_attention: bool = False):
    """Reconstruct ``target_len`` samples from ``h_c`` while attending over ``s_o``."""
    if target_len < 1:
        raise ValueError("target_len must be positive")
    s_o = np.atleast_2d(np.asarray(s_o, dtype=np.float64))
    if s_o.shape[0] == 0:
        raise ValueError("attention memory is empty")
    mask = np.ones((1, s_o.shape[0]))
    recon, attn = decode_batch(
        Tensor(np.asarray(h_c, dtype=np.float64)[None, :]),
        Tensor(s_o[None]),
        mask,
        _wrap(params, False),
        target_len,
        keep_attention=return_attention,
    )
    if return_attention:
        return recon.data[0], attn[0]
    return recon.data[0]


def reconstruction_features(s: Sequence[float], s_rec: Sequence[float]) -> np.ndarray:
    """Return ``(||s - s'|| / sqrt(len), cos(s, s'))``; cosine of a zero vector is 0."""
    s = np.asarray(s, dtype=np.float64)
    s_rec = np.asarray(s_rec, dtype=np.float64)
    if s.shape != s_rec.shape:
        raise ValueError(f"length mismatch: {s.shape[0]} vs {s_rec.shape[0]}")
    eu = np.linalg.norm(s - s_rec) / np.sqrt(s.size)
    denom = np.linalg.norm(s) * np.linalg.norm(s_rec)
    cos = float(np.dot(s, s_rec) / denom) if denom > 0 else 0.0
    return np.array([eu, np.clip(cos, -1.0, 1.0)])


@dataclass
class LatentRep:
    h_c: np.ndarray
    s_o: np.ndarray
    z_r: np.ndarray
    y: np.ndarray
    reconstruction: np.ndarray


def latent_representation(segment: Sequence[float], enc: EncoderParams, dec: DecoderParams) -> LatentRep:
    seg = np.asarray(segment, dtype=np.float64)
    h_c, s_o = encode(seg, enc)
    rec = decode_attentive(h_c, s_o, dec, seg.size)
    z_r = reconstruction_features(seg, rec)
    return LatentRep(h_c=h_c, s_o=s_o, z_r=z_r, y=np.concatenate([h_c, z_r]), reconstruction=rec)


def estimate_membership(y, params: EstimatorParams) -> np.ndarray:
    """Mixture memberships for one latent vector (or a batch of them)."""
    if isinstance(y, LatentRep):
        y = y.y
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    gamma = estimate_batch(Tensor(np.atleast_2d(y)), _wrap(params, False)).data
    return gamma[0] if single else gamma


# ----------------------------------------------------------------------
# optimisation


def learning_rate(eta0: float, decay: float, step: int) -> float:
    """Decreasing schedule ``eta0 / (1 + decay * step)``."""
    return eta0 / (1.0 + decay * step)


def sgd_step(params: dict, grads: dict, learning_rate: float, block: str = "params") -> dict:
    """Return ``p - learning_rate * g`` for every array in ``params``."""
    if learning_rate <= 0:
        raise ValueError("learning rate must be positive")
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape {g.shape} does not match {block}.{name} {np.shape(p)}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {block}.{name}")
        out[name] = p - learning_rate * g
    return out


def clip_gradients(grads: dict[str, dict[str, np.ndarray]], max_norm: float) -> dict[str, dict[str, np.ndarray]]:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(np.sum(g * g) for block in grads.values() for g in block.values())))
    if not np.isfinite(total):
        bad = next(f"{b}.{k}" for b, block in grads.items() for k, g in block.items() if not np.all(np.isfinite(g)))
        raise NumericalError(f"non-finite gradient in {bad}")
    if total <= max_norm:
        return grads
    scale = max_norm / total
    return {b: {k: g * scale for k, g in block.items()} for b, block in grads.items()}


def wrap_network(net: Network, requires_grad: bool = True) -> dict[str, dict[str, Tensor]]:
    return {name: _wrap(block, requires_grad) for name, block in net.blocks().items()}


def collect_grads(wrapped: dict[str, dict[str, Tensor]]) -> dict[str, dict[str, np.ndarray]]:
    return {
        name: {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in block.items()}
        for name, block in wrapped.items()
    }
