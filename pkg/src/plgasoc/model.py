"""Decoder-only language model built from PLGA layers.

Pre-norm residual blocks (RMS normalisation), rotary positions on queries and
keys, a SwiGLU feed-forward block, and an untied output projection.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, InputError
from .plga import (
    TENSOR_NAMES,
    DeductiveSet,
    PlgaParams,
    causal_mask,
    deductive_chain,
    density_matrix,
    plga_attend,
    prefix_density,
    swiglu_width,
)
from .tensor import Rng, Tensor

NORM_EPS = 1e-6
DENSITY_MODES = ("global", "prefix")
DENSITY_SCALES = ("sum", "mean")


@dataclass
class ModelConfig:
    num_layers: int = 2
    num_heads: int = 2
    d_k: int = 16
    d_ff: int = 85
    swiglu_width: int = 0  # 0 -> scaled from the 170:64 ratio
    vocab_size: int = 259
    context_length: int = 64
    eps: float = 1e-8
    rope_base: float = 10000.0
    resnet_layers: int = 8
    # "global": one density matrix per sequence; "prefix": one per position (strictly causal)
    density: str = "global"
    # "sum": raw Gram matrix; "mean": Gram matrix divided by the number of rows
    density_scale: str = "sum"
    # diagnostic switch: attend through the identity instead of G_LM
    identity_glm: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("num_layers", "num_heads", "d_k", "d_ff", "resnet_layers"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if self.context_length < 2:
            raise InputError("context_length must be >= 2")
        if self.vocab_size < 2:
            raise InputError("vocab_size must be >= 2")
        if self.swiglu_width < 0:
            raise InputError("swiglu_width must be >= 0")
        if not self.eps > 0:
            raise InputError("eps must be positive")
        if self.density not in DENSITY_MODES:
            raise InputError(f"density must be one of {DENSITY_MODES}")
        if self.density_scale not in DENSITY_SCALES:
            raise InputError(f"density_scale must be one of {DENSITY_SCALES}")

    @property
    def d_model(self) -> int:
        return self.num_heads * self.d_k

    @property
    def s(self) -> int:
        return self.swiglu_width or swiglu_width(self.d_k)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LayerParams:
    norm1: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    plga: PlgaParams
    norm2: Tensor
    w1: Tensor
    w3: Tensor
    w2: Tensor

    DENSE = ("norm1", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "norm2", "w1", "w3", "w2")


@dataclass
class ModelParams:
    embedding: Tensor
    layers: list[LayerParams]
    final_norm: Tensor
    w_out: Tensor

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"embedding": self.embedding}
        for i, layer in enumerate(self.layers):
            for f in LayerParams.DENSE:
                out[f"layers.{i}.{f}"] = getattr(layer, f)
            out.update(layer.plga.named_tensors(f"layers.{i}.plga."))
        out["final_norm"] = self.final_norm
        out["w_out"] = self.w_out
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_tensors().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = self.named_tensors()
        if set(named) != set(state):
            missing = sorted(set(named) ^ set(state))[:5]
            raise InputError(f"state dict keys differ from model parameters: {missing}")
        for k, t in named.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise InputError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def zero_grad(self) -> None:
        for t in self.named_tensors().values():
            t.zero_grad()


def init_parameters(cfg: ModelConfig, rng: Rng) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit norm gains, power exponents of one."""
    D, H, dk = cfg.d_model, cfg.num_heads, cfg.d_k
    embedding = T.glorot_init(rng, cfg.vocab_size, D)
    layers = []
    for _ in range(cfg.num_layers):
        layers.append(
            LayerParams(
                norm1=T.ones_init((D,)),
                wq=T.glorot_init(rng, D, D),
                bq=T.zeros_init((D,)),
                wk=T.glorot_init(rng, D, D),
                bk=T.zeros_init((D,)),
                wv=T.glorot_init(rng, D, D),
                bv=T.zeros_init((D,)),
                wo=T.glorot_init(rng, D, D),
                bo=T.zeros_init((D,)),
                plga=PlgaParams.init(rng, dk, cfg.s, heads=H, eps=cfg.eps, resnet_layers=cfg.resnet_layers),
                norm2=T.ones_init((D,)),
                w1=T.glorot_init(rng, D, cfg.d_ff),
                w3=T.glorot_init(rng, D, cfg.d_ff),
                w2=T.glorot_init(rng, cfg.d_ff, D),
            )
        )
    return ModelParams(
        embedding=embedding,
        layers=layers,
        final_norm=T.ones_init((D,)),
        w_out=T.glorot_init(rng, D, cfg.vocab_size),
    )


# ---------------------------------------------------------------------------
# building blocks


def rms_norm(x: Tensor, gain: Tensor) -> Tensor:
    ms = T.mean(x * x, axis=-1, keepdims=True)
    return x * T.power_scalar(ms + NORM_EPS, -0.5) * gain


def rope_tables(d_k: int, positions, base: float = 10000.0) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin tables of shape ``(len(positions), d_k)``; an odd last channel is left unrotated."""
    positions = np.asarray(positions, dtype=np.float64)
    half = d_k // 2
    theta = base ** (-2.0 * np.arange(half) / d_k)
    ang = positions[:, None] * theta[None, :]
    cos = np.ones((positions.size, d_k))
    sin = np.zeros((positions.size, d_k))
    cos[:, 0 : 2 * half : 2] = np.cos(ang)
    cos[:, 1 : 2 * half : 2] = np.cos(ang)
    sin[:, 0 : 2 * half : 2] = np.sin(ang)
    sin[:, 1 : 2 * half : 2] = np.sin(ang)
    return cos, sin


def _pair_swap(d_k: int) -> np.ndarray:
    # (x0, x1) -> (-x1, x0) for each rotated pair
    R = np.zeros((d_k, d_k))
    for i in range(d_k // 2):
        R[2 * i + 1, 2 * i] = -1.0
        R[2 * i, 2 * i + 1] = 1.0
    return R


def apply_rope(x: Tensor, positions, base: float = 10000.0) -> Tensor:
    """Rotate each consecutive channel pair of ``x[..., seq, d_k]`` by its position angle."""
    d_k = x.shape[-1]
    cos, sin = rope_tables(d_k, positions, base)
    return x * cos + (x @ _pair_swap(d_k)) * sin


@dataclass
class LayerCache:
    """Rotated keys, values and frozen ``G_LM`` of one layer, for cached decoding."""

    k: np.ndarray  # (heads, n, d_k)
    v: np.ndarray  # (heads, n, d_k)
    glm: np.ndarray  # (heads, d_k, d_k)

    @property
    def length(self) -> int:
        return self.k.shape[-2]


@dataclass
class LayerOutput:
    x: Tensor
    deductives: dict[str, Tensor] = field(default_factory=dict)
    k: np.ndarray | None = None
    v: np.ndarray | None = None


def _split_heads(x: Tensor, H: int, dk: int) -> Tensor:
    B, S = x.shape[0], x.shape[1]
    return T.swapaxes(T.reshape(x, (B, S, H, dk)), 1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    B, H, S, dk = x.shape
    return T.reshape(T.swapaxes(x, 1, 2), (B, S, H * dk))


def _density(cfg: ModelConfig, q: Tensor) -> Tensor:
    """Density matrices laid out ``(B, H, d_k, d_k)`` or ``(B, S, H, d_k, d_k)`` for the chain."""
    S = q.shape[-2]
    if cfg.density == "global":
        D = density_matrix(q)
        return D * (1.0 / S) if cfg.density_scale == "mean" else D
    D = T.swapaxes(prefix_density(q), 1, 2)  # (B, H, S, dk, dk) -> (B, S, H, dk, dk)
    if cfg.density_scale == "mean":
        D = D * (1.0 / np.arange(1, S + 1)).reshape(1, S, 1, 1, 1)
    return D


def _last_position(cfg: ModelConfig, t: Tensor) -> np.ndarray:
    return t.data if cfg.density == "global" else t.data[:, :, -1]


def decoder_layer_forward(layer: LayerParams, cfg: ModelConfig, x: Tensor, positions,
                          mode: str = "full", cache: LayerCache | None = None) -> LayerOutput:
    """One pre-norm decoder layer.

    ``mode="full"`` evaluates the whole deductive chain on ``x[B, S, D]``.
    ``mode="cached"`` treats ``x`` as new rows appended after ``cache``: their
    keys and values are appended in place, the frozen ``G_LM`` is reused and
    the chain is skipped entirely.
    """
    H, dk = cfg.num_heads, cfg.d_k
    h = rms_norm(x, layer.norm1)
    q = apply_rope(_split_heads(h @ layer.wq + layer.bq, H, dk), positions, cfg.rope_base)
    k = apply_rope(_split_heads(h @ layer.wk + layer.bk, H, dk), positions, cfg.rope_base)
    v = _split_heads(h @ layer.wv + layer.bv, H, dk)
    S = x.shape[1]

    ded: dict[str, Tensor] = {}
    if mode == "full":
        if cfg.identity_glm:
            glm = Tensor(np.eye(dk))
        else:
            chain = deductive_chain(layer.plga, _density(cfg, q))
            if cfg.density == "prefix":
                chain = {n: T.swapaxes(t, 1, 2) for n, t in chain.items()}  # (B, H, S, dk, dk)
            ded = chain
            glm = chain["G_LM"]
        keys, values = k, v
        mask = causal_mask(S)
    elif mode == "cached":
        if cache is None:
            raise ContractError("cached mode needs a LayerCache")
        if x.shape[0] != 1:
            raise ContractError("cached mode decodes a single sample")
        cache.k = np.concatenate([cache.k, k.data[0]], axis=-2)
        cache.v = np.concatenate([cache.v, v.data[0]], axis=-2)
        keys, values = Tensor(cache.k[None]), Tensor(cache.v[None])
        glm = Tensor(np.eye(dk) if cfg.identity_glm else cache.glm)
        mask = causal_mask(S, cache.length)
    else:
        raise ContractError(f"unknown mode {mode!r}")

    v_lm, _ = plga_attend(q, keys, values, glm, mask)
    x = x + (_merge_heads(v_lm) @ layer.wo + layer.bo)
    h2 = rms_norm(x, layer.norm2)
    x = x + ((T.silu(h2 @ layer.w1) * (h2 @ layer.w3)) @ layer.w2)
    return LayerOutput(x=x, deductives=ded, k=k.data, v=v.data)


# ---------------------------------------------------------------------------
# whole model


@dataclass
class ForwardTrace:
    logits: Tensor
    deductives: list[DeductiveSet]  # one per batch row, captured at the last position
    loss: Tensor | None = None
    accuracy: float | None = None
    kv: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    glm: list[np.ndarray] = field(default_factory=list)  # per layer (B, H, dk, dk) at the last position


def _check_tokens(cfg: ModelConfig, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.ndim != 2 or tokens.shape[1] < 1:
        raise InputError(f"tokens must be (batch, seq) with seq >= 1, got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise InputError("token id out of vocabulary range")
    if tokens.shape[1] > cfg.context_length:
        raise InputError(f"sequence length {tokens.shape[1]} exceeds context {cfg.context_length}")
    return tokens


def embed(params: ModelParams, cfg: ModelConfig, tokens) -> Tensor:
    tokens = _check_tokens(cfg, tokens)
    return T.take_rows(params.embedding, tokens)


def model_forward(params: ModelParams, cfg: ModelConfig, tokens, targets=None, weights=None,
                  capture: bool = True) -> ForwardTrace:
    """Logits for every position, plus loss/accuracy when ``targets`` are given.

    ``tokens`` is ``(seq,)`` or ``(batch, seq)``. ``weights`` masks padding
    targets out of both loss and accuracy.
    """
    tokens = _check_tokens(cfg, tokens)
    B, S = tokens.shape
    x = T.take_rows(params.embedding, tokens)
    positions = np.arange(S)
    per_layer: list[dict[str, np.ndarray]] = []
    kv, glm = [], []
    for layer in params.layers:
        out = decoder_layer_forward(layer, cfg, x, positions)
        x = out.x
        kv.append((out.k, out.v))
        if out.deductives:
            last = {n: _last_position(cfg, out.deductives[n]) for n in TENSOR_NAMES}
        else:
            eye = np.broadcast_to(np.eye(cfg.d_k), (B, cfg.num_heads, cfg.d_k, cfg.d_k)).copy()
            last = {n: eye for n in TENSOR_NAMES}
        per_layer.append(last)
        glm.append(last["G_LM"])
    logits = rms_norm(x, params.final_norm) @ params.w_out

    deductives = []
    if capture:
        deductives = [DeductiveSet.from_layers([{n: d[n][b] for n in TENSOR_NAMES} for d in per_layer])
                      for b in range(B)]
    trace = ForwardTrace(logits=logits, deductives=deductives, kv=kv, glm=glm)
    if targets is not None:
        targets = np.asarray(targets, dtype=np.int64)
        if targets.size != tokens.size:
            raise InputError(f"targets shape {targets.shape} != tokens shape {tokens.shape}")
        targets = targets.reshape(tokens.shape)
        w = np.ones(targets.shape) if weights is None else np.asarray(weights, dtype=np.float64).reshape(targets.shape)
        trace.loss = T.cross_entropy(logits, targets, w)
        hits = (logits.data.argmax(axis=-1) == targets).astype(np.float64)
        trace.accuracy = float((hits * w).sum() / w.sum())
    return trace


def uniform_loss(vocab_size: int) -> float:
    return math.log(vocab_size)
