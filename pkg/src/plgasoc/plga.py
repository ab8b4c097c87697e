"""Power law graph attention: the deductive chain from queries to attention.

Shapes are generic over leading axes. A head-stacked parameter set carries a
leading ``heads`` axis on every tensor, so one call evaluates all heads of a
layer at once while each head still owns its own slice.

    D    = Q^T Q                                   (density matrix)
    A    = SwiGLU-ResNet(D)
    A_LM = iSwiGLU(W A + b_W) + eps                (metric tensor)
    A_P  = A_LM ** P  (entrywise)                  (potential tensor)
    G_LM = a A_P + b_a                             (energy-curvature tensor)
    E_LM = softmax(mask(Q G_LM K^T / sqrt(d_k)))
    V_LM = E_LM V
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, InputError
from .tensor import Rng, Tensor

TENSOR_NAMES = ("A", "A_LM", "A_P", "G_LM")
RESNET_LAYERS = 8
SUBBLOCKS_PER_LAYER = 2
NORM_EPS = 1e-6


def swiglu_width(d_k: int, ratio: tuple[int, int] = (170, 64)) -> int:
    """Residual-unit expansion width scaled from the SwiGLU:LU ratio."""
    return max(1, int(round(d_k * ratio[0] / ratio[1])))


@dataclass
class SubBlock:
    """``x + (silu(n(x) Wg + bg) * (n(x) Wu + bu)) Wd + bd`` with row RMS norm ``n``."""

    gain: Tensor
    w_gate: Tensor
    b_gate: Tensor
    w_up: Tensor
    b_up: Tensor
    w_down: Tensor
    b_down: Tensor

    FIELDS = ("gain", "w_gate", "b_gate", "w_up", "b_up", "w_down", "b_down")

    @classmethod
    def init(cls, rng: Rng, d_k: int, s: int, lead=()) -> "SubBlock":
        lead = tuple(lead)
        return cls(
            gain=T.ones_init(lead + (1, d_k)),
            w_gate=T.glorot_init(rng, d_k, s, lead),
            b_gate=T.zeros_init(lead + (1, s)),
            w_up=T.glorot_init(rng, d_k, s, lead),
            b_up=T.zeros_init(lead + (1, s)),
            w_down=T.glorot_init(rng, s, d_k, lead),
            b_down=T.zeros_init(lead + (1, d_k)),
        )


@dataclass
class PlgaParams:
    """Learnable symbols of one PLGA head (or a stack of heads)."""

    resnet: list[list[SubBlock]]
    W: Tensor
    b_W: Tensor
    P: Tensor
    a: Tensor
    b_a: Tensor
    eps: float = 1e-8

    def __post_init__(self):
        if not self.eps > 0:
            raise ContractError("eps must be positive")
        d_k = self.W.shape[-1]
        for t in (self.W, self.b_W, self.P, self.a, self.b_a):
            if t.shape[-2:] != (d_k, d_k):
                raise ContractError(f"PLGA matrix shape {t.shape} inconsistent with d_k={d_k}")

    @property
    def d_k(self) -> int:
        return self.W.shape[-1]

    @classmethod
    def init(cls, rng: Rng, d_k: int, s: int | None = None, heads: int | None = None,
             eps: float = 1e-8, resnet_layers: int = RESNET_LAYERS) -> "PlgaParams":
        s = swiglu_width(d_k) if s is None else s
        lead = () if heads is None else (heads,)
        resnet = [
            [SubBlock.init(rng, d_k, s, lead) for _ in range(SUBBLOCKS_PER_LAYER)]
            for _ in range(resnet_layers)
        ]
        return cls(
            resnet=resnet,
            W=T.glorot_init(rng, d_k, d_k, lead),
            b_W=T.zeros_init(lead + (d_k, d_k)),
            P=T.ones_init(lead + (d_k, d_k)),
            a=T.glorot_init(rng, d_k, d_k, lead),
            b_a=T.zeros_init(lead + (d_k, d_k)),
            eps=eps,
        )

    def named_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.resnet):
            for j, blk in enumerate(layer):
                for f in SubBlock.FIELDS:
                    out[f"{prefix}resnet.{i}.{j}.{f}"] = getattr(blk, f)
        for f in ("W", "b_W", "P", "a", "b_a"):
            out[f"{prefix}{f}"] = getattr(self, f)
        return out


# ---------------------------------------------------------------------------
# chain


def density_matrix(Q: Tensor) -> Tensor:
    """Gram matrix ``Q^T Q`` of the query rows, shape ``(..., d_k, d_k)``."""
    return T.matmul(T.swapaxes(Q, -1, -2), Q)


def prefix_density(Q: Tensor) -> Tensor:
    """Per-position Gram matrices over the query prefix ``0..t``.

    Input ``(..., seq, d_k)``; output ``(..., seq, d_k, d_k)``. The last
    position equals :func:`density_matrix`.
    """
    lead = Q.shape[:-1]
    d_k = Q.shape[-1]
    outer = T.reshape(Q, lead + (d_k, 1)) * T.reshape(Q, lead + (1, d_k))
    return T.cumsum(outer, axis=-3)


def _row_rms(x: Tensor, gain: Tensor) -> Tensor:
    ms = T.mean(x * x, axis=-1, keepdims=True)
    return x * T.power_scalar(ms + NORM_EPS, -0.5) * gain


def subblock_apply(blk: SubBlock, x: Tensor) -> Tensor:
    h = _row_rms(x, blk.gain)
    gated = T.silu(h @ blk.w_gate + blk.b_gate) * (h @ blk.w_up + blk.b_up)
    return x + (gated @ blk.w_down + blk.b_down)


def resnet_apply(params: PlgaParams, D: Tensor) -> Tensor:
    """Generalise the density matrix into ``A`` through the residual stack."""
    if D.shape[-1] != D.shape[-2] or D.shape[-1] != params.d_k:
        raise ContractError(f"density matrix shape {D.shape} does not match d_k={params.d_k}")
    x = D
    for layer in params.resnet:
        for blk in layer:
            x = subblock_apply(blk, x)
    return x


def metric_tensor(params: PlgaParams, A: Tensor) -> Tensor:
    return T.iswiglu(params.W @ A + params.b_W) + params.eps


def potential_tensor(params: PlgaParams, A_LM: Tensor) -> Tensor:
    return T.elementwise_power(A_LM, params.P)


def energy_curvature(params: PlgaParams, A_P: Tensor) -> Tensor:
    return params.a @ A_P + params.b_a


def causal_mask(n_query: int, n_key: int | None = None) -> np.ndarray:
    """Boolean lower-triangular mask; queries are the last ``n_query`` of ``n_key`` positions."""
    n_key = n_query if n_key is None else n_key
    offset = n_key - n_query
    return np.tril(np.ones((n_query, n_key), dtype=bool), k=offset)


def plga_attend(Q: Tensor, K: Tensor, V: Tensor, G_LM: Tensor, mask=None) -> tuple[Tensor, Tensor]:
    """Project queries and keys through ``G_LM`` and apply attention to ``V``.

    ``G_LM`` is either one matrix per head ``(..., d_k, d_k)`` or one per query
    position ``(..., seq, d_k, d_k)``.
    """
    d_k = Q.shape[-1]
    if K.shape[-1] != d_k or V.shape[-2] != K.shape[-2]:
        raise InputError(f"inconsistent Q/K/V shapes {Q.shape} {K.shape} {V.shape}")
    if G_LM.ndim == Q.ndim + 1:
        lead = Q.shape[:-1]
        qg = T.reshape(T.reshape(Q, lead + (1, d_k)) @ G_LM, lead + (d_k,))
    else:
        qg = Q @ G_LM
    E = (qg @ T.swapaxes(K, -1, -2)) * (1.0 / math.sqrt(d_k))
    if mask is None:
        mask = causal_mask(Q.shape[-2], K.shape[-2])
    E_LM = T.softmax_masked(E, mask)
    return E_LM @ V, E_LM


def deductive_chain(params: PlgaParams, D: Tensor) -> dict[str, Tensor]:
    A = resnet_apply(params, D)
    A_LM = metric_tensor(params, A)
    A_P = potential_tensor(params, A_LM)
    G_LM = energy_curvature(params, A_P)
    return {"A": A, "A_LM": A_LM, "A_P": A_P, "G_LM": G_LM}


def plga_head_forward(params: PlgaParams, Q: Tensor, K: Tensor, V: Tensor, mask=None):
    """Full chain for one head: returns ``(V_LM, deductives)``.

    ``deductives`` maps each of ``A, A_LM, A_P, G_LM`` to its tensor.
    """
    ded = deductive_chain(params, density_matrix(Q))
    V_LM, _ = plga_attend(Q, K, V, ded["G_LM"], mask)
    return V_LM, ded


# ---------------------------------------------------------------------------
# captured deductive outputs


@dataclass
class DeductiveSet:
    """Captured deductive tensors of one sample, each shaped ``(layers, heads, d_k, d_k)``."""

    A: np.ndarray
    A_LM: np.ndarray
    A_P: np.ndarray
    G_LM: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {getattr(self, n).shape for n in TENSOR_NAMES}
        if len(shapes) != 1 or len(next(iter(shapes))) != 4:
            raise ContractError(f"deductive tensors must share one (L, H, d_k, d_k) shape, got {shapes}")

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in TENSOR_NAMES:
            raise InputError(f"unknown deductive tensor {name!r}")
        return getattr(self, name)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.A.shape

    def entry(self, layer: int, head: int) -> dict[str, np.ndarray]:
        return {n: getattr(self, n)[layer, head] for n in TENSOR_NAMES}

    @classmethod
    def from_layers(cls, per_layer: list[dict[str, np.ndarray]], **meta) -> "DeductiveSet":
        """Stack per-layer ``(heads, d_k, d_k)`` captures."""
        return cls(**{n: np.stack([np.asarray(d[n], dtype=np.float64) for d in per_layer]) for n in TENSOR_NAMES},
                   meta=dict(meta))

    def equals(self, other: "DeductiveSet") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in TENSOR_NAMES)
