"""Autoregressive generation and the three-run deductive capture protocol.

Two inference paths:

* ``generate_full`` reruns the whole model on the growing sequence for every
  new token, so all deductive tensors are recomputed each step. Deductives are
  taken from the forward pass that produced the final token.
* ``generate_cached`` runs the prompt once, freezes keys, values and ``G_LM``
  per layer, and decodes each new token from its own q/k/v rows only.
  Deductives are taken at the last prompt token.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .model import LayerCache, ModelConfig, ModelParams, decoder_layer_forward, embed, model_forward, rms_norm
from .plga import DeductiveSet
from .tensor import Rng, no_grad, softmax_np
from .tokenizer import BOS, EOS, tokenize, truncate_words

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    top_p: float = 0.8
    temperature: float = 1.0
    max_new_tokens: int = 256
    eos_id: int = EOS
    seed: int = 0
    greedy: bool = False

    def __post_init__(self):
        if not 0 < self.top_p <= 1:
            raise InputError("top_p must lie in (0, 1]")
        if not self.temperature > 0:
            raise InputError("temperature must be positive (use greedy=True for argmax decoding)")
        if self.max_new_tokens < 0:
            raise InputError("max_new_tokens must be >= 0")


@dataclass
class LanguageModel:
    cfg: ModelConfig
    params: ModelParams


def nucleus_distribution(logits, top_p: float, temperature: float = 1.0) -> np.ndarray:
    """Renormalised probabilities over the smallest top-mass prefix reaching ``top_p``."""
    logits = np.asarray(logits, dtype=np.float64)
    probs = softmax_np(logits / temperature)
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    keep = min(int(np.searchsorted(cum, top_p, side="left")) + 1, probs.size)
    out = np.zeros_like(probs)
    kept = order[:keep]
    out[kept] = probs[kept] / probs[kept].sum()
    return out


def nucleus_sample(logits, cfg: SamplerConfig, rng: Rng) -> int:
    if cfg.greedy:
        return int(np.argmax(logits))
    dist = nucleus_distribution(logits, cfg.top_p, cfg.temperature)
    cdf = np.cumsum(dist)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    # never land on a zero-probability tail entry through rounding
    idx = min(idx, int(np.flatnonzero(dist)[-1]))
    return idx


@dataclass
class Generation:
    prompt: list[int]
    tokens: list[int]  # prompt followed by generated tokens
    deductives: DeductiveSet
    stats: dict = field(default_factory=dict)

    @property
    def new_tokens(self) -> list[int]:
        return self.tokens[len(self.prompt):]


@dataclass
class CacheState:
    layers: list[LayerCache]
    prompt_length: int

    @property
    def length(self) -> int:
        return self.layers[0].length


def _check_prompt(model: LanguageModel, prompt) -> list[int]:
    prompt = [int(t) for t in prompt]
    if not prompt:
        raise InputError("prompt must be nonempty")
    if len(prompt) > model.cfg.context_length:
        raise InputError(f"prompt of {len(prompt)} tokens exceeds context {model.cfg.context_length}")
    return prompt


def generate_full(model: LanguageModel, prompt, cfg: SamplerConfig, rng: Rng) -> Generation:
    prompt = _check_prompt(model, prompt)
    seq = list(prompt)
    trace = None
    n_new = 0
    with no_grad():
        while n_new < cfg.max_new_tokens and len(seq) < model.cfg.context_length:
            trace = model_forward(model.params, model.cfg, seq)
            tok = nucleus_sample(trace.logits.data[0, -1], cfg, rng)
            seq.append(tok)
            n_new += 1
            if tok == cfg.eos_id:
                break
        if trace is None:
            trace = model_forward(model.params, model.cfg, seq)
    return Generation(prompt=prompt, tokens=seq, deductives=trace.deductives[0])


def prefill(model: LanguageModel, prompt) -> tuple[np.ndarray, DeductiveSet, CacheState]:
    """Full pass over the prompt; returns last-position logits, deductives and the frozen cache."""
    prompt = _check_prompt(model, prompt)
    with no_grad():
        trace = model_forward(model.params, model.cfg, prompt)
    layers = [
        LayerCache(k=k[0].copy(), v=v[0].copy(), glm=glm[0].copy())
        for (k, v), glm in zip(trace.kv, trace.glm)
    ]
    return trace.logits.data[0, -1], trace.deductives[0], CacheState(layers=layers, prompt_length=len(prompt))


def decode_step(model: LanguageModel, token: int, position: int, cache: CacheState) -> np.ndarray:
    """Logits for the position after ``token``, appending its k/v rows to ``cache``."""
    with no_grad():
        x = embed(model.params, model.cfg, [[token]])
        for layer, lc in zip(model.params.layers, cache.layers):
            x = decoder_layer_forward(layer, model.cfg, x, [position], mode="cached", cache=lc).x
        logits = rms_norm(x, model.params.final_norm) @ model.params.w_out
    return logits.data[0, -1]


def generate_cached(model: LanguageModel, prompt, cfg: SamplerConfig, rng: Rng) -> tuple[Generation, CacheState]:
    prompt = _check_prompt(model, prompt)
    logits, deductives, cache = prefill(model, prompt)
    seq = list(prompt)
    n_new = 0
    while n_new < cfg.max_new_tokens and len(seq) < model.cfg.context_length:
        tok = nucleus_sample(logits, cfg, rng)
        seq.append(tok)
        n_new += 1
        if tok == cfg.eos_id:
            break
        if n_new < cfg.max_new_tokens and len(seq) < model.cfg.context_length:
            logits = decode_step(model, tok, len(seq) - 1, cache)
    return Generation(prompt=prompt, tokens=seq, deductives=deductives), cache


# ---------------------------------------------------------------------------
# protocol


@dataclass
class RunRecord:
    name: str
    mode: str  # "full" or "cached"
    seed: int
    sample_ids: list[int]
    prompts: list[list[int]]
    outputs: list[list[int]]  # generated tokens only
    deductives: list[DeductiveSet]

    def __len__(self) -> int:
        return len(self.sample_ids)


@dataclass
class RunBundle:
    runs: dict[str, RunRecord]

    @property
    def run1(self) -> RunRecord:
        return self.runs["run1"]

    @property
    def run2(self) -> RunRecord:
        return self.runs["run2"]

    @property
    def cached(self) -> RunRecord:
        return self.runs["cached"]


def encode_prompt(text: str, n_words: int, context_length: int) -> list[int]:
    """``BOS`` + bytes of the first ``n_words`` words, capped to leave room for one new token."""
    ids = [BOS] + tokenize(truncate_words(text, n_words))
    return ids[: max(1, context_length - 1)]


def run_single(model: LanguageModel, name: str, mode: str, seed: int, ids: list[int], prompts: list[list[int]],
               cfg: SamplerConfig) -> RunRecord:
    base = Rng(seed)
    outputs, deds = [], []
    for sid, prompt in zip(ids, prompts):
        rng = base.derive(sid)
        if mode == "full":
            gen = generate_full(model, prompt, cfg, rng)
        else:
            gen, _ = generate_cached(model, prompt, cfg, rng)
        outputs.append(gen.new_tokens)
        deds.append(gen.deductives)
    return RunRecord(name=name, mode=mode, seed=seed, sample_ids=list(ids), prompts=prompts,
                     outputs=outputs, deductives=deds)


def run_protocol(model: LanguageModel, prompts, cfg: SamplerConfig, prompt_words: int = 200,
                 run2_seed: int | None = None) -> RunBundle:
    """Two uncached runs and one cached run over the same prompts.

    ``prompts`` are strings (truncated to ``prompt_words`` words and byte
    encoded) or pre-tokenised id lists. Run 2 uses ``run2_seed`` (default
    ``cfg.seed + 1``); the cached run reuses run 1's seed so it differs from
    run 1 only by caching. Per-sample streams are seeded ``seed XOR index``.
    """
    prompts = list(prompts)
    if not prompts:
        raise InputError("prompt list is empty")
    ids, encoded = [], []
    for i, p in enumerate(prompts):
        toks = encode_prompt(p, prompt_words, model.cfg.context_length) if isinstance(p, str) else [int(t) for t in p]
        if isinstance(p, str) and not p.strip() or not toks:
            log.warning("skipping empty prompt at index %d", i)
            continue
        ids.append(i)
        encoded.append(toks)
    if not ids:
        raise InputError("every prompt is empty")
    seed2 = cfg.seed + 1 if run2_seed is None else run2_seed
    return RunBundle(runs={
        "run1": run_single(model, "run1", "full", cfg.seed, ids, encoded, cfg),
        "run2": run_single(model, "run2", "full", seed2, ids, encoded, cfg),
        "cached": run_single(model, "cached", "cached", cfg.seed, ids, encoded, cfg),
    })
