"""A desk-scale multimodal decoder built from the ops in :mod:`.ops`.

Visual features are projected to model width, prepended to language token
embeddings, and run through pre-norm blocks::

    h   = x + Attn(RMSNorm(x))          Q/K/V linear layers with bias
    out = h + W2 silu(W1 RMSNorm(h))

followed by a final RMSNorm and a vocabulary head. Training stages decide
which parameters may move; stage 3 adds a scale ``alpha`` and bias ``beta``
to every linear layer inside the language model.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .ops import (
    IGNORE_INDEX,
    ShapeError,
    attention_backward,
    attention_forward,
    cross_entropy_backward,
    cross_entropy_forward,
    linear_backward,
    linear_forward,
    rmsnorm_backward,
    rmsnorm_forward,
    silu_backward,
    silu_forward,
)
from .store import Parameter, ParameterStore


class Stage(str, Enum):
    ALIGNMENT_PRETRAIN = "1_alignment_pretrain"
    CROSS_MODAL = "2_cross_modal"
    INSTRUCTION_TUNING = "3_instruction_tuning"

    @classmethod
    def parse(cls, value: Union[str, int, "Stage"]) -> "Stage":
        if isinstance(value, Stage):
            return value
        text = str(value).strip()
        for s in cls:
            if text == s.value or text == s.value[0] or text == s.name.lower():
                return s
        raise ValueError(f"unknown training stage {value!r}")


@dataclass(frozen=True)
class KernelConfig:
    num_blocks: int = 1
    d_model: int = 8
    vocab_size: int = 16
    stage: Stage = Stage.CROSS_MODAL
    d_ff: int = 16
    visual_dim: int = 6
    eps: float = 1e-6
    alpha_mean: float = 1.0
    alpha_std: float = 0.02

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage", Stage.parse(self.stage))
        for name in ("num_blocks", "d_model", "vocab_size", "d_ff", "visual_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")

    @property
    def bias_tuning(self) -> bool:
        return self.stage is Stage.INSTRUCTION_TUNING


def block_linears(i: int) -> list[str]:
    p = f"blocks.{i}."
    return [p + "attn.q", p + "attn.k", p + "attn.v", p + "ffn.w1", p + "ffn.w2"]


def tuned_linears(config: KernelConfig) -> list[str]:
    names = [n for i in range(config.num_blocks) for n in block_linears(i)]
    return names + ["head"]


def stage_trainable_set(config: KernelConfig) -> set[str]:
    """Parameter names that receive updates in ``config.stage``."""
    stage = Stage.parse(config.stage)
    projection = {"proj.weight", "proj.bias"}
    if stage is Stage.ALIGNMENT_PRETRAIN:
        return projection
    if stage is Stage.CROSS_MODAL:
        names = set(projection) | {"final_norm.gamma"}
        for i in range(config.num_blocks):
            p = f"blocks.{i}."
            names |= {p + "attn_norm.gamma", p + "ffn_norm.gamma"}
            names |= {f"{p}attn.{x}.{y}" for x in "qkv" for y in ("weight", "bias")}
        return names
    return {f"{lin}.{x}" for lin in tuned_linears(config) for x in ("alpha", "beta")}


def init_store(config: KernelConfig, rng: np.random.Generator) -> ParameterStore:
    """Random parameters for ``config``; trainable flags follow the stage."""
    d, f, v, c = config.d_model, config.d_ff, config.vocab_size, config.visual_dim

    def w(rows: int, cols: int) -> np.ndarray:
        return rng.standard_normal((rows, cols)) / np.sqrt(cols)

    params = [
        Parameter("proj.weight", w(d, c)),
        Parameter("proj.bias", 0.1 * rng.standard_normal(d)),
        Parameter("embed.weight", rng.standard_normal((v, d))),
    ]
    for i in range(config.num_blocks):
        p = f"blocks.{i}."
        params.append(Parameter(p + "attn_norm.gamma", 1.0 + 0.1 * rng.standard_normal(d)))
        for x in "qkv":
            params.append(Parameter(f"{p}attn.{x}.weight", w(d, d)))
            params.append(Parameter(f"{p}attn.{x}.bias", 0.1 * rng.standard_normal(d)))
        params.append(Parameter(p + "ffn_norm.gamma", 1.0 + 0.1 * rng.standard_normal(d)))
        params.append(Parameter(p + "ffn.w1.weight", w(f, d)))
        params.append(Parameter(p + "ffn.w2.weight", w(d, f)))
    params.append(Parameter("final_norm.gamma", 1.0 + 0.1 * rng.standard_normal(d)))
    params.append(Parameter("head.weight", w(v, d)))
    store = ParameterStore(params)
    if config.bias_tuning:
        add_bias_tuning(store, config, rng)
    store.set_trainable(stage_trainable_set(config))
    return store


def add_bias_tuning(store: ParameterStore, config: KernelConfig, rng: np.random.Generator) -> None:
    """Insert ``alpha ~ N(mean, std^2)`` and ``beta = 0`` next to each language-model linear."""
    for lin in tuned_linears(config):
        if f"{lin}.alpha" in store:
            continue
        d_out = store[f"{lin}.weight"].shape[0]
        store.add(Parameter(f"{lin}.alpha", rng.normal(config.alpha_mean, config.alpha_std, d_out)))
        store.add(Parameter(f"{lin}.beta", np.zeros(d_out)))


def _get(P: Mapping[str, np.ndarray], name: str) -> Optional[np.ndarray]:
    return P[name] if name in P else None


def _lin_fwd(P, name: str, x: np.ndarray):
    return linear_forward(x, P[name + ".weight"], _get(P, name + ".bias"),
                          _get(P, name + ".alpha"), _get(P, name + ".beta"))


def _lin_bwd(dy, cache, name: str, grads: dict):
    dx, g = linear_backward(dy, cache)
    for k, v in g.items():
        grads[f"{name}.{k}"] = grads.get(f"{name}.{k}", 0.0) + v
    return dx


def block_forward(x: np.ndarray, P: Mapping[str, np.ndarray], prefix: str = "",
                  eps: float = 1e-6, causal: bool = True):
    n1, c_n1 = rmsnorm_forward(x, P[prefix + "attn_norm.gamma"], eps)
    q, c_q = _lin_fwd(P, prefix + "attn.q", n1)
    k, c_k = _lin_fwd(P, prefix + "attn.k", n1)
    v, c_v = _lin_fwd(P, prefix + "attn.v", n1)
    a, c_a = attention_forward(q, k, v, causal)
    h = x + a
    n2, c_n2 = rmsnorm_forward(h, P[prefix + "ffn_norm.gamma"], eps)
    u, c_u = _lin_fwd(P, prefix + "ffn.w1", n2)
    s, c_s = silu_forward(u)
    f, c_f = _lin_fwd(P, prefix + "ffn.w2", s)
    return h + f, (prefix, c_n1, c_q, c_k, c_v, c_a, c_n2, c_u, c_s, c_f)


def block_backward(dout: np.ndarray, cache, grads: dict) -> np.ndarray:
    prefix, c_n1, c_q, c_k, c_v, c_a, c_n2, c_u, c_s, c_f = cache
    dh = dout.copy()
    ds = _lin_bwd(dout, c_f, prefix + "ffn.w2", grads)
    du = silu_backward(ds, c_s)
    dn2 = _lin_bwd(du, c_u, prefix + "ffn.w1", grads)
    dx_h, dg2 = rmsnorm_backward(dn2, c_n2)
    grads[prefix + "ffn_norm.gamma"] = grads.get(prefix + "ffn_norm.gamma", 0.0) + dg2
    dh += dx_h
    dq, dk, dv = attention_backward(dh, c_a)
    dn1 = (_lin_bwd(dq, c_q, prefix + "attn.q", grads)
           + _lin_bwd(dk, c_k, prefix + "attn.k", grads)
           + _lin_bwd(dv, c_v, prefix + "attn.v", grads))
    dx_n, dg1 = rmsnorm_backward(dn1, c_n1)
    grads[prefix + "attn_norm.gamma"] = grads.get(prefix + "attn_norm.gamma", 0.0) + dg1
    return dh + dx_n


def attention_block(x: np.ndarray, params: Mapping[str, np.ndarray], eps: float = 1e-6,
                    causal: bool = True) -> np.ndarray:
    """One pre-norm block; ``params`` uses the un-prefixed block parameter names."""
    if x.ndim != 2 or x.shape[1] != params["attn_norm.gamma"].shape[0]:
        raise ShapeError(f"block input {x.shape} does not match model width")
    return block_forward(x, params, "", eps, causal)[0]


@dataclass
class Batch:
    visual: np.ndarray  # [N_v x visual_dim] fused visual features
    tokens: np.ndarray  # [N_l] language token ids

    @property
    def targets(self) -> np.ndarray:
        """Row t predicts the token at t + 1; only language tokens are supervised."""
        n_v, n_l = self.visual.shape[0], len(self.tokens)
        t = np.full(n_v + n_l, IGNORE_INDEX, dtype=np.int64)
        if n_l:
            t[n_v - 1:n_v + n_l - 1] = self.tokens
        return t


class TinyMLLM:
    def __init__(self, config: KernelConfig, store: ParameterStore):
        self.config = config
        self.store = store

    def _params(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.store}

    def logits(self, batch: Batch) -> np.ndarray:
        return self._forward(batch)[0]

    def _forward(self, batch: Batch):
        P = self._params()
        vp, c_proj = linear_forward(batch.visual, P["proj.weight"], P["proj.bias"])
        lp = P["embed.weight"][batch.tokens]
        x = np.concatenate([vp, lp], axis=0)
        caches = []
        for i in range(self.config.num_blocks):
            x, c = block_forward(x, P, f"blocks.{i}.", self.config.eps)
            caches.append(c)
        xf, c_fn = rmsnorm_forward(x, P["final_norm.gamma"], self.config.eps)
        logits, c_head = _lin_fwd(P, "head", xf)
        return logits, (c_proj, vp.shape[0], caches, c_fn, c_head)

    def loss(self, batch: Batch) -> float:
        logits, _ = self._forward(batch)
        return float(cross_entropy_forward(logits, batch.targets)[0])

    def loss_and_grads(self, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
        """Loss plus gradients for every parameter (trainable or not)."""
        logits, (c_proj, n_v, caches, c_fn, c_head) = self._forward(batch)
        loss, c_ce = cross_entropy_forward(logits, batch.targets)
        grads: dict[str, np.ndarray] = {}
        dlogits = cross_entropy_backward(c_ce)
        dxf = _lin_bwd(dlogits, c_head, "head", grads)
        dx, dgf = rmsnorm_backward(dxf, c_fn)
        grads["final_norm.gamma"] = dgf
        for c in reversed(caches):
            dx = block_backward(dx, c, grads)
        dvp, dlp = dx[:n_v], dx[n_v:]
        _lin_bwd(dvp, c_proj, "proj", grads)
        demb = np.zeros_like(self.store["embed.weight"])
        np.add.at(demb, batch.tokens, dlp)
        grads["embed.weight"] = demb
        return float(loss), {n: np.asarray(g, dtype=np.float64) for n, g in grads.items()}


class ToyVocab:
    """Whitespace vocabulary for kernel demos; id 0 is reserved for unknown words."""

    def __init__(self, texts: Sequence[str]):
        words = sorted({w for t in texts for w in t.lower().split()})
        self.itos = ["<unk>"] + words
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> np.ndarray:
        return np.array([self.stoi.get(w, 0) for w in text.lower().split()], dtype=np.int64)
