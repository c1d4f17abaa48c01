"""Policy encoder over a body graph: tokenize, attend, detokenize.

Observations are cut into per-node slices and projected by node-specific
linear tokenizers into a token sequence, one token per body node. A stack of
post-normalization transformer layers processes the sequence; the variant
decides what each layer's attention may look at:

  vanilla      every layer unmasked
  hard         body-induced mask at every layer
  mix          mask on even-indexed layers, unmasked on odd
  soft         no hard mask; a learnable per-head bias indexed by graph
               distance is added to every layer's logits
  hard-random  a single random mask with the body mask's sparsity, reused
               at every layer (ablation control)

Per-node detokenizers read the output features back out as local actions; a
value head averages per-node scalars over all nodes. All forward math runs
on autodiff Tensors so the same code path serves inference and training.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import (
    Allocation,
    EmbodimentGraph,
    build_mask,
    diameter,
    graph_fingerprint,
    random_mask,
    shortest_path_matrix,
    zero_fraction,
)

__all__ = [
    "VARIANTS",
    "EncoderConfig",
    "ParameterStore",
    "init_params",
    "parameter_count",
    "mask_schedule",
    "tokenize",
    "encoder_forward",
    "detokenize",
    "policy_forward",
    "policy_batch",
    "value_batch",
    "lift",
    "receptive_field",
    "save_checkpoint",
    "load_checkpoint",
]

VARIANTS = ("vanilla", "hard", "mix", "soft", "hard-random")

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    variant: str
    num_layers: int = 3
    num_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    use_positional_encoding: bool = False
    shared_tokenizer: bool = False
    mask_seed: int = 0  # hard-random only

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant {self.variant!r} not one of {VARIANTS}")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.num_heads < 1 or self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} must divide evenly into {self.num_heads} heads"
            )
        if self.d_ff < 1:
            raise ValueError("d_ff must be >= 1")


class ParameterStore:
    """Named parameter arrays with a fixed, deterministic key order."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = arrays

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    def __setitem__(self, key: str, value: np.ndarray) -> None:
        self.arrays[key] = value

    def __contains__(self, key: str) -> bool:
        return key in self.arrays

    def keys(self):
        return self.arrays.keys()

    def items(self):
        return self.arrays.items()

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self.arrays.items()})

    def count(self) -> int:
        return sum(v.size for v in self.arrays.values())


def _uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def _tokenizer_widths(g: EmbodimentGraph, cfg: EncoderConfig) -> list[int]:
    if cfg.shared_tokenizer:
        return [max(node.obs_dim for node in g.nodes)] * g.n
    return [node.obs_dim for node in g.nodes]


def init_params(g: EmbodimentGraph, cfg: EncoderConfig, seed: int) -> ParameterStore:
    """Deterministic initialization: uniform fan-in for linear maps,
    gain 1 / bias 0 for normalization, zeros for the soft-bias table."""
    rng = np.random.default_rng(seed)
    d, dff, h = cfg.d_model, cfg.d_ff, cfg.num_heads
    dh = d // h
    p: dict[str, np.ndarray] = {}

    if cfg.shared_tokenizer:
        w = _tokenizer_widths(g, cfg)[0]
        p["tok/shared/w"] = _uniform(rng, (w, d), w)
        p["tok/shared/b"] = _uniform(rng, (d,), w)
    else:
        for node in g.nodes:
            p[f"tok/{node.id}/w"] = _uniform(rng, (node.obs_dim, d), node.obs_dim)
            p[f"tok/{node.id}/b"] = _uniform(rng, (d,), node.obs_dim)

    if cfg.use_positional_encoding:
        p["pos"] = rng.standard_normal((g.n, d)) * 0.02

    for layer in range(cfg.num_layers):
        for head in range(h):
            p[f"layer{layer}/wq{head}"] = _uniform(rng, (d, dh), d)
            p[f"layer{layer}/wk{head}"] = _uniform(rng, (d, dh), d)
            p[f"layer{layer}/wv{head}"] = _uniform(rng, (d, dh), d)
        p[f"layer{layer}/wo"] = _uniform(rng, (d, d), d)
        p[f"layer{layer}/ln1/gain"] = np.ones(d)
        p[f"layer{layer}/ln1/bias"] = np.zeros(d)
        p[f"layer{layer}/ff/w1"] = _uniform(rng, (d, dff), d)
        p[f"layer{layer}/ff/b1"] = _uniform(rng, (dff,), d)
        p[f"layer{layer}/ff/w2"] = _uniform(rng, (dff, d), dff)
        p[f"layer{layer}/ff/b2"] = _uniform(rng, (d,), dff)
        p[f"layer{layer}/ln2/gain"] = np.ones(d)
        p[f"layer{layer}/ln2/bias"] = np.zeros(d)

    if cfg.variant == "soft":
        p["soft/table"] = np.zeros((h, diameter(g) + 1))

    for node in g.nodes:
        if node.action_dim > 0:
            p[f"det/{node.id}/w"] = _uniform(rng, (d, node.action_dim), d)
            p[f"det/{node.id}/b"] = _uniform(rng, (node.action_dim,), d)
        p[f"val/{node.id}/w"] = _uniform(rng, (d, 1), d)

    return ParameterStore(p)


def parameter_count(g: EmbodimentGraph, cfg: EncoderConfig) -> int:
    """Closed-form size of the store; must match a direct enumeration."""
    d, dff, h = cfg.d_model, cfg.d_ff, cfg.num_heads
    if cfg.shared_tokenizer:
        total = _tokenizer_widths(g, cfg)[0] * d + d
    else:
        total = sum(node.obs_dim * d + d for node in g.nodes)
    if cfg.use_positional_encoding:
        total += g.n * d
    per_layer = 3 * h * d * (d // h) + d * d + 2 * d + d * dff + dff + dff * d + d + 2 * d
    total += cfg.num_layers * per_layer
    if cfg.variant == "soft":
        total += h * (diameter(g) + 1)
    total += sum(d * node.action_dim + node.action_dim for node in g.nodes)
    total += g.n * d
    return total


def mask_schedule(g: EmbodimentGraph, cfg: EncoderConfig) -> list[np.ndarray | None]:
    """Per-layer attention mask (None means unmasked)."""
    if cfg.variant == "vanilla" or cfg.variant == "soft":
        return [None] * cfg.num_layers
    body = build_mask(g)
    if cfg.variant == "hard":
        return [body.entries] * cfg.num_layers
    if cfg.variant == "mix":
        return [body.entries if i % 2 == 0 else None for i in range(cfg.num_layers)]
    # hard-random: one sampled mask with the body mask's sparsity, every layer
    rand = random_mask(g.n, zero_fraction(body), cfg.mask_seed)
    return [rand.entries] * cfg.num_layers


def lift(params: ParameterStore) -> dict[str, Tensor]:
    """Wrap every parameter array as an autodiff leaf for one pass."""
    return {k: Tensor(v) for k, v in params.items()}


# ---------------------------------------------------------------- forward pieces


def _tokenize_t(
    obs: np.ndarray,
    g: EmbodimentGraph,
    alloc: Allocation,
    cfg: EncoderConfig,
    P: dict[str, Tensor],
) -> Tensor:
    if obs.shape[-1] != alloc.obs_width:
        raise ValueError(f"observation width {obs.shape[-1]}, expected {alloc.obs_width}")
    parts = []
    pad_to = _tokenizer_widths(g, cfg)[0] if cfg.shared_tokenizer else None
    for node in g.nodes:
        x = alloc.node_obs(obs, node.id)
        if cfg.shared_tokenizer:
            padded = np.zeros(obs.shape[:-1] + (pad_to,))
            padded[..., : node.obs_dim] = x
            tok = Tensor(padded) @ P["tok/shared/w"] + P["tok/shared/b"]
        else:
            tok = Tensor(x) @ P[f"tok/{node.id}/w"] + P[f"tok/{node.id}/b"]
        parts.append(tok)
    tokens = ad.stack_nodes(parts)
    if cfg.use_positional_encoding:
        tokens = tokens + P["pos"]
    return tokens


def _encoder_t(
    tokens: Tensor,
    g: EmbodimentGraph,
    cfg: EncoderConfig,
    P: dict[str, Tensor],
    attention_impl: str = "dense",
) -> Tensor:
    if attention_impl not in ("dense", "sparse"):
        raise ValueError(f"attention_impl must be dense or sparse, got {attention_impl!r}")
    schedule = mask_schedule(g, cfg)
    bias_heads = None
    if cfg.variant == "soft":
        dist = shortest_path_matrix(g)
        bias_all = ad.distance_bias(P["soft/table"], dist)
        bias_heads = [ad.take_axis0(bias_all, i) for i in range(cfg.num_heads)]

    x = tokens
    for layer, mask in enumerate(schedule):
        head_outs = []
        for head in range(cfg.num_heads):
            q = x @ P[f"layer{layer}/wq{head}"]
            k = x @ P[f"layer{layer}/wk{head}"]
            v = x @ P[f"layer{layer}/wv{head}"]
            head_outs.append(
                ad.scaled_attention(
                    q,
                    k,
                    v,
                    mask=mask,
                    bias=None if bias_heads is None else bias_heads[head],
                    sparse=attention_impl == "sparse" and mask is not None,
                )
            )
        attn = ad.concat_last(head_outs) @ P[f"layer{layer}/wo"]
        x = ad.layernorm(x + attn) * P[f"layer{layer}/ln1/gain"] + P[f"layer{layer}/ln1/bias"]
        hidden = ad.relu(x @ P[f"layer{layer}/ff/w1"] + P[f"layer{layer}/ff/b1"])
        ff = hidden @ P[f"layer{layer}/ff/w2"] + P[f"layer{layer}/ff/b2"]
        x = ad.layernorm(x + ff) * P[f"layer{layer}/ln2/gain"] + P[f"layer{layer}/ln2/bias"]
    return x


def _action_nodes(g: EmbodimentGraph) -> list[int]:
    return [node.id for node in g.nodes if node.action_dim > 0]


def _detokenize_action_t(
    features: Tensor, g: EmbodimentGraph, P: dict[str, Tensor]
) -> list[Tensor]:
    """Per-node action tensors in node order (action-less nodes skipped)."""
    outs = []
    for i in _action_nodes(g):
        f = ad.select_node(features, i)
        outs.append(f @ P[f"det/{i}/w"] + P[f"det/{i}/b"])
    return outs


def _value_t(features: Tensor, g: EmbodimentGraph, P: dict[str, Tensor]) -> Tensor:
    per_node = [ad.select_node(features, node.id) @ P[f"val/{node.id}/w"] for node in g.nodes]
    return ad.mean_axis(ad.concat_last(per_node), -1)


def policy_batch(
    obs: np.ndarray,
    g: EmbodimentGraph,
    alloc: Allocation,
    cfg: EncoderConfig,
    P: dict[str, Tensor],
    attention_impl: str = "dense",
) -> list[Tensor]:
    """Batched tokenize -> encode -> per-node action tensors (autodiff path)."""
    tokens = _tokenize_t(obs, g, alloc, cfg, P)
    features = _encoder_t(tokens, g, cfg, P, attention_impl)
    return _detokenize_action_t(features, g, P)


def value_batch(
    obs: np.ndarray,
    g: EmbodimentGraph,
    alloc: Allocation,
    cfg: EncoderConfig,
    P: dict[str, Tensor],
) -> Tensor:
    tokens = _tokenize_t(obs, g, alloc, cfg, P)
    features = _encoder_t(tokens, g, cfg, P)
    return _value_t(features, g, P)


# ---------------------------------------------------------------- public single-sample ops


def tokenize(
    obs: np.ndarray,
    g: EmbodimentGraph,
    alloc: Allocation,
    params: ParameterStore,
    cfg: EncoderConfig,
) -> np.ndarray:
    """Project one flat observation into the (n, d_model) token matrix."""
    return _tokenize_t(np.asarray(obs)[None, :], g, alloc, cfg, lift(params)).value[0]


def encoder_forward(
    tokens: np.ndarray,
    g: EmbodimentGraph,
    cfg: EncoderConfig,
    params: ParameterStore,
    attention_impl: str = "dense",
) -> np.ndarray:
    """Run the layer stack on one (n, d_model) token matrix."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.shape != (g.n, cfg.d_model):
        raise ValueError(f"tokens shape {tokens.shape}, expected {(g.n, cfg.d_model)}")
    return _encoder_t(Tensor(tokens[None]), g, cfg, lift(params), attention_impl).value[0]


def detokenize(
    features: np.ndarray,
    g: EmbodimentGraph,
    alloc: Allocation,
    params: ParameterStore,
    head: str = "action",
):
    """Read features out as a flat action vector or a scalar value."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != g.n:
        raise ValueError(f"features shape {features.shape}, expected ({g.n}, d_model)")
    P = lift(params)
    ft = Tensor(features[None])
    if head == "action":
        parts = _detokenize_action_t(ft, g, P)
        per_node: list[np.ndarray] = []
        k = 0
        for node in g.nodes:
            if node.action_dim > 0:
                per_node.append(parts[k].value[0])
                k += 1
            else:
                per_node.append(np.zeros(0))
        return alloc.place_actions(per_node)
    if head == "value":
        return float(_value_t(ft, g, P).value[0])
    raise ValueError(f"head must be 'action' or 'value', got {head!r}")


def policy_forward(
    obs: np.ndarray,
    g: EmbodimentGraph,
    alloc: Allocation,
    cfg: EncoderConfig,
    params: ParameterStore,
    attention_impl: str = "dense",
) -> np.ndarray:
    """Flat observation in, flat action vector out."""
    P = lift(params)
    parts = policy_batch(np.asarray(obs)[None, :], g, alloc, cfg, P, attention_impl)
    per_node: list[np.ndarray] = []
    k = 0
    for node in g.nodes:
        if node.action_dim > 0:
            per_node.append(parts[k].value[0])
            k += 1
        else:
            per_node.append(np.zeros(0))
    return alloc.place_actions(per_node)


# ---------------------------------------------------------------- receptive field


def receptive_field(g: EmbodimentGraph, cfg: EncoderConfig, node: int) -> set[int]:
    """Nodes whose observations the output at ``node`` can depend on."""
    if not 0 <= node < g.n:
        raise ValueError(f"node {node} outside graph of size {g.n}")
    ones = np.ones((g.n, g.n), dtype=bool)
    reach = np.eye(g.n, dtype=bool)
    for mask in mask_schedule(g, cfg):
        step = ones if mask is None else mask.astype(bool)
        reach = (reach.astype(np.int64) @ step.astype(np.int64)) > 0
    return set(int(j) for j in np.nonzero(reach[node])[0])


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(
    path, params: ParameterStore, g: EmbodimentGraph, cfg: EncoderConfig
) -> None:
    """Single-file checkpoint: config + graph hash + all named tensors."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "graph_hash": graph_fingerprint(g),
        "keys": list(params.keys()),
    }
    payload = {f"param::{k}": v for k, v in params.items()}
    buf = io.BytesIO()
    np.savez(buf, _meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, g: EmbodimentGraph) -> tuple[ParameterStore, EncoderConfig]:
    """Load a checkpoint; refuses one saved for a different graph."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["_meta"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        if meta["graph_hash"] != graph_fingerprint(g):
            raise ValueError("checkpoint was saved for a different graph")
        cfg = EncoderConfig(**meta["config"])
        arrays = {k: data[f"param::{k}"].copy() for k in meta["keys"]}
    return ParameterStore(arrays), cfg
