"""Supervised training of policy encoders on synthetic graph-local tasks.

The task generator draws random observations and labels them with a fixed
random teacher whose output at each node depends only on observations within
a chosen graph radius, plus Gaussian label noise. This gives a regression
problem whose ground-truth dependency structure is known exactly, so masked
encoders can be compared against unmasked ones and against an MLP baseline
on even footing: if the mask matches the teacher's locality, the model
family contains the teacher.

Training is plain full-precision minibatch descent (Adam or SGD) through the
autodiff tape, deterministic given the seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderConfig, ParameterStore, init_params, lift, policy_batch
from .graph import Allocation, EmbodimentGraph, default_layout, shortest_path_matrix

__all__ = [
    "SyntheticTask",
    "TrainConfig",
    "MlpBaselineConfig",
    "Policy",
    "TrainResult",
    "generate_task",
    "loss_mse",
    "make_policy",
    "backward_pass",
    "train",
    "evaluate",
    "matched_mlp_config",
    "run_seeds",
    "summary_table",
    "write_curve_csv",
    "read_curve_csv",
]


# ---------------------------------------------------------------- task


@dataclass(frozen=True)
class SyntheticTask:
    """Radius-local regression problem on a body graph."""

    graph: EmbodimentGraph
    alloc: Allocation
    radius: int
    sigma: float
    train_obs: np.ndarray
    train_targets: np.ndarray
    val_obs: np.ndarray
    val_targets: np.ndarray
    teacher: tuple = field(repr=False, default=())

    @property
    def target_width(self) -> int:
        return self.train_targets.shape[1]

    def teacher_targets(self, obs: np.ndarray) -> np.ndarray:
        """Noise-free teacher outputs for a batch of observations."""
        cols = []
        for inputs_idx, w1, b1, w2 in self.teacher:
            x = obs[:, inputs_idx]
            cols.append(np.tanh(x @ w1 + b1) @ w2)
        return np.concatenate(cols, axis=1)


def generate_task(
    g: EmbodimentGraph,
    radius: int,
    sigma: float,
    n_train: int = 2048,
    n_val: int = 512,
    seed: int = 0,
) -> SyntheticTask:
    """Sample a dataset labeled by a fixed random radius-local teacher.

    The teacher at node i is a small tanh network reading the observations of
    every node within ``radius`` hops of i; targets get N(0, sigma^2) noise on
    both splits. Scales are kept gentle (near-linear tanh regime, output
    std well under 1) so the problem is learnable at desk scale.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    alloc = default_layout(g)
    sp = shortest_path_matrix(g)

    teacher = []
    for node in g.nodes:
        if node.action_dim == 0:
            continue
        hood = np.nonzero(sp[node.id] <= radius)[0]
        idx = np.concatenate([np.arange(a, b) for j in hood for a, b in alloc.obs_ranges[j]])
        fan_in = idx.size
        hidden = 8
        w1 = rng.standard_normal((fan_in, hidden)) * (0.45 / math.sqrt(fan_in))
        b1 = rng.standard_normal(hidden) * 0.05
        w2 = rng.standard_normal((hidden, node.action_dim)) * (0.3 / math.sqrt(hidden))
        teacher.append((idx, w1, b1, w2))

    task = SyntheticTask(
        graph=g,
        alloc=alloc,
        radius=radius,
        sigma=sigma,
        train_obs=rng.standard_normal((n_train, alloc.obs_width)),
        train_targets=np.zeros((0, 0)),
        val_obs=rng.standard_normal((n_val, alloc.obs_width)),
        val_targets=np.zeros((0, 0)),
        teacher=tuple(teacher),
    )
    train_t = task.teacher_targets(task.train_obs) + sigma * rng.standard_normal(
        (n_train, sum(n.action_dim for n in g.nodes))
    )
    val_t = task.teacher_targets(task.val_obs) + sigma * rng.standard_normal(
        (n_val, sum(n.action_dim for n in g.nodes))
    )
    object.__setattr__(task, "train_targets", train_t)
    object.__setattr__(task, "val_targets", val_t)
    return task


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"width mismatch: {pred.shape} vs {target.shape}")
    return float(((pred - target) ** 2).mean())


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    target_val_mse: float | None = None  # stop early once reached

    def __post_init__(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")


@dataclass(frozen=True)
class MlpBaselineConfig:
    """Flat baseline: stacked token embeddings through dense ReLU layers."""

    hidden: tuple[int, ...] = (64,)
    d_model: int = 32

    def __post_init__(self) -> None:
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")


@dataclass
class Policy:
    """A trainable pipeline: graph-aware encoder or flat MLP baseline."""

    graph: EmbodimentGraph
    alloc: Allocation
    cfg: EncoderConfig | MlpBaselineConfig
    params: ParameterStore
    attention_impl: str = "dense"

    @property
    def kind(self) -> str:
        return "mlp" if isinstance(self.cfg, MlpBaselineConfig) else "encoder"

    def forward_tensor(self, P: dict[str, Tensor], obs: np.ndarray) -> Tensor:
        """Batched prediction (node-order flat action vector) on the tape."""
        if self.kind == "encoder":
            parts = policy_batch(obs, self.graph, self.alloc, self.cfg, P, self.attention_impl)
            return ad.concat_last(parts)
        return _mlp_forward(obs, self.graph, self.alloc, self.cfg, P)

    def predict(self, obs: np.ndarray) -> np.ndarray:
        return self.forward_tensor(lift(self.params), np.asarray(obs)).value


def _mlp_forward(
    obs: np.ndarray,
    g: EmbodimentGraph,
    alloc: Allocation,
    cfg: MlpBaselineConfig,
    P: dict[str, Tensor],
) -> Tensor:
    parts = []
    for node in g.nodes:
        x = alloc.node_obs(obs, node.id)
        parts.append(Tensor(x) @ P[f"tok/{node.id}/w"] + P[f"tok/{node.id}/b"])
    x = ad.concat_last(parts)  # (batch, n * d_model)
    for i in range(len(cfg.hidden)):
        x = ad.relu(x @ P[f"mlp/w{i}"] + P[f"mlp/b{i}"])
    return x @ P["mlp/wout"] + P["mlp/bout"]


def _init_mlp_params(g: EmbodimentGraph, cfg: MlpBaselineConfig, seed: int) -> ParameterStore:
    rng = np.random.default_rng(seed)
    d = cfg.d_model

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    p: dict[str, np.ndarray] = {}
    for node in g.nodes:
        p[f"tok/{node.id}/w"] = uniform((node.obs_dim, d), node.obs_dim)
        p[f"tok/{node.id}/b"] = uniform((d,), node.obs_dim)
    width = g.n * d
    for i, h in enumerate(cfg.hidden):
        p[f"mlp/w{i}"] = uniform((width, h), width)
        p[f"mlp/b{i}"] = uniform((h,), width)
        width = h
    out_w = sum(node.action_dim for node in g.nodes)
    p["mlp/wout"] = uniform((width, out_w), width)
    p["mlp/bout"] = uniform((out_w,), width)
    return ParameterStore(p)


def make_policy(
    g: EmbodimentGraph,
    cfg: EncoderConfig | MlpBaselineConfig,
    seed: int,
    alloc: Allocation | None = None,
    attention_impl: str = "dense",
) -> Policy:
    alloc = default_layout(g) if alloc is None else alloc
    if isinstance(cfg, MlpBaselineConfig):
        params = _init_mlp_params(g, cfg, seed)
    else:
        params = init_params(g, cfg, seed)
    return Policy(g, alloc, cfg, params, attention_impl)


def matched_mlp_config(g: EmbodimentGraph, enc_cfg: EncoderConfig, tol: float = 0.10) -> MlpBaselineConfig:
    """Single-hidden-layer MLP sized to the encoder's parameter count.

    Solves for the hidden width that brings the totals within ``tol``; the
    tokenizer block is shared between the two architectures by construction.
    """
    from .encoder import parameter_count

    target = parameter_count(g, enc_cfg)
    d = enc_cfg.d_model
    tok = sum(node.obs_dim * d + d for node in g.nodes)
    n_in = g.n * d
    n_out = sum(node.action_dim for node in g.nodes)
    # tok + n_in*h + h + h*n_out + n_out = target
    h = max(1, round((target - tok - n_out) / (n_in + 1 + n_out)))
    cfg = MlpBaselineConfig(hidden=(h,), d_model=d)
    got = _mlp_param_count(g, cfg)
    if abs(got - target) / target > tol:
        raise ValueError(f"could not match parameter count: {got} vs {target}")
    return cfg


def _mlp_param_count(g: EmbodimentGraph, cfg: MlpBaselineConfig) -> int:
    d = cfg.d_model
    total = sum(node.obs_dim * d + d for node in g.nodes)
    width = g.n * d
    for h in cfg.hidden:
        total += width * h + h
        width = h
    n_out = sum(node.action_dim for node in g.nodes)
    return total + width * n_out + n_out


# ---------------------------------------------------------------- training loop


def backward_pass(
    policy: Policy, obs: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-batch-loss gradients for every parameter; exact reverse mode."""
    P = lift(policy.params)
    pred = policy.forward_tensor(P, obs)
    if pred.value.shape != targets.shape:
        raise ValueError(f"width mismatch: {pred.value.shape} vs {targets.shape}")
    loss = ad.mse(pred, targets)
    if not np.isfinite(loss.value):
        raise FloatingPointError("non-finite loss in forward pass")
    ad.backward(loss)
    grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.value))
        for k, t in P.items()
    }
    return float(loss.value), grads


@dataclass
class TrainResult:
    params: ParameterStore
    curve: list[tuple[int, float, float]]  # (epoch, train_mse, val_mse)
    stopped_epoch: int

    @property
    def final_val_mse(self) -> float:
        return self.curve[-1][2]

    @property
    def final_train_mse(self) -> float:
        return self.curve[-1][1]


class _Adam:
    def __init__(self, params: ParameterStore, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: ParameterStore, grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] = params[k] - c.learning_rate * (self.m[k] / bc1) / (
                np.sqrt(self.v[k] / bc2) + c.eps
            )


def train(task: SyntheticTask, policy: Policy, cfg: TrainConfig) -> TrainResult:
    """Minibatch training with a fixed, seed-determined batch order.

    Curve rows are (epoch, train_mse, val_mse). During training the train
    column is the epoch's average minibatch loss and the validation column a
    full-split evaluation; the final row is replaced by a full evaluation of
    both splits, so it agrees exactly with evaluate() on the returned params.

    Raises FloatingPointError if the loss goes non-finite. Stops early once
    validation MSE reaches cfg.target_val_mse, when one is set.
    """
    rng = np.random.default_rng(cfg.seed)
    n = task.train_obs.shape[0]
    bs = min(cfg.batch_size, n)
    opt = _Adam(policy.params, cfg) if cfg.optimizer == "adam" else None
    curve: list[tuple[int, float, float]] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for lo in range(0, n, bs):
            idx = order[lo : lo + bs]
            loss, grads = backward_pass(policy, task.train_obs[idx], task.train_targets[idx])
            batch_losses.append(loss)
            if opt is not None:
                opt.step(policy.params, grads)
            else:
                for k, g in grads.items():
                    policy.params[k] = policy.params[k] - cfg.learning_rate * g
        val_mse = loss_mse(policy.predict(task.val_obs), task.val_targets)
        curve.append((epoch, float(np.mean(batch_losses)), val_mse))
        if cfg.target_val_mse is not None and val_mse <= cfg.target_val_mse:
            break
    metrics = evaluate(task, policy)
    curve[-1] = (curve[-1][0], metrics["train_mse"], metrics["val_mse"])
    return TrainResult(policy.params, curve, stopped_epoch=curve[-1][0])


def evaluate(task: SyntheticTask, policy: Policy) -> dict[str, float]:
    return {
        "train_mse": loss_mse(policy.predict(task.train_obs), task.train_targets),
        "val_mse": loss_mse(policy.predict(task.val_obs), task.val_targets),
    }


# ---------------------------------------------------------------- experiments


def run_seeds(
    task_factory,
    policy_factory,
    train_cfg: TrainConfig,
    seeds: list[int],
) -> list[TrainResult]:
    """Train one policy per seed; both task and policy are seed-dependent."""
    results = []
    for seed in seeds:
        task = task_factory(seed)
        policy = policy_factory(task, seed)
        results.append(train(task, policy, replace(train_cfg, seed=seed)))
    return results


def summary_table(rows: dict[str, list[TrainResult]]) -> str:
    """Cross-seed summary: one line per variant with mean and spread."""
    lines = [f"{'variant':<14} {'seeds':>5} {'val mse mean':>14} {'val mse max':>13} {'epochs':>7}"]
    for name, results in rows.items():
        vals = np.array([r.final_val_mse for r in results])
        epochs = np.array([r.stopped_epoch for r in results])
        lines.append(
            f"{name:<14} {len(results):>5} {vals.mean():>14.3e} {vals.max():>13.3e} "
            f"{epochs.mean():>7.1f}"
        )
    return "\n".join(lines)


def write_curve_csv(path, curve: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, train_mse, val_mse in curve:
            writer.writerow([epoch, repr(train_mse), repr(val_mse)])


def read_curve_csv(path) -> list[tuple[int, float, float]]:
    """Inverse of write_curve_csv."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["epoch", "train_mse", "val_mse"]:
        raise ValueError(f"{path} is not a loss-curve CSV")
    return [(int(r[0]), float(r[1]), float(r[2])) for r in rows[1:]]
