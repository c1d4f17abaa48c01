"""Shared helpers: graph generators and a finite-difference gradient check."""

import numpy as np

from bodyattn.graph import EmbodimentGraph, NodeSpec
from bodyattn.training import backward_pass, loss_mse


def random_tree(rng: np.random.Generator, n: int) -> EmbodimentGraph:
    """Uniform random attachment tree with n nodes, root 0."""
    nodes = tuple(
        NodeSpec(i, f"n{i}", int(rng.integers(1, 4)), int(rng.integers(0, 3)), i == 0)
        for i in range(n)
    )
    edges = tuple((int(rng.integers(0, i)), i) for i in range(1, n))
    return EmbodimentGraph(nodes, edges)


def random_graph(rng: np.random.Generator, n: int, extra: int = 0) -> EmbodimentGraph:
    """Random connected graph: attachment tree plus up to ``extra`` chords."""
    g = random_tree(rng, n)
    edges = set(g.edges)
    for _ in range(extra):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            edges.add((min(int(i), int(j)), max(int(i), int(j))))
    return EmbodimentGraph(g.nodes, tuple(sorted(edges)))


def group_relative_errors(policy, obs, targets, h=1e-6):
    """Central finite differences against backward_pass, per parameter group."""
    _, grads = backward_pass(policy, obs, targets)
    errors = {}
    for key in policy.params.keys():
        base = policy.params[key].copy()
        flat = policy.params[key].reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_mse(policy.predict(obs), targets)
            flat[i] = orig - h
            down = loss_mse(policy.predict(obs), targets)
            flat[i] = orig
            numeric[i] = (up - down) / (2 * h)
        policy.params[key] = base
        num = numeric.reshape(grads[key].shape)
        denom = max(float(np.linalg.norm(num)), 1e-12)
        errors[key] = float(np.linalg.norm(grads[key] - num)) / denom
    return errors
