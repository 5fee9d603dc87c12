"""Shared builders and oracles for the test suite."""

import numpy as np

from intention_tuning.corpus import build_vocab, generate_synthetic, prompt_texts
from intention_tuning.model import DualHeadModel, ModelConfig

FD_STEP = 1e-5
# Relative error denominator floor: entries whose gradient is below this are
# compared in absolute terms, so exact zeros do not blow the ratio up.
FD_FLOOR = 1e-4


def tiny_config(**overrides) -> ModelConfig:
    base = dict(num_layers=2, embed_dim=16, num_heads=2, vocab_size=40, max_seq_len=64,
                num_intentions=5, lora_rank=4, lora_alpha=8.0, lora_dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_corpus(n=40, seed=3, level="sentence"):
    examples = generate_synthetic(seed, n, level)
    vocab = build_vocab(prompt_texts(examples))
    return examples, vocab


def randomize_adapters(model: DualHeadModel, seed=0, std=0.1):
    """Give every B matrix nonzero values so all adapter paths carry gradient."""
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        for ad in layer.adapters.values():
            ad.B.data = rng.normal(0.0, std, size=ad.B.shape)


def central_difference(loss_fn, tensor, index, step=FD_STEP):
    old = tensor.data[index]
    tensor.data[index] = old + step
    up = loss_fn().item()
    tensor.data[index] = old - step
    down = loss_fn().item()
    tensor.data[index] = old
    return (up - down) / (2 * step)


def relative_error(analytic, numeric, floor=FD_FLOOR):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def max_fd_error(loss_fn, tensors, samples, rng):
    """Worst relative error over ``samples`` random entries drawn across ``tensors``."""
    from intention_tuning import tensorcore as tc

    for t in tensors:
        t.grad = None
    tc.backward(loss_fn())
    sizes = np.array([t.data.size for t in tensors], dtype=float)
    worst = 0.0
    for _ in range(samples):
        t = tensors[rng.choice(len(tensors), p=sizes / sizes.sum())]
        index = np.unravel_index(rng.integers(t.data.size), t.data.shape)
        analytic = 0.0 if t.grad is None else float(t.grad[index])
        worst = max(worst, relative_error(analytic, central_difference(loss_fn, t, index)))
    return worst


def brute_force_split(values, rel_tol=1e-12):
    """Exhaustive variance-split oracle.

    Returns ``(important, cost)`` with 1-based layer indices, or ``None``
    when no split between distinct values reduces the total variance.
    Near-ties resolve to the largest lower side.
    """
    a = np.asarray(values, dtype=float)
    order = np.argsort(a, kind="stable")
    s = a[order]
    costs = {k: float(np.var(s[:k]) + np.var(s[k:])) for k in range(1, s.size) if s[k - 1] != s[k]}
    if not costs:
        return None
    best = min(costs.values())
    if best > np.var(a) * (1 + rel_tol):
        return None
    tol = rel_tol * max(float(np.var(a)), 1e-300)
    k = max(k for k, c in costs.items() if c <= best + tol)
    return {int(i) + 1 for i in order[k:]}, best
