"""Dense float64 numeric kernel shared by every learning module.

A "matrix" throughout the package is a plain 2-D, C-order, float64 numpy
array; the helpers here add the shape and finiteness contracts the learning
code relies on. All randomness flows through :class:`Rng` so that a single
64-bit seed reproduces a full experiment.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

__all__ = [
    "Rng",
    "matmul",
    "masked_softmax",
    "softmax_cross_entropy",
    "row_softmax",
    "sample_categorical",
    "argmax_lowest",
    "clip_global_norm",
    "finite_diff_check",
]


class Rng:
    """Deterministic seedable random stream (PCG64).

    The generator algorithm is numpy's PCG64, a named public-domain 64-bit
    generator; an identical seed yields an identical stream. ``spawn``
    derives independent child streams through numpy's SeedSequence tree,
    deterministic in spawn order; ``clone`` copies the current state so the
    copy continues the exact same stream.
    """

    def __init__(self, seed: int = 0, *, _sequence: np.random.SeedSequence | None = None):
        self.sequence = _sequence if _sequence is not None else np.random.SeedSequence(int(seed))
        self.gen = np.random.Generator(np.random.PCG64(self.sequence))

    def spawn(self, n: int) -> list["Rng"]:
        """Derive ``n`` independent substreams (SeedSequence spawning)."""
        return [Rng(_sequence=child) for child in self.sequence.spawn(n)]

    def clone(self) -> "Rng":
        """State copy: the clone continues the same stream as the original."""
        other = Rng(_sequence=self.sequence)
        other.gen.bit_generator.state = self.gen.bit_generator.state
        return other

    def random(self) -> float:
        """One uniform draw from [0, 1)."""
        return float(self.gen.random())

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.gen.uniform(low, high, shape)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct indices drawn uniformly from range(n)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct indices from {n}")
        return self.gen.choice(n, size=k, replace=False)


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit shape and finiteness contracts."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul: incompatible shapes ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise FloatingPointError("matmul produced non-finite entries")
    return out


def _check_mask(logits: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.ones(logits.shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != logits.shape:
        raise ValueError(f"mask shape {m.shape} does not match logits shape {logits.shape}")
    if not m.any():
        raise ValueError("mask excludes every entry")
    return m


def masked_softmax(logits, mask=None) -> np.ndarray:
    """Stable softmax over the unmasked entries; masked entries are exactly 0.

    Masked entries are excluded from normalization entirely (not just pushed
    to a large negative logit), so downstream gradients on them are exact
    zeros.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("logits must be 1-D")
    m = _check_mask(z, mask)
    probs = np.zeros_like(z)
    shifted = z[m] - z[m].max()
    e = np.exp(shifted)
    probs[m] = e / e.sum()
    return probs


def softmax_cross_entropy(logits, target: int, mask=None):
    """Return (probs, nll, dlogits) for a categorical target.

    nll is -ln probs[target]; dlogits is probs - onehot(target) on unmasked
    entries and exactly 0 on masked ones.
    """
    z = np.asarray(logits, dtype=np.float64)
    m = _check_mask(z, mask)
    if not 0 <= target < z.size:
        raise ValueError(f"target {target} out of range for {z.size} logits")
    if not m[target]:
        raise ValueError(f"target {target} is masked")
    probs = masked_softmax(z, m)
    nll = -float(np.log(probs[target]))
    dlogits = probs.copy()
    dlogits[target] -= 1.0
    return probs, nll, dlogits


def row_softmax(logits) -> np.ndarray:
    """Row-wise stable softmax for a 2-D batch of logits (no masking)."""
    z = _as_matrix(logits, "logits")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def sample_categorical(rng: Rng, probs) -> int:
    """Draw an index from a categorical distribution, using exactly one
    generator draw (cumulative inversion)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probs must be a nonempty 1-D vector")
    if not np.isfinite(p).all() or (p < 0).any():
        raise ValueError("probs must be finite and nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probs sum to {p.sum()!r}, not 1")
    r = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), r, side="right"))
    if idx >= p.size:
        idx = p.size - 1
    # Float roundoff at the tail must never select a zero-probability bin.
    while p[idx] == 0.0 and idx > 0:
        idx -= 1
    return idx


def argmax_lowest(values) -> int:
    """Index of the maximum entry; exact ties resolve to the lowest index."""
    v = np.asarray(values, dtype=np.float64)
    return int(np.argmax(v))


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float):
    """Scale a list of gradient arrays so their combined L2 norm is at most
    max_norm. Returns (grads, scale); inputs are returned untouched when no
    clipping is needed."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total <= max_norm:
        return list(grads), 1.0
    scale = max_norm / total
    return [g * scale for g in grads], scale


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x,
    analytic_grad,
    eps: float = 1e-5,
) -> float:
    """Max relative error between central differences of ``f`` and an
    analytic gradient, with the denominator floored at 1e-8."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64).ravel()
    g = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if x.shape != g.shape:
        raise ValueError(f"gradient shape {g.shape} does not match x shape {x.shape}")
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        fp = float(f(xp))
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"f is non-finite near coordinate {i}")
        fd = (fp - fm) / (2.0 * eps)
        rel = abs(fd - g[i]) / max(1e-8, abs(fd) + abs(g[i]))
        worst = max(worst, rel)
    return worst
