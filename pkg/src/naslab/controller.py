"""Autoregressive architecture policy.

A single-layer LSTM consumes action-token embeddings (the previously chosen
action feeds the next step) and emits masked softmax distributions through
two heads: one over the four activations, one over predecessor indices,
masked to the nodes that already exist. Updates are REINFORCE with an EMA
baseline and entropy bonus, optionally combined with a teacher-forced
reconstruction penalty on replayed architectures. All gradients are
hand-derived BPTT, checkable against central differences.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ckpt
from .cellspace import (
    Architecture,
    N_ACTIVATIONS,
    SearchSpace,
    decision_schema,
    validate,
)
from .numkit import Rng, argmax_lowest, clip_global_norm, masked_softmax, sample_categorical

__all__ = [
    "ControllerParams",
    "SampleTrace",
    "PGConfig",
    "init_controller",
    "sample_architecture",
    "teacher_forced_log_prob",
    "reinforce_update",
    "supervised_grad",
    "train_step",
    "argmax_profile",
    "params_to_vector",
    "vector_to_params",
    "save_controller",
    "load_controller",
]

INIT_SCALE = 0.08


@dataclass
class PGConfig:
    """Controller update hyperparameters (plain SGD on the combined loss).

    The learning rate default is sized for raw SGD under a 0.25 global-norm
    clip; with the ENAS-style 3.5e-4 the clipped steps are too small for the
    policy to commit within any desk-scale budget.
    """

    lr: float = 0.05
    entropy_coef: float = 1e-4
    baseline_decay: float = 0.95
    grad_clip: float = 0.25
    supervised_coef: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.baseline_decay < 1:
            raise ValueError("baseline_decay must lie in [0, 1)")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be nonnegative")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


@dataclass
class ControllerParams:
    """Policy weights. Treated as immutable by all ops: updates return a new
    value, so concurrent samplers may share one snapshot."""

    space: SearchSpace
    embed_dim: int
    hidden_dim: int
    embed: np.ndarray  # (n_tokens, embed_dim); last row is the start token
    w_ih: np.ndarray  # (embed_dim, 4*hidden)
    w_hh: np.ndarray  # (hidden, 4*hidden)
    b: np.ndarray  # (4*hidden,)
    w_act: np.ndarray  # (hidden, 4)
    b_act: np.ndarray  # (4,)
    w_pred: np.ndarray  # (hidden, n_nodes-1)
    b_pred: np.ndarray  # (n_nodes-1,)

    ARRAY_FIELDS = ("embed", "w_ih", "w_hh", "b", "w_act", "b_act", "w_pred", "b_pred")

    @property
    def n_tokens(self) -> int:
        # 4 activation tokens, n-1 predecessor tokens, 1 start token
        return N_ACTIVATIONS + (self.space.n_nodes - 1) + 1

    @property
    def start_token(self) -> int:
        return self.n_tokens - 1

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.ARRAY_FIELDS}

    def copy(self) -> "ControllerParams":
        return replace(self, **{name: getattr(self, name).copy() for name in self.ARRAY_FIELDS})


@dataclass
class SampleTrace:
    """Per-step record of one rollout, plus the LSTM hidden state after the
    final step (the architecture embedding h used by the similarity lab)."""

    actions: tuple[int, ...]
    step_log_probs: np.ndarray
    step_entropies: np.ndarray
    argmax_probs: np.ndarray
    final_hidden: np.ndarray


def init_controller(
    rng: Rng, space: SearchSpace, embed_dim: int = 64, hidden_dim: int = 64
) -> ControllerParams:
    """Uniform [-0.08, 0.08] weights, zero biases."""
    if embed_dim <= 0 or hidden_dim <= 0:
        raise ValueError("dims must be positive")
    n_tokens = N_ACTIVATIONS + (space.n_nodes - 1) + 1
    u = lambda shape: rng.uniform(-INIT_SCALE, INIT_SCALE, shape)
    return ControllerParams(
        space=space,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        embed=u((n_tokens, embed_dim)),
        w_ih=u((embed_dim, 4 * hidden_dim)),
        w_hh=u((hidden_dim, 4 * hidden_dim)),
        b=np.zeros(4 * hidden_dim),
        w_act=u((hidden_dim, N_ACTIVATIONS)),
        b_act=np.zeros(N_ACTIVATIONS),
        w_pred=u((hidden_dim, space.n_nodes - 1)),
        b_pred=np.zeros(space.n_nodes - 1),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _token_for_action(kind: str, action: int) -> int:
    # Activation tokens occupy ids 0..3, predecessor tokens follow.
    return action if kind == "activation" else N_ACTIVATIONS + action


class _Step:
    """Forward cache for one unroll step (consumed by _backward)."""

    __slots__ = (
        "kind", "mask", "token", "x", "h_prev", "c_prev",
        "i", "f", "g", "o", "c", "tanh_c", "h", "probs", "action",
    )


def _unroll(params: ControllerParams, actions=None, rng: Rng | None = None):
    """Run the policy over the full decision schema.

    With ``actions`` given the rollout is teacher-forced; otherwise each step
    samples from its masked softmax using ``rng``. Returns (actions, steps).
    """
    space = params.space
    schema = decision_schema(space)
    if actions is not None and len(actions) != len(schema):
        raise ValueError(f"expected {len(schema)} actions, got {len(actions)}")
    hidden = params.hidden_dim
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    token = params.start_token
    steps: list[_Step] = []
    chosen: list[int] = []
    n_pred = space.n_nodes - 1
    for t, step in enumerate(schema):
        st = _Step()
        st.kind = step.kind
        st.token = token
        st.x = params.embed[token]
        st.h_prev = h
        st.c_prev = c
        z = st.x @ params.w_ih + h @ params.w_hh + params.b
        zi, zf, zg, zo = np.split(z, 4)
        st.i = _sigmoid(zi)
        st.f = _sigmoid(zf)
        st.g = np.tanh(zg)
        st.o = _sigmoid(zo)
        st.c = st.f * c + st.i * st.g
        st.tanh_c = np.tanh(st.c)
        st.h = st.o * st.tanh_c
        h, c = st.h, st.c
        if step.kind == "activation":
            logits = h @ params.w_act + params.b_act
            st.mask = None
        else:
            logits = h @ params.w_pred + params.b_pred
            mask = np.zeros(n_pred, dtype=bool)
            mask[: step.choices] = True
            st.mask = mask
        st.probs = masked_softmax(logits, st.mask)
        if actions is not None:
            action = int(actions[t])
            if not 0 <= action < step.choices:
                raise ValueError(f"action {action} invalid at step {step.index} ({step.kind})")
        else:
            action = sample_categorical(rng, st.probs)
        st.action = action
        chosen.append(action)
        token = _token_for_action(step.kind, action)
        steps.append(st)
    return chosen, steps


def _trace_from_steps(actions, steps) -> SampleTrace:
    log_probs = np.array([float(np.log(st.probs[a])) for st, a in zip(steps, actions)])
    entropies = np.array([_entropy(st.probs) for st in steps])
    argmax = np.array([st.probs[argmax_lowest(st.probs)] for st in steps])
    return SampleTrace(
        actions=tuple(actions),
        step_log_probs=log_probs,
        step_entropies=entropies,
        argmax_probs=argmax,
        final_hidden=steps[-1].h.copy(),
    )


def _entropy(probs: np.ndarray) -> float:
    live = probs[probs > 0]
    return float(-np.sum(live * np.log(live)))


def sample_architecture(params: ControllerParams, rng: Rng):
    """Sample one architecture autoregressively; returns (arch, trace)."""
    actions, steps = _unroll(params, rng=rng)
    arch = Architecture.from_actions(params.space, actions)
    return arch, _trace_from_steps(actions, steps)


def teacher_forced_log_prob(params: ControllerParams, arch: Architecture):
    """Log-probability of an existing architecture under the current policy.

    Identical unrolling to sampling with the actions forced, so log-probs and
    the final hidden state match what sampling that sequence would record.
    Returns (total_log_prob, per_step, final_hidden).
    """
    validate(arch)
    if arch.n_nodes != params.space.n_nodes:
        raise ValueError(f"architecture has n={arch.n_nodes}, controller expects {params.space.n_nodes}")
    actions, steps = _unroll(params, actions=arch.to_actions())
    trace = _trace_from_steps(actions, steps)
    return float(trace.step_log_probs.sum()), trace.step_log_probs, trace.final_hidden


def _zero_grads(params: ControllerParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(params, name)) for name in ControllerParams.ARRAY_FIELDS}


def _backward(params: ControllerParams, steps, dlogits_list, grads) -> None:
    """Accumulate BPTT gradients for given per-step dL/dlogits into grads."""
    hidden = params.hidden_dim
    dh = np.zeros(hidden)
    dc = np.zeros(hidden)
    for st, dl in zip(reversed(steps), reversed(dlogits_list)):
        if st.kind == "activation":
            grads["w_act"] += np.outer(st.h, dl)
            grads["b_act"] += dl
            dh = dh + params.w_act @ dl
        else:
            grads["w_pred"] += np.outer(st.h, dl)
            grads["b_pred"] += dl
            dh = dh + params.w_pred @ dl
        do = dh * st.tanh_c
        dc = dc + dh * st.o * (1.0 - st.tanh_c ** 2)
        di = dc * st.g
        dg = dc * st.i
        df = dc * st.c_prev
        dc_prev = dc * st.f
        dz = np.concatenate(
            [
                di * st.i * (1.0 - st.i),
                df * st.f * (1.0 - st.f),
                dg * (1.0 - st.g ** 2),
                do * st.o * (1.0 - st.o),
            ]
        )
        grads["w_ih"] += np.outer(st.x, dz)
        grads["w_hh"] += np.outer(st.h_prev, dz)
        grads["b"] += dz
        grads["embed"][st.token] += params.w_ih @ dz
        dh = params.w_hh @ dz
        dc = dc_prev


def _safe_xlogx_term(probs: np.ndarray, entropy: float) -> np.ndarray:
    # d(-entropy)/dlogits = p * (ln p + H); exactly 0 on masked entries.
    out = np.zeros_like(probs)
    live = probs > 0
    out[live] = probs[live] * (np.log(probs[live]) + entropy)
    return out


def policy_gradient(params: ControllerParams, action_seqs, advantages, entropy_coef: float):
    """Loss and gradients of the REINFORCE surrogate for fixed action
    sequences:

        L = -(1/B) sum_b [ adv_b * sum_t ln pi(a_t) + entropy_coef * sum_t H_t ]

    Returns (loss, grads). Exposed separately so the surrogate gradient can
    be finite-difference checked.
    """
    if len(action_seqs) == 0:
        raise ValueError("empty batch")
    if len(action_seqs) != len(advantages):
        raise ValueError("one advantage per action sequence required")
    grads = _zero_grads(params)
    batch = float(len(action_seqs))
    loss = 0.0
    for actions, adv in zip(action_seqs, advantages):
        adv = float(adv)
        _, steps = _unroll(params, actions=actions)
        dlogits = []
        for st in steps:
            onehot = np.zeros_like(st.probs)
            onehot[st.action] = 1.0
            ent = _entropy(st.probs)
            dl = (adv * (st.probs - onehot) + entropy_coef * _safe_xlogx_term(st.probs, ent)) / batch
            dlogits.append(dl)
            loss -= (adv * np.log(st.probs[st.action]) + entropy_coef * ent) / batch
        _backward(params, steps, dlogits, grads)
    return float(loss), grads


def supervised_grad(params: ControllerParams, archs):
    """Reconstruction penalty: mean teacher-forced cross-entropy over a
    sample of stored architectures. Returns (loss, grads)."""
    if not archs:
        raise ValueError("archs must be nonempty")
    grads = _zero_grads(params)
    n = float(len(archs))
    loss = 0.0
    for arch in archs:
        validate(arch)
        if arch.n_nodes != params.space.n_nodes:
            raise ValueError(
                f"architecture has n={arch.n_nodes}, controller expects {params.space.n_nodes}"
            )
        actions, steps = _unroll(params, actions=arch.to_actions())
        dlogits = []
        for st in steps:
            onehot = np.zeros_like(st.probs)
            onehot[st.action] = 1.0
            dlogits.append((st.probs - onehot) / n)
            loss -= float(np.log(st.probs[st.action])) / n
        _backward(params, steps, dlogits, grads)
    return float(loss), grads


def _apply_sgd(params: ControllerParams, grads: dict[str, np.ndarray], lr: float) -> ControllerParams:
    new = {name: getattr(params, name) - lr * grads[name] for name in ControllerParams.ARRAY_FIELDS}
    return replace(params, **new)


def train_step(params: ControllerParams, pg_batch, baseline: float, buffer_sample, cfg: PGConfig):
    """One combined controller update: policy-gradient loss plus (optionally)
    the replay reconstruction penalty, one clipped SGD step.

    pg_batch is a list of (SampleTrace, reward) pairs. With no buffer sample
    (or supervised_coef == 0) this reduces exactly to the plain REINFORCE
    update. Returns (params', baseline', stats).
    """
    if not pg_batch:
        raise ValueError("pg_batch must be nonempty")
    rewards = np.array([float(r) for _, r in pg_batch])
    if not np.isfinite(rewards).all():
        raise ValueError("rewards must be finite")
    seqs = [trace.actions for trace, _ in pg_batch]
    advantages = rewards - baseline
    pg_loss, grads = policy_gradient(params, seqs, advantages, cfg.entropy_coef)
    sup_loss = 0.0
    if buffer_sample and cfg.supervised_coef != 0.0:
        sup_loss, sup_grads = supervised_grad(params, buffer_sample)
        for name in grads:
            grads[name] += cfg.supervised_coef * sup_grads[name]
    names = list(ControllerParams.ARRAY_FIELDS)
    for name in names:
        if not np.isfinite(grads[name]).all():
            raise FloatingPointError(f"non-finite gradient in {name}; parameters left unchanged")
    clipped, scale = clip_global_norm([grads[n] for n in names], cfg.grad_clip)
    new_params = _apply_sgd(params, dict(zip(names, clipped)), cfg.lr)
    new_baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * float(rewards.mean())
    stats = {
        "pg_loss": pg_loss,
        "sup_loss": sup_loss,
        "mean_reward": float(rewards.mean()),
        "mean_entropy": float(np.mean([t.step_entropies.sum() for t, _ in pg_batch])),
        "grad_scale": scale,
    }
    return new_params, new_baseline, stats


def reinforce_update(params: ControllerParams, batch, baseline: float, cfg: PGConfig):
    """Plain REINFORCE step (no reconstruction term): (params', baseline')."""
    new_params, new_baseline, _ = train_step(params, batch, baseline, None, cfg)
    return new_params, new_baseline


def argmax_profile(params: ControllerParams, rng: Rng, k: int) -> np.ndarray:
    """k x (2n-1) matrix: row j holds the per-step argmax probabilities of
    the j-th sampled rollout."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rows = []
    for _ in range(k):
        _, trace = sample_architecture(params, rng)
        rows.append(trace.argmax_probs)
    return np.stack(rows)


def params_to_vector(params: ControllerParams) -> np.ndarray:
    return np.concatenate([getattr(params, name).ravel() for name in ControllerParams.ARRAY_FIELDS])


def vector_to_params(params: ControllerParams, vec: np.ndarray) -> ControllerParams:
    """Rebuild a params value from a flat vector (finite-difference probes)."""
    out = {}
    offset = 0
    for name in ControllerParams.ARRAY_FIELDS:
        a = getattr(params, name)
        out[name] = vec[offset : offset + a.size].reshape(a.shape).copy()
        offset += a.size
    if offset != vec.size:
        raise ValueError(f"vector has {vec.size} entries, parameters need {offset}")
    return replace(params, **out)


def grads_to_vector(grads: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([grads[name].ravel() for name in ControllerParams.ARRAY_FIELDS])


def save_controller(params: ControllerParams, path) -> None:
    meta = {
        "space": {"n_nodes": params.space.n_nodes},
        "dims": {"embed_dim": params.embed_dim, "hidden_dim": params.hidden_dim},
    }
    ckpt.save_arrays(path, "controller", meta, params.arrays())


def load_controller(path) -> ControllerParams:
    kind, meta, arrays = ckpt.load_arrays(path)
    if kind != "controller":
        raise ValueError(f"{path}: expected a controller checkpoint, got {kind!r}")
    space = SearchSpace(meta["space"]["n_nodes"])
    return ControllerParams(
        space=space,
        embed_dim=meta["dims"]["embed_dim"],
        hidden_dim=meta["dims"]["hidden_dim"],
        **{name: arrays[name] for name in ControllerParams.ARRAY_FIELDS},
    )
