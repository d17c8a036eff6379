"""Training machinery: AdamW with decoupled weight decay, a Lookahead
wrapper, global-norm gradient clipping, restart-free cosine annealing,
and the deterministic training loop."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint, load_checkpoint
from .errors import ConfigError, NumericError
from .losses import LossWeights, total_loss
from .model import SRModel
from .nn import ModelParams
from .tensor import backward


def global_grad_norm(params: ModelParams) -> float:
    """L2 norm over all gradients concatenated, accumulated in float64."""
    sq = 0.0
    for t in params.tensors():
        if t.grad is not None:
            v = t.grad.reshape(-1).astype(np.float64, copy=False)
            sq += float(v @ v)
    return float(np.sqrt(sq))


def clip_grad_norm(params: ModelParams, max_norm: float) -> tuple[float, float]:
    """Scale all gradients in place so their global L2 norm is at most
    max_norm; returns (applied scale, pre-clip norm).

    Rounding of the scaled values can leave the norm a hair above the
    bound, so the scale is re-applied until the recomputed norm fits.
    """
    pre = global_grad_norm(params)
    if pre <= max_norm or pre == 0.0:
        return 1.0, pre
    grads = [t.grad for t in params.tensors() if t.grad is not None]
    total_scale = 1.0
    norm = pre
    for _ in range(8):
        s = max_norm / norm
        total_scale *= s
        for g in grads:
            g *= np.asarray(s, dtype=g.dtype)
        norm = global_grad_norm(params)
        if norm <= max_norm:
            break
    return total_scale, pre


def cosine_lr(t: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine annealing from lr_max at t=0 to lr_min at t=total, no restarts."""
    if t < 0:
        raise ConfigError(f"schedule position {t} is negative")
    if t >= total:
        return float(lr_min)
    return float(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * t / total)))


class AdamW:
    """AdamW with bias-corrected moments and decoupled weight decay."""

    def __init__(self, params: ModelParams, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = params
        self.beta1, self.beta2 = beta1, beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= lr * update

    def state_arrays(self) -> dict[str, dict[str, np.ndarray]]:
        return {"adamw.m": dict(self.m), "adamw.v": dict(self.v)}

    def load_state_arrays(self, state: dict[str, dict[str, np.ndarray]], t: int):
        for k in self.m:
            self.m[k][...] = state["adamw.m"][k]
            self.v[k][...] = state["adamw.v"][k]
        self.t = t


class Lookahead:
    """Keeps slow weights; every k inner steps they chase the fast
    weights by factor alpha and the fast weights reset onto them."""

    def __init__(self, inner: AdamW, k: int = 5, alpha: float = 0.5):
        if k < 1 or not 0.0 < alpha <= 1.0:
            raise ConfigError(f"invalid lookahead settings k={k} alpha={alpha}")
        self.inner = inner
        self.k = k
        self.alpha = alpha
        self.counter = 0
        self.slow = inner.params.clone_data()

    def step(self, lr: float):
        self.inner.step(lr)
        self.counter += 1
        if self.counter % self.k == 0:
            self.sync()

    def sync(self):
        for name, p in self.inner.params.items():
            s = self.slow[name]
            s += self.alpha * (p.data - s)
            p.data[...] = s

    def state_arrays(self) -> dict[str, dict[str, np.ndarray]]:
        state = self.inner.state_arrays()
        state["lookahead.slow"] = dict(self.slow)
        return state

    def load_state_arrays(self, state: dict[str, dict[str, np.ndarray]],
                          t: int, counter: int):
        self.inner.load_state_arrays(state, t)
        for k in self.slow:
            self.slow[k][...] = state["lookahead.slow"][k]
        self.counter = counter


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 2
    lr_max: float = 3e-4
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2
    lookahead_k: int = 5
    lookahead_alpha: float = 0.5
    clip_norm: float = 0.05
    shuffle_snapshots: bool = True
    checkpoint_every: int = 500
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ConfigError("iterations and batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError("need 0 < lr_min <= lr_max")


@dataclass
class IterationStats:
    iteration: int
    lr: float
    loss_total: float
    loss_pix: float
    loss_pts: float
    grad_norm_pre_clip: float
    grad_norm_post_clip: float


def train_loop(model: SRModel, clips: list, cfg: TrainConfig,
               rng: np.random.Generator, out_dir: str | None = None,
               start_iteration: int = 0, optimizer: Lookahead | None = None,
               log_path: str | None = None) -> tuple[list[IterationStats], Lookahead]:
    """Run the optimization protocol over a clip dataset.

    Per iteration: sample a batch of clips, shuffle each clip's snapshot
    order, forward + backward per clip (gradients accumulate), clip the
    global gradient norm, AdamW step at the cosine-annealed rate,
    Lookahead sync every k steps. Fully deterministic given the RNG
    state. Aborts with NumericError (and a diagnostic dump next to the
    log) on a non-finite loss.
    """
    if optimizer is None:
        inner = AdamW(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        optimizer = Lookahead(inner, cfg.lookahead_k, cfg.lookahead_alpha)
    n_clips = len(clips)
    if n_clips == 0:
        raise ConfigError("training requires at least one clip")
    batch = min(cfg.batch_size, n_clips)
    stats: list[IterationStats] = []
    log_f = open(log_path, "a") if log_path else None
    if log_f and start_iteration == 0:
        log_f.write("# iter, lr, loss_total, loss_pix, loss_pts, grad_norm_pre_clip\n")

    def dump_and_raise(it: int, idx, loss_val: float):
        batch_ids = [clips[int(ci)].clip_id for ci in idx]
        if log_f:
            dump = os.path.join(os.path.dirname(os.path.abspath(log_f.name)),
                                "diagnostic_dump.txt")
            with open(dump, "w") as d:
                d.write(f"non-finite loss {loss_val} at iteration {it}\n")
                d.write(f"batch clip ids: {batch_ids}\n")
        raise NumericError(f"non-finite loss at iteration {it} on batch {batch_ids}")

    def write_ckpt(iteration: int):
        extra = {
            "iteration": iteration,
            "adam_t": optimizer.inner.t,
            "lookahead_counter": optimizer.counter,
            "rng_state": rng.bit_generator.state,
        }
        save_checkpoint(os.path.join(out_dir, f"ckpt_{iteration:06d}.ckpt"),
                        model.params, optimizer.state_arrays(),
                        model.fingerprint(), extra)

    last_ckpt = -1
    try:
        for it in range(start_iteration, cfg.iterations):
            lr = cosine_lr(it, cfg.iterations, cfg.lr_max, cfg.lr_min)
            idx = rng.choice(n_clips, size=batch, replace=False)
            model.params.zero_grad()
            loss_sum = pix_sum = pts_sum = 0.0
            for ci in idx:
                clip = clips[int(ci)]
                order = rng.permutation(clip.n_frames) if cfg.shuffle_snapshots \
                    else np.arange(clip.n_frames)
                lr_in = (clip.lr[order] / 255.0).astype(model.dtype or np.float32)
                hr_t = (clip.hr[order] / 255.0)
                pred, lm_hist, _ = model.forward(lr_in)
                loss, pix, pts = total_loss(pred, hr_t.astype(pred.dtype), lm_hist,
                                            clip.landmarks[order].astype(pred.dtype),
                                            cfg.loss)
                scaled = loss * (1.0 / batch)
                val = scaled.item()
                if not np.isfinite(val):
                    dump_and_raise(it, idx, val)
                backward(scaled)
                loss_sum += val
                pix_sum += pix
                pts_sum += pts
            scale, pre_norm = clip_grad_norm(model.params, cfg.clip_norm)
            post_norm = global_grad_norm(model.params)
            optimizer.step(lr)
            st = IterationStats(it, lr, loss_sum, pix_sum / batch,
                                pts_sum / batch, pre_norm, post_norm)
            stats.append(st)
            if log_f:
                log_f.write(f"{it}, {lr:.12g}, {st.loss_total:.12g}, {st.loss_pix:.12g}, "
                            f"{st.loss_pts:.12g}, {st.grad_norm_pre_clip:.12g}\n")
                log_f.flush()
            if out_dir and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                write_ckpt(it + 1)
                last_ckpt = it + 1
        if out_dir and last_ckpt != cfg.iterations:
            write_ckpt(cfg.iterations)
    finally:
        if log_f:
            log_f.close()
    return stats, optimizer


def resume_training(model: SRModel, clips: list, cfg: TrainConfig,
                    checkpoint_path: str, out_dir: str | None = None,
                    log_path: str | None = None) -> tuple[list[IterationStats], Lookahead]:
    """Continue a run from a checkpoint, bit-identically to an
    uninterrupted run with the same config."""
    inner = AdamW(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    optimizer = Lookahead(inner, cfg.lookahead_k, cfg.lookahead_alpha)
    state, extra = load_checkpoint(checkpoint_path, model.params, model.fingerprint())
    optimizer.load_state_arrays(state, int(extra["adam_t"]), int(extra["lookahead_counter"]))
    rng = np.random.Generator(np.random.PCG64())
    rng_state = dict(extra["rng_state"])
    rng_state["state"] = {k: int(v) for k, v in rng_state["state"].items()}
    rng.bit_generator.state = rng_state
    return train_loop(model, clips, cfg, rng, out_dir=out_dir,
                      start_iteration=int(extra["iteration"]), optimizer=optimizer,
                      log_path=log_path)
