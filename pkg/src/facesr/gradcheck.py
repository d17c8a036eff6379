"""Finite-difference verification of the analytic gradients.

Central differences at float64 are the independent oracle: for each
primitive op every input coordinate is perturbed; for the composed
model a sampled subset of each parameter tensor plus whole-vector
directional derivatives. Relative error uses a floored denominator so
coordinates with near-zero gradients measure against an absolute
scale instead of exploding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import DeuConfig
from .encoder import EncoderConfig
from .losses import LossWeights, total_loss
from .model import ModelConfig, SRModel
from .refiner import RefinerConfig
from .tensor import Tensor, backward, no_grad
from .vision import PatchSpec, fold, unfold

REL_FLOOR = 1e-4
OP_TOL = 1e-5
MODEL_TOL = 1e-4
FD_EPS = 1e-6


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), REL_FLOOR)


def check_gradients(fn, inputs: list[Tensor], rng: np.random.Generator,
                    max_coords: int | None = None) -> float:
    """Worst relative error between analytic and central-difference
    gradients of ``scalar = fn(*inputs)`` over the inputs' coordinates."""
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]
    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            n = flat.size
            coords = np.arange(n)
            if max_coords is not None and n > max_coords:
                coords = rng.choice(n, size=max_coords, replace=False)
            for i in coords:
                orig = flat[i]
                eps = FD_EPS * max(1.0, abs(orig))
                flat[i] = orig + eps
                hi = fn(*inputs).item()
                flat[i] = orig - eps
                lo = fn(*inputs).item()
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                worst = max(worst, rel_error(float(ga.reshape(-1)[i]), numeric))
    return worst


def _rand(rng, *shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True, dtype=np.float64)


def _away_from_kinks(t: Tensor, margin: float = 0.15) -> Tensor:
    d = t.data
    d += np.sign(d) * margin + (d == 0) * margin
    return t


def op_checks(seed: int) -> dict[str, float]:
    """Exhaustive per-primitive central-difference checks; returns the
    worst relative error per op."""
    rng = np.random.default_rng(seed)
    spec = PatchSpec(3, 2, 1)
    results = {}

    def run(name, fn, *inputs):
        results[name] = check_gradients(fn, list(inputs), rng)

    w = Tensor(rng.standard_normal((4, 3)), dtype=np.float64)
    run("matmul", lambda a, b: T.sum_(T.mul(T.matmul(a, b), w)),
        _rand(rng, 4, 5), _rand(rng, 5, 3))
    run("matmul_batched", lambda a, b: T.sum_(T.mul(T.matmul(a, b), 1.7)),
        _rand(rng, 2, 3, 4), _rand(rng, 2, 4, 2))
    run("matmul_broadcast", lambda a, b: T.sum_(T.matmul(a, b)),
        _rand(rng, 3, 4), _rand(rng, 2, 4, 2))
    run("add_broadcast", lambda a, b: T.sum_(T.mul(T.add(a, b), w)),
        _rand(rng, 4, 3), _rand(rng, 3))
    run("sub", lambda a, b: T.sum_(T.mul(T.sub(a, b), w)), _rand(rng, 4, 3), _rand(rng, 4, 3))
    run("mul", lambda a, b: T.sum_(T.mul(T.mul(a, b), w)), _rand(rng, 4, 3), _rand(rng, 4, 3))
    run("div", lambda a, b: T.sum_(T.div(a, b)),
        _rand(rng, 4, 3), _away_from_kinks(_rand(rng, 4, 3), 0.5))
    run("neg", lambda a: T.sum_(T.mul(T.neg(a), w)), _rand(rng, 4, 3))
    run("reshape", lambda a: T.sum_(T.mul(T.reshape(a, (4, 3)), w)), _rand(rng, 2, 6))
    run("transpose", lambda a: T.sum_(T.mul(T.transpose(a, (1, 0)), w)), _rand(rng, 3, 4))
    run("slice", lambda a: T.sum_(a[1:3, ::2]), _rand(rng, 4, 5))
    run("concat", lambda a, b: T.sum_(T.mul(T.concat([a, b], axis=0), w)),
        _rand(rng, 1, 3), _rand(rng, 3, 3))
    run("broadcast_to", lambda a: T.sum_(T.mul(T.broadcast_to(a, (4, 3)), w)), _rand(rng, 1, 3))
    run("sum_axis", lambda a: T.sum_(T.mul(T.sum_(a, axis=0), Tensor(w.data[0]))), _rand(rng, 5, 3))
    run("mean_axis", lambda a: T.sum_(T.mul(T.mean(a, axis=1, keepdims=True), 2.0)), _rand(rng, 5, 3))
    run("sqrt", lambda a: T.sum_(T.mul(T.sqrt(a), w)),
        Tensor(rng.uniform(0.5, 3.0, (4, 3)), requires_grad=True, dtype=np.float64))
    run("relu", lambda a: T.sum_(T.mul(T.relu(a), w)), _away_from_kinks(_rand(rng, 4, 3)))
    run("gelu", lambda a: T.sum_(T.mul(T.gelu(a), w)), _rand(rng, 4, 3))
    run("sigmoid", lambda a: T.sum_(T.mul(T.sigmoid(a), w)), _rand(rng, 4, 3))
    run("abs", lambda a: T.sum_(T.mul(T.abs_(a), w)), _away_from_kinks(_rand(rng, 4, 3)))
    run("softmax", lambda a: T.sum_(T.mul(T.softmax(a, axis=-1), w)), _rand(rng, 4, 3))
    gain = _rand(rng, 3)
    bias = _rand(rng, 3)
    run("layer_norm", lambda a, g, b: T.sum_(T.mul(T.layer_norm(a, g, b), w)),
        _rand(rng, 4, 3), gain, bias)
    pw = Tensor(rng.standard_normal((12, 18)), dtype=np.float64)
    run("unfold", lambda a: T.sum_(T.mul(unfold(a, spec), pw)), _rand(rng, 6, 7, 2))
    tok = _rand(rng, 12, 18)
    iw = Tensor(rng.standard_normal((6, 7, 2)), dtype=np.float64)
    run("fold_sum", lambda a: T.sum_(T.mul(fold(a, 6, 7, spec, normalize=False), iw)), tok)
    run("fold_norm", lambda a: T.sum_(T.mul(fold(a, 6, 7, spec, normalize=True), iw)),
        _rand(rng, 12, 18))
    return results


def tiny_model_config() -> ModelConfig:
    """Smallest config exercising every module: 8x6 inputs, one encoder
    iteration, one refiner recurrence, single-head decoder."""
    return ModelConfig(
        input_h=8, input_w=6,
        encoder=EncoderConfig(d_model=16, n_heads=2, n_iters=1, depth=1, ffn_ratio=2),
        refiner=RefinerConfig(d_small=4, mlp_hidden=16, recurrences=1, n_heads=2, ffn_ratio=2),
        decoder=DeuConfig(d_q=8, d_k=8, d_v=512, n_heads=1, d_out=2),
    )


@dataclass
class GroupReport:
    name: str
    checked: int
    worst: float


@dataclass
class GradCheckReport:
    op_errors: dict[str, float] = field(default_factory=dict)
    groups: list[GroupReport] = field(default_factory=list)
    directional: float = 0.0
    op_tol: float = OP_TOL
    model_tol: float = MODEL_TOL

    @property
    def worst_op(self) -> float:
        return max(self.op_errors.values(), default=0.0)

    @property
    def worst_group(self) -> float:
        return max((g.worst for g in self.groups), default=0.0)

    @property
    def ok(self) -> bool:
        return (self.worst_op <= self.op_tol
                and self.worst_group <= self.model_tol
                and self.directional <= self.model_tol)

    def lines(self) -> list[str]:
        out = [f"primitive ops (tolerance {self.op_tol:g}):"]
        for name, err in sorted(self.op_errors.items()):
            flag = "ok" if err <= self.op_tol else "FAIL"
            out.append(f"  {name:<18} {err:.3e}  {flag}")
        out.append(f"model parameter groups (tolerance {self.model_tol:g}):")
        for g in self.groups:
            flag = "ok" if g.worst <= self.model_tol else "FAIL"
            out.append(f"  {g.name:<28} coords={g.checked:<4} {g.worst:.3e}  {flag}")
        out.append(f"directional derivative: {self.directional:.3e}")
        out.append(f"RESULT: {'PASS' if self.ok else 'FAIL'}")
        return out


def model_check(seed: int, coords_per_group: int = 6,
                n_directions: int = 2) -> tuple[list[GroupReport], float]:
    """End-to-end check of the full forward + loss on a tiny model."""
    rng = np.random.default_rng(seed)
    cfg = tiny_model_config()
    model = SRModel(cfg, rng, dtype=np.float64)
    n = 2
    frames = rng.uniform(0.0, 1.0, (n, cfg.input_h, cfg.input_w, 3))
    targets = rng.uniform(0.0, 1.0, (n, 8 * cfg.input_h, 8 * cfg.input_w, 3))
    gt_lms = rng.uniform(0.2, 0.8, (n, 5, 2))
    weights = LossWeights()

    def loss_value() -> float:
        pred, lm_hist, _ = model.forward(frames)
        loss, _, _ = total_loss(pred, targets, lm_hist, gt_lms, weights)
        return loss

    model.params.zero_grad()
    backward(loss_value())
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in model.params.items()}

    groups = []
    with no_grad():
        for name, p in model.params.items():
            flat = p.data.reshape(-1)
            size = flat.size
            if size <= coords_per_group:
                coords = np.arange(size)
            else:
                coords = rng.choice(size, size=coords_per_group, replace=False)
            worst = 0.0
            for i in coords:
                orig = flat[i]
                eps = FD_EPS * max(1.0, abs(orig))
                flat[i] = orig + eps
                hi = loss_value().item()
                flat[i] = orig - eps
                lo = loss_value().item()
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                worst = max(worst, rel_error(float(analytic[name].reshape(-1)[i]), numeric))
            groups.append(GroupReport(name, len(coords), worst))

        directional = 0.0
        for _ in range(n_directions):
            vs = {k: rng.standard_normal(t.shape) for k, t in model.params.items()}
            vnorm = np.sqrt(sum(float((v * v).sum()) for v in vs.values()))
            vs = {k: v / vnorm for k, v in vs.items()}
            eps = FD_EPS
            for k, t in model.params.items():
                t.data += eps * vs[k]
            hi = loss_value().item()
            for k, t in model.params.items():
                t.data -= 2 * eps * vs[k]
            lo = loss_value().item()
            for k, t in model.params.items():
                t.data += eps * vs[k]
            numeric = (hi - lo) / (2.0 * eps)
            dot = sum(float((vs[k] * analytic[k]).sum()) for k in vs)
            directional = max(directional, rel_error(dot, numeric))
    return groups, directional


def run_gradcheck(seeds: int = 5, coords_per_group: int = 6) -> GradCheckReport:
    """Per-op and end-to-end verification across several seeds."""
    report = GradCheckReport()
    worst_groups: dict[str, GroupReport] = {}
    for seed in range(seeds):
        for name, err in op_checks(seed).items():
            report.op_errors[name] = max(err, report.op_errors.get(name, 0.0))
        groups, directional = model_check(seed, coords_per_group=coords_per_group)
        report.directional = max(report.directional, directional)
        for g in groups:
            prev = worst_groups.get(g.name)
            if prev is None:
                worst_groups[g.name] = GroupReport(g.name, g.checked, g.worst)
            else:
                prev.checked += g.checked
                prev.worst = max(prev.worst, g.worst)
    report.groups = list(worst_groups.values())
    return report
