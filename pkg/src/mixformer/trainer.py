"""End-to-end training loop: encoder -> mix -> head -> loss, Adam, per-epoch eval.

Dropout and mixing draw from two separate generator streams so that a run with
mixing disabled is bit-identical to a run with a fixed coefficient of 1 (the
degenerate endpoint), regardless of dropout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, TaskSpec, batches
from .errors import NonFiniteLossError
from .metrics import EvalResult, accuracy, matthews_corr, spearman_corr
from .mixup import FixedLambda, MixPlan, MixupConfig, is_active, make_plan, mix_labels, mix_representations
from .model import EncodedBatch, ModelConfig, Parameters, encode, head_forward, init_params
from .numerics import cross_entropy_soft, mse


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 8
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip_norm: float | None = 1.0
    seed: int = 0
    mixup: MixupConfig = field(default_factory=MixupConfig)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError(f"grad_clip_norm must be positive or None, got {self.grad_clip_norm}")


@dataclass
class EpochReport:
    epoch: int
    mixup_active: bool
    lambda_used: float | str  # fixed value, "beta(a)" tag, or 1.0 when inactive
    mean_train_loss: float
    dev_metric: EvalResult
    wall_time_ms: int


def _first_nonfinite(named: Sequence[tuple[str, np.ndarray | float]]) -> str | None:
    for name, value in named:
        if not np.all(np.isfinite(value)):
            return name
    return None


def train_step(
    params: Parameters,
    batch: EncodedBatch,
    mix_active: bool,
    mixup_config: MixupConfig,
    dropout_rng: np.random.Generator | None = None,
    mixup_rng: np.random.Generator | None = None,
    plan: MixPlan | None = None,
):
    """One forward/backward pass; returns (loss, grads dict over all parameters).

    When mixing is active the pooled representations and the label rows are
    interpolated with the same plan before the head, and the backward chain
    routes gradient shares to both members of each pair. Pass an explicit
    `plan` to pin the coefficient and pairing (tests, gradient checks).
    """
    enc = encode(params, batch, train_mode=True, rng=dropout_rng)
    h = enc.output
    y = batch.labels
    mix = None
    if mix_active:
        if plan is None:
            plan = make_plan(h.shape[0], mixup_config, mixup_rng)
        mix = mix_representations(h, plan)
        h = mix.output
        y = mix_labels(y, plan)
    head = head_forward(params, h)
    logits = head.output
    classification = params.config.head == "classification"
    loss_dual = cross_entropy_soft(logits, y) if classification else mse(logits, y)
    loss = float(loss_dual.output)

    bad = _first_nonfinite(
        [
            ("encoder.pooled", enc.output),
            ("mixup.mixed", h),
            ("head.logits" if classification else "head.predictions", logits),
            ("loss", loss),
        ]
    )
    if bad is not None:
        raise NonFiniteLossError(f"non-finite values in tensor {bad!r}")

    (dlogits,) = loss_dual.backward(1.0)
    dpooled, head_grads = head.backward(dlogits)
    if mix is not None:
        (dpooled,) = mix.backward(dpooled)
    grads = enc.backward(dpooled)
    grads.update(head_grads)
    for name, g in grads.items():
        np.copyto(params.grads[name], g)
    return loss, grads


def adam_update(params: Parameters, grads: dict, step_count: int, config: TrainConfig) -> Parameters:
    """Bias-corrected Adam with decoupled weight decay on weight matrices only.

    Optional global-norm clipping scales the gradients in place first. Decay
    skips biases and layer-norm parameters (everything 1-D).
    """
    if step_count < 1:
        raise ValueError(f"step_count must be >= 1, got {step_count}")
    clip = config.grad_clip_norm
    if clip is not None:
        total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if total > clip:
            scale = clip / total
            for g in grads.values():
                g *= scale
    c1 = 1.0 - config.beta1**step_count
    c2 = 1.0 - config.beta2**step_count
    for name, g in grads.items():
        m, v = params.m[name], params.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        w = params.values[name]
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        if config.weight_decay and w.ndim >= 2:
            update = update + config.learning_rate * config.weight_decay * w
        w -= update
    return params


def _lambda_tag(mix_active: bool, config: MixupConfig) -> float | str:
    if not mix_active:
        return 1.0
    pol = config.lambda_policy
    if isinstance(pol, FixedLambda):
        return pol.value
    return f"beta({pol.alpha:g})"


def evaluate(params: Parameters, dev_ds: Dataset, task: TaskSpec, batch_size: int = 32) -> EvalResult:
    """Forward-only pass (no dropout, no mixing); dispatches to the task metric."""
    if not dev_ds.examples:
        raise ValueError("cannot evaluate on an empty dataset")
    preds: list = []
    golds: list = []
    for batch in batches(dev_ds, batch_size):
        pooled = encode(params, batch, train_mode=False).output
        out = head_forward(params, pooled).output
        if task.is_classification:
            preds.extend(int(i) for i in np.argmax(out, axis=1))
            golds.extend(int(i) for i in np.argmax(batch.labels, axis=1))
        else:
            preds.extend(float(v) for v in out[:, 0])
            golds.extend(float(v) for v in batch.labels[:, 0])
    if task.metric == "accuracy":
        value = accuracy(preds, golds)
    elif task.metric == "matthews":
        value = matthews_corr(preds, golds)
    else:
        value = spearman_corr(preds, golds)
    return EvalResult(task.metric, value, len(dev_ds.examples))


def run_training(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_ds: Dataset,
    dev_ds: Dataset,
):
    """Full run: seeded shuffling, scheduled mixing, Adam steps, per-epoch dev eval.

    Returns (final Parameters, list of EpochReports). Deterministic given the
    seeds and configs; only wall_time_ms varies between repeats.
    """
    if train_ds.task != dev_ds.task:
        raise ValueError("train and dev datasets must share a task")
    params = init_params(model_config)
    mix_cfg = train_config.mixup
    seed = train_config.seed
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    mixup_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    reports: list[EpochReport] = []
    opt_step = 0
    for epoch in range(1, train_config.epochs + 1):
        t0 = time.perf_counter()
        active = is_active(epoch, train_config.epochs, mix_cfg)
        losses = []
        shuffle_seed = np.random.SeedSequence([seed, 3, epoch])
        for step, batch in enumerate(batches(train_ds, train_config.batch_size, shuffle_seed), start=1):
            try:
                loss, grads = train_step(
                    params, batch, active, mix_cfg,
                    dropout_rng=dropout_rng, mixup_rng=mixup_rng,
                )
            except NonFiniteLossError as e:
                raise NonFiniteLossError(f"epoch {epoch}, step {step}: {e}") from None
            opt_step += 1
            adam_update(params, grads, opt_step, train_config)
            losses.append(loss)
        dev_metric = evaluate(params, dev_ds, dev_ds.task)
        reports.append(
            EpochReport(
                epoch=epoch,
                mixup_active=active,
                lambda_used=_lambda_tag(active, mix_cfg),
                mean_train_loss=float(np.mean(losses)) if losses else float("nan"),
                dev_metric=dev_metric,
                wall_time_ms=int((time.perf_counter() - t0) * 1000),
            )
        )
    return params, reports
