"""Kernel self-checks behind ``rsinstruct kernel-check``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion import fuse_stack, synthetic_feature_stack
from .gradcheck import GradcheckReport, gradcheck
from .model import Batch, KernelConfig, TinyMLLM, init_store, stage_trainable_set
from .optim import AdamWHyper, AdamWState, adamw_step


@dataclass
class KernelCheckResult:
    stage: str
    seed: int
    gradcheck: GradcheckReport
    frozen_unchanged: bool
    frozen_count: int
    steps: int
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.gradcheck.passed and self.frozen_unchanged

    def to_tsv(self) -> str:
        head = (f"# stage={self.stage}\tseed={self.seed}\tfreeze_steps={self.steps}\t"
                f"frozen_params={self.frozen_count}\tfrozen_unchanged={self.frozen_unchanged}\t"
                f"result={'pass' if self.passed else 'FAIL'}\n")
        return head + self.gradcheck.to_tsv()


def desk_batch(config: KernelConfig, rng: np.random.Generator, n_language: int = 4) -> Batch:
    """Fused synthetic visual features (4 tokens) plus random language ids."""
    stack = synthetic_feature_stack(rng, height=32, width=32, layer_channels=(2, 1),
                                    scale_channels=(1, 1, 1), first_stride=4)
    visual = fuse_stack(stack)
    if visual.shape[1] != config.visual_dim:
        raise ValueError(f"config.visual_dim must be {visual.shape[1]} for the desk batch")
    return Batch(visual, rng.integers(0, config.vocab_size, n_language))


def desk_config(stage) -> KernelConfig:
    # 4 visual + 4 language tokens: N = 8, d = 8, V = 16
    return KernelConfig(num_blocks=2, d_model=8, vocab_size=16, stage=stage, d_ff=16, visual_dim=6)


def run_kernel_check(stage, seed: int = 0, steps: int = 100, corrupt: bool = False) -> KernelCheckResult:
    config = desk_config(stage)
    rng = np.random.default_rng(seed)
    store = init_store(config, rng)
    if config.bias_tuning:
        # move beta off its zero init so the check does not sit at a special point
        for p in store:
            if p.name.endswith(".beta"):
                p.value[:] = 0.1 * rng.standard_normal(p.value.shape)
    model = TinyMLLM(config, store)
    batch = desk_batch(config, rng)
    report = gradcheck(lambda: model.loss_and_grads(batch), store, sorted(stage_trainable_set(config)),
                       corrupt=corrupt)

    frozen = [p.name for p in store if not p.trainable]
    before = {n: store[n].tobytes() for n in frozen}
    state = AdamWState()
    hyper = AdamWHyper(lr=1e-3)
    for _ in range(steps):
        _, grads = model.loss_and_grads(batch)
        adamw_step(store, {n: grads[n] for n in store.trainable_names()}, hyper, state)
    unchanged = all(store[n].tobytes() == before[n] for n in frozen)
    return KernelCheckResult(config.stage.value, seed, report, unchanged, len(frozen), steps)


def overfit_losses(stage="3", seed: int = 0, steps: int = 100, lr: float = 3e-2) -> list[float]:
    """Loss before each of ``steps`` AdamW updates on one fixed desk batch, plus the final loss."""
    config = desk_config(stage)
    rng = np.random.default_rng(seed)
    store = init_store(config, rng)
    model = TinyMLLM(config, store)
    batch = desk_batch(config, rng)
    state = AdamWState()
    hyper = AdamWHyper(lr=lr)
    losses = []
    for _ in range(steps):
        loss, grads = model.loss_and_grads(batch)
        losses.append(loss)
        adamw_step(store, {n: grads[n] for n in store.trainable_names()}, hyper, state)
    losses.append(model.loss(batch))
    return losses
