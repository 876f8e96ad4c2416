"""Full model assembly, the hybrid loss, and reverse-mode gradients.

Pipeline per sequence: the phase-proposal stack reads the raw features and
proposes a segment partition; the local-aggregation layers scan each segment
independently; the global stack refines the whole sequence; two per-frame
heads emit phase logits and a progress estimate in (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Tensor
from .blocks import (
    DEFAULT_MIN_SEGMENT_LEN,
    IdSsmLayerParams,
    LaLayerParams,
    LayerTrace,
    PpnParams,
    SegmentPartition,
)
from .errors import ConfigError, NumericsError

PPN_LOSS_WEIGHT = 1.0


@dataclass(frozen=True)
class LayerStackConfig:
    """Depth/width settings of the full model."""

    n_global: int = 4
    n_local: int = 1
    n_ppn: int = 3
    d_model: int = 16
    state_dim: int = 16
    n_phases: int = 7
    causal: bool = False

    def __post_init__(self):
        for name in ("n_global", "n_local", "n_ppn", "d_model", "state_dim", "n_phases"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class HidSsmModel:
    cfg: LayerStackConfig
    ppn: PpnParams
    la_layers: list[LaLayerParams]
    gr_layers: list[IdSsmLayerParams]
    cls_w: Tensor
    cls_b: Tensor
    prs_w: Tensor
    prs_b: Tensor
    min_segment_len: int = DEFAULT_MIN_SEGMENT_LEN

    def parameters(self) -> dict[str, Tensor]:
        """Stable name -> Tensor map covering every learnable."""
        out = self.ppn.named("ppn")
        for i, layer in enumerate(self.la_layers):
            out.update(layer.named(f"la.{i}"))
        for i, layer in enumerate(self.gr_layers):
            out.update(layer.named(f"gr.{i}"))
        out["cls.w"] = self.cls_w
        out["cls.b"] = self.cls_b
        out["prs.w"] = self.prs_w
        out["prs.b"] = self.prs_b
        return out


def init_model(cfg: LayerStackConfig, seed: int) -> HidSsmModel:
    """Seeded initialization; scan output rows start at zero so every block
    opens as the identity, and both heads start at zero (uniform logits,
    progress 0.5)."""
    rng = np.random.default_rng(seed)
    d, n = cfg.d_model, cfg.state_dim
    return HidSsmModel(
        cfg=cfg,
        ppn=blocks.init_ppn(rng, cfg.n_ppn, d, n, cfg.n_phases),
        la_layers=[blocks.init_la_layer(rng, d, n) for _ in range(cfg.n_local)],
        gr_layers=[blocks.init_id_ssm_layer(rng, d, n) for _ in range(cfg.n_global)],
        cls_w=Tensor(np.zeros((d, cfg.n_phases))),
        cls_b=Tensor(np.zeros(cfg.n_phases)),
        prs_w=Tensor(np.zeros((d, 1))),
        prs_b=Tensor(np.zeros(1)),
    )


@dataclass
class ForwardResult:
    logits: Tensor  # (T, N_p)
    progress: Tensor  # (T,)
    ppn_logits: Tensor  # (T, N_p)
    partition: SegmentPartition
    trace: list[LayerTrace] = field(default_factory=list)


def forward(
    model: HidSsmModel,
    u: np.ndarray,
    partition: SegmentPartition | None = None,
    record: bool = False,
) -> ForwardResult:
    """Run the full pipeline on one sequence of features (T, D).

    When ``partition`` is omitted it is derived from the proposal stack's
    current predictions (a discrete, non-differentiated decision). With
    ``record`` the per-layer timescale traces and discretized coefficients are
    kept for interpretability exports.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != model.cfg.d_model:
        raise ConfigError(f"features must be (T, {model.cfg.d_model}), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise NumericsError("non-finite feature input")
    trace: list[LayerTrace] | None = [] if record else None
    u_t = Tensor(u)

    ppn_logits = blocks.ppn_forward(u_t, model.ppn, trace=trace)
    if partition is None:
        partition = blocks.ppn_segments(ppn_logits.value, model.min_segment_len)

    v = u_t
    for la in model.la_layers:
        v = blocks.la_ssm_layer(v, partition, la, model.cfg.causal, trace=trace)
    v = blocks.gr_ssm_stack(v, model.gr_layers, model.cfg.causal, trace=trace)

    logits = ad.add(ad.matmul(v, model.cls_w), model.cls_b)
    progress = ad.logistic_open(
        ad.reshape(ad.add(ad.matmul(v, model.prs_w), model.prs_b), (u.shape[0],))
    )
    return ForwardResult(
        logits=logits,
        progress=progress,
        ppn_logits=ppn_logits,
        partition=partition,
        trace=trace if record else [],
    )


@dataclass
class SupervisionTargets:
    """Ground-truth phase indices plus per-frame progress in (0, 1)."""

    z_cls: np.ndarray  # (T,) ints in [0, N_p)
    z_prs: np.ndarray  # (T,) floats in (0, 1)


def progress_targets(z_cls: np.ndarray) -> np.ndarray:
    """Within each maximal constant-phase run of length L, frame i maps to
    (i + 1) / (L + 1), strictly inside (0, 1) and increasing along the run."""
    z_cls = np.asarray(z_cls)
    if z_cls.ndim != 1 or z_cls.shape[0] < 1:
        raise ConfigError("labels must be a non-empty 1-D array")
    out = np.empty(z_cls.shape[0], dtype=np.float64)
    start = 0
    for t in range(1, z_cls.shape[0] + 1):
        if t == z_cls.shape[0] or z_cls[t] != z_cls[start]:
            length = t - start
            out[start:t] = (np.arange(length) + 1.0) / (length + 1.0)
            start = t
    return out


def make_targets(z_cls: np.ndarray) -> SupervisionTargets:
    return SupervisionTargets(z_cls=np.asarray(z_cls, dtype=np.int64), z_prs=progress_targets(z_cls))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over frames of the negative log-softmax at the true class."""
    shift = logits.value.max(axis=1, keepdims=True)  # constant shift, exact gradient
    lse = ad.add(
        ad.log(ad.sum_(ad.exp(ad.sub(logits, shift)), axis=1)),
        shift[:, 0],
    )
    picked = ad.gather_rows(logits, np.asarray(labels, dtype=np.int64))
    return ad.mean(ad.sub(lse, picked))


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = ad.sub(pred, np.asarray(target, dtype=np.float64))
    return ad.mean(ad.mul(diff, diff))


def total_loss(logits: Tensor, progress: Tensor, targets: SupervisionTargets, alpha: float) -> Tensor:
    """alpha * cross-entropy(phases) + (1 - alpha) * MSE(progress)."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    loss = ad.add(
        ad.mul(cross_entropy(logits, targets.z_cls), alpha),
        ad.mul(mse(progress, targets.z_prs), 1.0 - alpha),
    )
    if not np.isfinite(loss.value):
        raise NumericsError("non-finite loss")
    return loss


def objective(
    model: HidSsmModel,
    u: np.ndarray,
    targets: SupervisionTargets,
    alpha: float,
    partition: SegmentPartition | None = None,
) -> tuple[Tensor, ForwardResult]:
    """Training objective: hybrid loss plus the proposal stack's own
    cross-entropy (weight 1), evaluated at a fixed partition."""
    result = forward(model, u, partition=partition)
    loss = ad.add(
        total_loss(result.logits, result.progress, targets, alpha),
        ad.mul(cross_entropy(result.ppn_logits, targets.z_cls), PPN_LOSS_WEIGHT),
    )
    return loss, result


@dataclass
class GradientBundle:
    """Per-parameter gradients mirroring the model's parameter shapes."""

    grads: dict[str, np.ndarray]
    loss_value: float


def backward(
    model: HidSsmModel,
    u: np.ndarray,
    targets: SupervisionTargets,
    alpha: float,
    partition: SegmentPartition | None = None,
) -> GradientBundle:
    """Reverse-mode gradients of the training objective for every parameter.

    Parameters off the differentiable path (for example the backward-direction
    projections of a causal model) come back as exact zeros.
    """
    params = model.parameters()
    for tensor in params.values():
        tensor.grad = None  # drop grads left over from a previous pass
    loss, _ = objective(model, u, targets, alpha, partition=partition)
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, tensor in params.items():
        g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.value)
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name}")
        grads[name] = np.array(g, dtype=np.float64)
    return GradientBundle(grads=grads, loss_value=float(loss.value))
