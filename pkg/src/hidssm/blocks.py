"""Composed sequence blocks built on the taped scan.

* :func:`id_ssm_layer` — pre-normalized residual wrapper around one
  input-dependent scan (causal or contextual).
* :func:`la_ssm_layer` — segment-local aggregation: independent scans per
  partition segment, fused by a position-wise feed-forward map.
* :func:`gr_ssm_stack` — sequential full-length layers.
* :func:`ppn_forward` / :func:`ppn_segments` — the phase-proposal classifier
  and its conversion into a segment partition.

All layer functions take and return :class:`~hidssm.autodiff.Tensor` values so
the same code path serves both inference and training; tests and exports read
``.value``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import core
from .autodiff import Tensor
from .errors import ConfigError, PartitionError

RMS_NORM_EPS = 1e-8
DEFAULT_MIN_SEGMENT_LEN = 3


@dataclass(frozen=True)
class SegmentPartition:
    """Ordered, contiguous, non-overlapping windows covering [0, T)."""

    segments: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.segments:
            raise PartitionError("partition must contain at least one segment")
        prev_end = 0
        for start, end in self.segments:
            if start != prev_end:
                raise PartitionError(
                    f"segment ({start}, {end}) does not start at previous end {prev_end}"
                )
            if end <= start:
                raise PartitionError(f"segment ({start}, {end}) is empty")
            prev_end = end
        if self.segments[0][0] != 0:
            raise PartitionError("partition must start at 0")

    @property
    def total_len(self) -> int:
        return self.segments[-1][1]

    def __len__(self) -> int:
        return len(self.segments)


def single_segment(t_len: int) -> SegmentPartition:
    return SegmentPartition(((0, t_len),))


@dataclass
class ProjectionParams:
    """Tensor-valued twin of :class:`hidssm.core.SsmProjections`."""

    w_delta: Tensor
    b_delta: Tensor
    w_b: Tensor
    b_b: Tensor
    w_c: Tensor
    b_c: Tensor
    a: Tensor

    def to_core(self) -> core.SsmProjections:
        return core.SsmProjections(
            w_delta=self.w_delta.value,
            b_delta=float(self.b_delta.value),
            w_b=self.w_b.value,
            b_b=self.b_b.value,
            w_c=self.w_c.value,
            b_c=self.b_c.value,
            a=self.a.value,
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_delta": self.w_delta,
            f"{prefix}.b_delta": self.b_delta,
            f"{prefix}.w_b": self.w_b,
            f"{prefix}.b_b": self.b_b,
            f"{prefix}.w_c": self.w_c,
            f"{prefix}.b_c": self.b_c,
            f"{prefix}.a": self.a,
        }


@dataclass
class IdSsmLayerParams:
    """One layer's learnables; the backward-direction projections exist even in
    causal mode (they simply receive zero gradient there)."""

    fwd: ProjectionParams
    bwd: ProjectionParams
    norm_scale: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.fwd.named(f"{prefix}.fwd")
        out.update(self.bwd.named(f"{prefix}.bwd"))
        out[f"{prefix}.norm_scale"] = self.norm_scale
        return out


@dataclass
class FfnParams:
    """Position-wise D -> 2D -> D map with a smooth nonlinearity."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w1": self.w1,
            f"{prefix}.b1": self.b1,
            f"{prefix}.w2": self.w2,
            f"{prefix}.b2": self.b2,
        }


@dataclass
class LaLayerParams:
    """Segment-shared scan parameters plus the fusion feed-forward map."""

    ssm: IdSsmLayerParams
    ffn: FfnParams

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = self.ssm.named(f"{prefix}.ssm")
        out.update(self.ffn.named(f"{prefix}.ffn"))
        return out


@dataclass
class LayerTrace:
    """Per-layer forward records kept for interpretability exports."""

    kind: str  # "la", "gr", or "ppn"
    delta: np.ndarray  # (T,) forward-direction timescale trace
    scan_input: np.ndarray  # (T, D) the signal the scan actually consumed
    coeffs_fwd: core.DiscretizedCoefficients
    coeffs_bwd: core.DiscretizedCoefficients | None


def init_projections(rng: np.random.Generator, d: int, n: int) -> ProjectionParams:
    """Trainable starting point: zero output row (the layer opens as identity),
    negative unit state decay, moderate timescale."""
    return ProjectionParams(
        w_delta=Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=d)),
        b_delta=Tensor(-2.0),
        w_b=Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, n))),
        b_b=Tensor(np.zeros(n)),
        w_c=Tensor(np.zeros((d, n))),
        b_c=Tensor(np.zeros(n)),
        a=Tensor(-np.ones(d)),
    )


def init_id_ssm_layer(rng: np.random.Generator, d: int, n: int) -> IdSsmLayerParams:
    return IdSsmLayerParams(
        fwd=init_projections(rng, d, n),
        bwd=init_projections(rng, d, n),
        norm_scale=Tensor(np.ones(d)),
    )


def init_ffn(rng: np.random.Generator, d: int) -> FfnParams:
    hidden = 2 * d
    return FfnParams(
        w1=Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, hidden))),
        b1=Tensor(np.zeros(hidden)),
        w2=Tensor(rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, d))),
        b2=Tensor(np.zeros(d)),
    )


def init_la_layer(rng: np.random.Generator, d: int, n: int) -> LaLayerParams:
    return LaLayerParams(ssm=init_id_ssm_layer(rng, d, n), ffn=init_ffn(rng, d))


def rms_norm(u: Tensor, scale: Tensor) -> Tensor:
    """Per-timestep RMS normalization scaled by a learnable per-channel gain."""
    ms = ad.mean(ad.mul(u, u), axis=1, keepdims=True)
    inv = ad.power(ad.add(ms, RMS_NORM_EPS), -0.5)
    return ad.mul(ad.mul(u, inv), scale)


def discretize_taped(v: Tensor, p: ProjectionParams) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Tape-level projections + softplus + ZOH; returns (delta, a_bar, b_bar, c)."""
    t_len, d = v.value.shape
    n = p.w_b.value.shape[1]
    s_delta = ad.add(matvec(v, p.w_delta), p.b_delta)  # (T,)
    s_b = ad.add(ad.matmul(v, p.w_b), p.b_b)
    s_c = ad.add(ad.matmul(v, p.w_c), p.b_c)
    delta = ad.mul(ad.reshape(ad.softplus(s_delta), (t_len, 1)), Tensor(np.ones((1, d))))
    z = ad.mul(delta, ad.reshape(p.a, (1, d)))
    a_bar = ad.exp(z)
    coeff = ad.mul(ad.zoh_phi(z), delta)  # (T, D)
    b_bar = ad.mul(ad.reshape(coeff, (t_len, d, 1)), ad.reshape(s_b, (t_len, 1, n)))
    return delta, a_bar, b_bar, s_c


def matvec(x: Tensor, w: Tensor) -> Tensor:
    """(T, D) @ (D,) -> (T,)."""
    t_len = x.value.shape[0]
    return ad.reshape(ad.matmul(x, ad.reshape(w, (-1, 1))), (t_len,))


def direct_term(b_bar: Tensor, c: Tensor, u: Tensor) -> Tensor:
    """Per-step diagonal contribution <c_t, b_bar_t> * u_t as a Tensor."""
    t_len, d, n = b_bar.value.shape
    inner = ad.sum_(ad.mul(ad.reshape(c, (t_len, 1, n)), b_bar), axis=2)
    return ad.mul(inner, u)


def contextual_scan_taped(
    fwd: tuple[Tensor, Tensor, Tensor],
    bwd: tuple[Tensor, Tensor, Tensor],
    u: Tensor,
) -> Tensor:
    """Taped twin of :func:`hidssm.core.contextual_scan`."""
    a_f, b_f, c_f = fwd
    a_b, b_b, c_b = bwd
    y_fwd = ad.scan(a_f, b_f, c_f, u)
    y_bwd = ad.flip0(
        ad.scan(ad.flip0(a_b), ad.flip0(b_b), ad.flip0(c_b), ad.flip0(u))
    )
    return ad.sub(ad.add(y_fwd, y_bwd), direct_term(b_b, c_b, u))


def _scan_with_params(
    v: Tensor,
    params: IdSsmLayerParams,
    causal: bool,
    partition: SegmentPartition | None = None,
) -> tuple[Tensor, LayerTrace]:
    """Discretize ``v`` and scan it, optionally per partition segment."""
    delta_f, a_f, b_f, c_f = discretize_taped(v, params.fwd)
    if causal:
        delta_b = None
        bwd_coeffs = None
    else:
        delta_b, a_b, b_b, c_b = discretize_taped(v, params.bwd)
        bwd_coeffs = (a_b, b_b, c_b)

    if partition is None:
        if causal:
            y = ad.scan(a_f, b_f, c_f, v)
        else:
            y = contextual_scan_taped((a_f, b_f, c_f), bwd_coeffs, v)
    else:
        if partition.total_len != v.value.shape[0]:
            raise PartitionError(
                f"partition covers [0, {partition.total_len}) but input has length {v.value.shape[0]}"
            )
        pieces = []
        for start, end in partition.segments:
            seg = lambda t: ad.slice0(t, start, end)  # noqa: E731
            if causal:
                pieces.append(ad.scan(seg(a_f), seg(b_f), seg(c_f), seg(v)))
            else:
                pieces.append(
                    contextual_scan_taped(
                        (seg(a_f), seg(b_f), seg(c_f)),
                        tuple(seg(t) for t in bwd_coeffs),
                        seg(v),
                    )
                )
        y = ad.concat0(pieces)

    trace = LayerTrace(
        kind="",
        delta=delta_f.value[:, 0].copy(),
        scan_input=v.value.copy(),
        coeffs_fwd=core.DiscretizedCoefficients(
            delta=delta_f.value, a_bar=a_f.value, b_bar=b_f.value, c=c_f.value
        ),
        coeffs_bwd=None
        if causal
        else core.DiscretizedCoefficients(
            delta=delta_b.value,
            a_bar=bwd_coeffs[0].value,
            b_bar=bwd_coeffs[1].value,
            c=bwd_coeffs[2].value,
        ),
    )
    return y, trace


def id_ssm_layer(
    u: Tensor,
    params: IdSsmLayerParams,
    causal: bool,
    trace: list[LayerTrace] | None = None,
    kind: str = "gr",
) -> Tensor:
    """Residual layer: u + scan(rms_norm(u)), causal or contextual."""
    v = rms_norm(u, params.norm_scale)
    y, layer_trace = _scan_with_params(v, params, causal)
    if trace is not None:
        layer_trace.kind = kind
        trace.append(layer_trace)
    return ad.add(u, y)


def segmented_scan(
    v: Tensor,
    params: IdSsmLayerParams,
    partition: SegmentPartition,
    causal: bool,
) -> Tensor:
    """Independent scans per segment (state resets at each segment start).

    This is the pre-fusion computation of :func:`la_ssm_layer`; its Jacobian
    with respect to ``v`` is exactly block-diagonal on the partition.
    """
    y, _ = _scan_with_params(v, params, causal, partition)
    return y


def ffn(v: Tensor, params: FfnParams) -> Tensor:
    hidden = ad.tanh(ad.add(ad.matmul(v, params.w1), params.b1))
    return ad.add(ad.matmul(hidden, params.w2), params.b2)


def la_ssm_layer(
    u: Tensor,
    partition: SegmentPartition,
    params: LaLayerParams,
    causal: bool,
    trace: list[LayerTrace] | None = None,
) -> Tensor:
    """Local aggregation: per-segment scans of the normalized input, fused by a
    position-wise feed-forward map, with a residual path."""
    v = rms_norm(u, params.ssm.norm_scale)
    pre_fusion, layer_trace = _scan_with_params(v, params.ssm, causal, partition)
    if trace is not None:
        layer_trace.kind = "la"
        trace.append(layer_trace)
    return ad.add(u, ffn(pre_fusion, params.ffn))


def gr_ssm_stack(
    u: Tensor,
    layers: list[IdSsmLayerParams],
    causal: bool,
    trace: list[LayerTrace] | None = None,
) -> Tensor:
    """Sequential full-length layers modeling whole-sequence dependencies."""
    if not layers:
        raise ConfigError("stack needs at least one layer")
    v = u
    for layer in layers:
        v = id_ssm_layer(v, layer, causal, trace=trace, kind="gr")
    return v


@dataclass
class PpnParams:
    """Causal proposal stack plus the per-frame phase classification map."""

    layers: list[IdSsmLayerParams]
    head_w: Tensor
    head_b: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.layers.{i}"))
        out[f"{prefix}.head_w"] = self.head_w
        out[f"{prefix}.head_b"] = self.head_b
        return out


def init_ppn(rng: np.random.Generator, n_layers: int, d: int, n: int, n_phases: int) -> PpnParams:
    return PpnParams(
        layers=[init_id_ssm_layer(rng, d, n) for _ in range(n_layers)],
        head_w=Tensor(np.zeros((d, n_phases))),
        head_b=Tensor(np.zeros(n_phases)),
    )


def ppn_forward(
    u: Tensor, params: PpnParams, trace: list[LayerTrace] | None = None
) -> Tensor:
    """Pseudo-phase logits (T, N_p) from a causal proposal stack."""
    v = u
    for layer in params.layers:
        v = id_ssm_layer(v, layer, causal=True, trace=trace, kind="ppn")
    return ad.add(ad.matmul(v, params.head_w), params.head_b)


def ppn_segments(logits: np.ndarray, min_len: int = DEFAULT_MIN_SEGMENT_LEN) -> SegmentPartition:
    """Argmax -> run-length encode -> merge runs shorter than ``min_len``.

    Ties pick the lowest phase index. A short run merges into its predecessor
    (the first run merges forward); equal-phase neighbours coalesce after each
    merge, and the loop repeats until every surviving run is long enough or
    only one run remains.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ConfigError(f"logits must be (T, N_p) with T >= 1, got {logits.shape}")
    if min_len < 1:
        raise ConfigError("min_len must be >= 1")
    phases = np.argmax(logits, axis=1)
    runs: list[list[int]] = []  # [start, end, phase]
    for t, phase in enumerate(phases):
        if runs and runs[-1][2] == phase:
            runs[-1][1] = t + 1
        else:
            runs.append([t, t + 1, int(phase)])

    def coalesce(items: list[list[int]]) -> list[list[int]]:
        merged = [items[0]]
        for run in items[1:]:
            if run[2] == merged[-1][2]:
                merged[-1][1] = run[1]
            else:
                merged.append(run)
        return merged

    runs = coalesce(runs)
    while len(runs) > 1:
        short = next((i for i, r in enumerate(runs) if r[1] - r[0] < min_len), None)
        if short is None:
            break
        if short == 0:
            runs[1][0] = runs[0][0]
            del runs[0]
        else:
            runs[short - 1][1] = runs[short][1]
            del runs[short]
        runs = coalesce(runs)
    return SegmentPartition(tuple((r[0], r[1]) for r in runs))
