"""Input-dependent SSM primitives.

Everything here operates on plain float64 numpy arrays:

* per-timestep input projections that make the discretization input-dependent,
* zero-order-hold (ZOH) discretization with a guarded removable singularity,
* causal and contextual (bidirectional) recurrent scans,
* dense / streamed materialization of the equivalent T x T matrix mixers.

Shapes follow one convention throughout: ``T`` timesteps, ``D`` channels,
``N`` state dimensions. The state matrix is diagonal, one negative scalar
``a[d]`` per channel, so ``A_bar`` is scalar per ``(t, d)`` while ``B_bar``
carries the state axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ScanOverflowError, SizeCapError

# Below this magnitude of z = delta * a the ZOH input integral switches to
# its series limit; the exact expression is 0/0 at z = 0.
ZOH_SERIES_THRESHOLD = 1e-6

# Dense T x T materialization is O(T^2); above this cap callers must stream rows.
MIXER_SIZE_CAP = 4096

CAUSAL_LOWER_TRIANGULAR = "causal_lower_triangular"
BLOCK_DIAGONAL = "block_diagonal"


@dataclass(frozen=True)
class SsmDims:
    """Sequence length, channel count, and state dimension of one scan."""

    seq_len: int
    channels: int
    state_dim: int

    def __post_init__(self):
        for name in ("seq_len", "channels", "state_dim"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")


@dataclass
class SsmProjections:
    """Per-layer learnables that turn the input into discretization coefficients.

    ``w_delta/b_delta`` map each frame to the scalar timescale pre-activation,
    ``w_b/b_b`` and ``w_c/b_c`` to the N-dimensional input/output rows, and
    ``a`` holds the per-channel diagonal of the continuous state matrix
    (negative for a stable system).
    """

    w_delta: np.ndarray  # (D,)
    b_delta: float
    w_b: np.ndarray  # (D, N)
    b_b: np.ndarray  # (N,)
    w_c: np.ndarray  # (D, N)
    b_c: np.ndarray  # (N,)
    a: np.ndarray  # (D,)

    @property
    def channels(self) -> int:
        return self.w_delta.shape[0]

    @property
    def state_dim(self) -> int:
        return self.w_b.shape[1]

    def validate(self) -> None:
        d, n = self.channels, self.state_dim
        if self.w_delta.shape != (d,):
            raise ConfigError(f"w_delta must have shape ({d},), got {self.w_delta.shape}")
        if self.w_b.shape != (d, n) or self.w_c.shape != (d, n):
            raise ConfigError("w_b and w_c must both have shape (D, N)")
        if self.b_b.shape != (n,) or self.b_c.shape != (n,):
            raise ConfigError("b_b and b_c must both have shape (N,)")
        if self.a.shape != (d,):
            raise ConfigError(f"a must have shape ({d},), got {self.a.shape}")


@dataclass
class DiscretizedCoefficients:
    """Per-timestep discrete coefficients consumed by scans and mixers."""

    delta: np.ndarray  # (T, D), strictly positive
    a_bar: np.ndarray  # (T, D), in (0, 1) for negative a
    b_bar: np.ndarray  # (T, D, N)
    c: np.ndarray  # (T, N)

    @property
    def dims(self) -> SsmDims:
        t, d, n = self.b_bar.shape
        return SsmDims(t, d, n)


@dataclass
class MatrixMixer:
    """Dense T x T linear operator equivalent to a scan on one channel."""

    matrix: np.ndarray  # (T, T)
    structure_tag: str


def softplus(x: np.ndarray) -> np.ndarray:
    """Overflow-safe softplus, max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def zoh_phi(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z with the series limit 1 + z/2 near z = 0."""
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < ZOH_SERIES_THRESHOLD
    safe = np.where(small, 1.0, z)
    exact = np.expm1(safe) / safe
    return np.where(small, 1.0 + 0.5 * z, exact)


def zoh_phi_deriv(z: np.ndarray) -> np.ndarray:
    """Derivative of ``zoh_phi``: (z*exp(z) - expm1(z)) / z^2, series 1/2 + z/3 near 0.

    The expm1 form keeps the numerator cancellation-free down to the series
    switch, so gradients through the discretization stay accurate.
    """
    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) < ZOH_SERIES_THRESHOLD
    safe = np.where(small, 1.0, z)
    exact = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    return np.where(small, 0.5 + z / 3.0, exact)


def project_inputs(u: np.ndarray, p: SsmProjections) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame affine maps producing (s_delta (T,), s_b (T,N), s_c (T,N)).

    Each output row depends on the matching input row only; no temporal mixing.
    """
    u = np.asarray(u, dtype=np.float64)
    p.validate()
    if u.ndim != 2 or u.shape[1] != p.channels:
        raise ConfigError(
            f"input must have shape (T, {p.channels}), got {u.shape}"
        )
    s_delta = u @ p.w_delta + p.b_delta
    s_b = u @ p.w_b + p.b_b
    s_c = u @ p.w_c + p.b_c
    return s_delta, s_b, s_c


def compute_delta(s_delta: np.ndarray, n_channels: int) -> np.ndarray:
    """Strictly positive timescale, softplus(s_delta) broadcast across channels."""
    s_delta = np.asarray(s_delta, dtype=np.float64).reshape(-1)
    if n_channels < 1:
        raise ConfigError("channel count must be >= 1")
    return np.repeat(softplus(s_delta)[:, None], n_channels, axis=1)


def discretize_zoh(
    delta: np.ndarray, a: np.ndarray, s_b: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """ZOH discretization of the diagonal system.

    Returns ``a_bar[t, d] = exp(delta[t, d] * a[d])`` and
    ``b_bar[t, d, :] = phi(delta * a) * delta * s_b[t, :]`` where
    phi(z) = (exp(z) - 1) / z, evaluated through its removable singularity.
    """
    delta = np.asarray(delta, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    s_b = np.asarray(s_b, dtype=np.float64)
    z = delta * a[None, :]
    a_bar = np.exp(z)
    b_bar = (zoh_phi(z) * delta)[:, :, None] * s_b[:, None, :]
    return a_bar, b_bar


def discretize(u: np.ndarray, p: SsmProjections) -> DiscretizedCoefficients:
    """Full input-dependent discretization: projections, softplus, ZOH."""
    s_delta, s_b, s_c = project_inputs(u, p)
    delta = compute_delta(s_delta, p.channels)
    a_bar, b_bar = discretize_zoh(delta, p.a, s_b)
    return DiscretizedCoefficients(delta=delta, a_bar=a_bar, b_bar=b_bar, c=s_c)


def recurrent_scan(
    coeffs: DiscretizedCoefficients,
    u: np.ndarray,
    return_states: bool = False,
) -> np.ndarray | tuple[np.ndarray, np.ndarray]:
    """Left-to-right scan x_t = a_bar_t * x_{t-1} + b_bar_t * u_t, y_t = <c_t, x_t>.

    Each channel evolves independently from a zero initial state. With
    ``return_states`` the full (T, D, N) state trajectory is returned as well
    (the reverse-mode pass needs it).
    """
    u = np.asarray(u, dtype=np.float64)
    t_len, d, n = coeffs.b_bar.shape
    if u.shape != (t_len, d):
        raise ConfigError(f"input must have shape ({t_len}, {d}), got {u.shape}")
    a_bar, b_bar, c = coeffs.a_bar, coeffs.b_bar, coeffs.c
    x = np.zeros((d, n))
    y = np.empty((t_len, d))
    states = np.empty((t_len, d, n)) if return_states else None
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is detected below
        for t in range(t_len):
            x = a_bar[t][:, None] * x + b_bar[t] * u[t][:, None]
            y[t] = x @ c[t]
            if return_states:
                states[t] = x
    # Non-finite values cannot cancel back out of the recurrence (inf and nan
    # both propagate), so one check at the end suffices to detect trouble; a
    # second stepwise pass then locates the first offending timestep.
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        xx = np.zeros((d, n))
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(t_len):
                xx = a_bar[t][:, None] * xx + b_bar[t] * u[t][:, None]
                if not np.all(np.isfinite(xx)):
                    raise ScanOverflowError(t)
        raise ScanOverflowError(t_len - 1)
    if return_states:
        return y, states
    return y


def reverse_coeffs(coeffs: DiscretizedCoefficients) -> DiscretizedCoefficients:
    """Time-reverse every coefficient array."""
    return DiscretizedCoefficients(
        delta=coeffs.delta[::-1].copy(),
        a_bar=coeffs.a_bar[::-1].copy(),
        b_bar=coeffs.b_bar[::-1].copy(),
        c=coeffs.c[::-1].copy(),
    )


def scan_direct_term(coeffs: DiscretizedCoefficients, u: np.ndarray) -> np.ndarray:
    """Per-step diagonal contribution <c_t, b_bar_t> * u_t of a scan, shape (T, D)."""
    u = np.asarray(u, dtype=np.float64)
    return np.einsum("tn,tdn->td", coeffs.c, coeffs.b_bar) * u


def contextual_scan(
    coeffs_fwd: DiscretizedCoefficients,
    coeffs_bwd: DiscretizedCoefficients,
    u: np.ndarray,
) -> np.ndarray:
    """Bidirectional scan: forward pass plus reversed backward pass.

    Both coefficient sets are indexed in forward time. The diagonal is counted
    by both passes, so the backward pass's per-step direct term is subtracted
    once; the equivalent mixer is lower-triangular from the forward pass,
    strictly upper-triangular from the backward pass, with the forward
    diagonal.
    """
    u = np.asarray(u, dtype=np.float64)
    y_fwd = recurrent_scan(coeffs_fwd, u)
    y_bwd = recurrent_scan(reverse_coeffs(coeffs_bwd), u[::-1])[::-1]
    return y_fwd + y_bwd - scan_direct_term(coeffs_bwd, u)


def _log_decay(coeffs: DiscretizedCoefficients, channel: int) -> np.ndarray:
    # Cumulative decay products are formed as exp of summed logs so long
    # horizons cannot overflow intermediate products. An underflowed a_bar of
    # exactly 0 gets a large finite floor instead of -inf, keeping the cumsum
    # differences NaN-free.
    with np.errstate(divide="ignore"):
        log_a = np.log(coeffs.a_bar[:, channel])
    return np.maximum(log_a, -1e15)


def mixer_row_causal(
    coeffs: DiscretizedCoefficients, channel: int, row: int
) -> np.ndarray:
    """Row ``row`` of the causal mixer for one channel, streamed in O(T*N).

    Entry j is <c_row, b_bar_j> * prod_{k=j+1..row} a_bar_k for j <= row and
    zero above the diagonal.
    """
    t_len = coeffs.b_bar.shape[0]
    if not 0 <= row < t_len:
        raise ConfigError(f"row {row} outside [0, {t_len})")
    log_a = _log_decay(coeffs, channel)
    cum = np.concatenate([[0.0], np.cumsum(log_a)])  # cum[t] = sum of log a_bar[:t]
    out = np.zeros(t_len)
    j = np.arange(row + 1)
    decay = np.exp(cum[row + 1] - cum[j + 1])
    out[: row + 1] = decay * (coeffs.b_bar[: row + 1, channel, :] @ coeffs.c[row])
    return out


def materialize_mixer_causal(
    coeffs: DiscretizedCoefficients, channel: int, cap: int = MIXER_SIZE_CAP
) -> MatrixMixer:
    """Dense lower-triangular mixer M with M @ u[:, channel] == scan output."""
    t_len = coeffs.b_bar.shape[0]
    if t_len > cap:
        raise SizeCapError(
            f"T={t_len} exceeds the materialization cap {cap}; use mixer_row_causal"
        )
    log_a = _log_decay(coeffs, channel)
    cum = np.concatenate([[0.0], np.cumsum(log_a)])
    diff = cum[1:, None] - cum[None, 1:]  # diff[i, j] = sum log a_bar over (j, i]
    inner = coeffs.c @ coeffs.b_bar[:, channel, :].T  # inner[i, j] = <c_i, b_bar_j>
    with np.errstate(over="ignore"):
        decay = np.exp(np.where(np.arange(t_len)[:, None] >= np.arange(t_len)[None, :], diff, -np.inf))
    return MatrixMixer(matrix=decay * inner, structure_tag=CAUSAL_LOWER_TRIANGULAR)


def materialize_mixer_blockdiag(
    coeffs: DiscretizedCoefficients,
    segments: list[tuple[int, int]],
    channel: int,
    cap: int = MIXER_SIZE_CAP,
) -> MatrixMixer:
    """Block-diagonal mixer: an independent causal mixer on each segment."""
    t_len = coeffs.b_bar.shape[0]
    if t_len > cap:
        raise SizeCapError(f"T={t_len} exceeds the materialization cap {cap}")
    m = np.zeros((t_len, t_len))
    for start, end in segments:
        sub = DiscretizedCoefficients(
            delta=coeffs.delta[start:end],
            a_bar=coeffs.a_bar[start:end],
            b_bar=coeffs.b_bar[start:end],
            c=coeffs.c[start:end],
        )
        m[start:end, start:end] = materialize_mixer_causal(sub, channel, cap).matrix
    return MatrixMixer(matrix=m, structure_tag=BLOCK_DIAGONAL)


def mixer_row_contextual(
    coeffs_fwd: DiscretizedCoefficients,
    coeffs_bwd: DiscretizedCoefficients,
    channel: int,
    row: int,
) -> np.ndarray:
    """Row of the quasi-separable contextual mixer for one channel.

    Lower triangle (diagonal included) comes from the forward coefficients,
    the strict upper triangle from the reversed backward coefficients, so the
    row dotted with the input reproduces ``contextual_scan`` at that timestep.
    """
    t_len = coeffs_fwd.b_bar.shape[0]
    lower = mixer_row_causal(coeffs_fwd, channel, row)
    rev_row = mixer_row_causal(reverse_coeffs(coeffs_bwd), channel, t_len - 1 - row)[::-1]
    rev_row[row] = 0.0  # backward diagonal is the once-subtracted direct term
    return lower + rev_row
