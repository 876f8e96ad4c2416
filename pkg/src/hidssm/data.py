"""Synthetic phase-labeled sequences, the feature-file format, and frame
sparsification.

Feature files are one JSON header line followed by raw binary payloads, so
any language can parse them:

    line 1: ``{"magic": "HIDSSM-FEAT", "version": 1, "t": T, "d": D,
               "n_phases": P, "labels": bool, "progress": bool}\n``
    then    T*D float32 little-endian feature values (C order)
    then    T uint8 phase labels            (if ``labels``)
    then    T float32 little-endian progress (if ``progress``)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FeatureFileError

FILE_MAGIC = "HIDSSM-FEAT"
FILE_VERSION = 1


@dataclass
class FeatureSequence:
    """One sequence: (T, D) float32 features plus labels and optional progress."""

    features: np.ndarray
    labels: np.ndarray | None = None
    progress: np.ndarray | None = None
    n_phases: int = 0

    @property
    def seq_len(self) -> int:
        return self.features.shape[0]


@dataclass
class SyntheticSpec:
    """Generator settings for desk-scale phase-labeled sequences.

    Each phase gets a Gaussian prototype vector; frames add a linear
    within-run drift along a per-phase direction and i.i.d. noise. With
    ``monotone_phases`` the labels step through 0..n_phases-1 in order,
    otherwise runs interleave freely (adjacent runs always differ).
    """

    n_sequences: int = 20
    t_range: tuple[int, int] = (100, 100)
    d: int = 16
    n_phases: int = 7
    prototype_scale: float = 4.0
    drift_scale: float = 1.0
    noise_std: float = 1.0
    min_run: int = 5
    max_run: int = 30
    monotone_phases: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.n_sequences < 1:
            raise ConfigError("n_sequences must be >= 1")
        if self.d < 1 or self.n_phases < 1:
            raise ConfigError("d and n_phases must be >= 1")
        if self.noise_std < 0 or self.prototype_scale < 0 or self.drift_scale < 0:
            raise ConfigError("scales must be non-negative")
        t_min, t_max = self.t_range
        if not (1 <= t_min <= t_max):
            raise ConfigError(f"bad t_range {self.t_range}")
        if not (1 <= self.min_run <= self.max_run):
            raise ConfigError("run-length bounds must satisfy 1 <= min_run <= max_run")
        if self.monotone_phases:
            if t_min < self.n_phases * self.min_run:
                raise ConfigError(
                    "monotone spec infeasible: need T >= n_phases * min_run "
                    f"({self.n_phases} * {self.min_run}), got t_min={t_min}"
                )
            if t_max > self.n_phases * self.max_run:
                raise ConfigError(
                    "monotone spec infeasible: need T <= n_phases * max_run"
                )


def _monotone_runs(rng: np.random.Generator, spec: SyntheticSpec, t_len: int) -> list[int]:
    lengths = []
    remaining = t_len
    for i in range(spec.n_phases):
        left = spec.n_phases - i - 1
        low = max(spec.min_run, remaining - left * spec.max_run)
        high = min(spec.max_run, remaining - left * spec.min_run)
        lengths.append(int(rng.integers(low, high + 1)) if i < spec.n_phases - 1 else remaining)
        remaining -= lengths[-1]
    return lengths


def _interleaved_labels(rng: np.random.Generator, spec: SyntheticSpec, t_len: int) -> np.ndarray:
    labels = np.empty(t_len, dtype=np.int64)
    pos = 0
    prev = -1
    while pos < t_len:
        phase = int(rng.integers(0, spec.n_phases))
        if phase == prev and spec.n_phases > 1:
            phase = (phase + 1) % spec.n_phases
        length = int(rng.integers(spec.min_run, spec.max_run + 1))
        if t_len - pos - length < spec.min_run:
            length = t_len - pos  # absorb the tail so no undersized run remains
        labels[pos : pos + length] = phase
        pos += length
        prev = phase
    return labels


def dataset_prototypes(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """The (prototypes, drifts) pair a given spec deterministically draws."""
    rng = np.random.default_rng(spec.seed)
    prototypes = rng.normal(0.0, spec.prototype_scale, size=(spec.n_phases, spec.d))
    drifts = rng.normal(0.0, spec.drift_scale, size=(spec.n_phases, spec.d))
    return prototypes, drifts


def synth_generate(spec: SyntheticSpec) -> list[FeatureSequence]:
    """Deterministic dataset for the given spec; prototypes are drawn once and
    shared by every sequence so classifiers generalize across sequences."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    prototypes = rng.normal(0.0, spec.prototype_scale, size=(spec.n_phases, spec.d))
    drifts = rng.normal(0.0, spec.drift_scale, size=(spec.n_phases, spec.d))
    sequences = []
    for _ in range(spec.n_sequences):
        t_len = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        if spec.monotone_phases:
            lengths = _monotone_runs(rng, spec, t_len)
            labels = np.repeat(np.arange(spec.n_phases), lengths)
        else:
            labels = _interleaved_labels(rng, spec, t_len)
        progress = np.empty(t_len)
        features = np.empty((t_len, spec.d))
        start = 0
        for t in range(1, t_len + 1):
            if t == t_len or labels[t] != labels[start]:
                length = t - start
                s = (np.arange(length) + 1.0) / (length + 1.0)
                progress[start:t] = s
                phase = labels[start]
                features[start:t] = (
                    prototypes[phase]
                    + (s - 0.5)[:, None] * drifts[phase]
                    + rng.normal(0.0, spec.noise_std, size=(length, spec.d))
                )
                start = t
        sequences.append(
            FeatureSequence(
                features=features.astype(np.float32),
                labels=labels.astype(np.int64),
                progress=progress.astype(np.float32),
                n_phases=spec.n_phases,
            )
        )
    return sequences


def nearest_prototype_accuracy(sequences: list[FeatureSequence], spec: SyntheticSpec) -> float:
    """Frame accuracy of classifying by the nearest per-phase prototype; used
    to calibrate the generator's separability."""
    prototypes, _ = dataset_prototypes(spec)
    correct = total = 0
    for seq in sequences:
        feats = seq.features.astype(np.float64)
        d2 = ((feats[:, None, :] - prototypes[None, :, :]) ** 2).sum(axis=2)
        correct += int(np.sum(np.argmin(d2, axis=1) == seq.labels))
        total += seq.seq_len
    return correct / total


def sparsify_indices(t_full: int, interval: int, offset: int) -> np.ndarray:
    """Fixed-interval frame selection: offset, offset+interval, ... < t_full."""
    if interval < 1:
        raise ConfigError("interval must be >= 1")
    if not 0 <= offset < interval:
        raise ConfigError(f"offset must satisfy 0 <= offset < interval, got {offset}")
    return np.arange(offset, t_full, interval)


def save_features(seq: FeatureSequence, path) -> None:
    features = np.ascontiguousarray(seq.features, dtype="<f4")
    header = {
        "magic": FILE_MAGIC,
        "version": FILE_VERSION,
        "t": int(features.shape[0]),
        "d": int(features.shape[1]),
        "n_phases": int(seq.n_phases),
        "labels": seq.labels is not None,
        "progress": seq.progress is not None,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(features.tobytes())
        if seq.labels is not None:
            if len(seq.labels) != features.shape[0]:
                raise DataError("label length does not match feature length")
            fh.write(np.asarray(seq.labels, dtype=np.uint8).tobytes())
        if seq.progress is not None:
            if len(seq.progress) != features.shape[0]:
                raise DataError("progress length does not match feature length")
            fh.write(np.ascontiguousarray(seq.progress, dtype="<f4").tobytes())


def load_features(path) -> FeatureSequence:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise FeatureFileError(f"cannot read feature file: {exc}") from exc
    newline = data.find(b"\n")
    if newline < 0:
        raise FeatureFileError("missing header line")
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FeatureFileError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("magic") != FILE_MAGIC:
        raise FeatureFileError("bad magic")
    if header.get("version") != FILE_VERSION:
        raise FeatureFileError(f"unsupported version {header.get('version')!r}")
    try:
        t_len, d = int(header["t"]), int(header["d"])
        n_phases = int(header["n_phases"])
        has_labels, has_progress = bool(header["labels"]), bool(header["progress"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FeatureFileError(f"incomplete header: {exc}") from exc
    if t_len < 1 or d < 1:
        raise FeatureFileError(f"invalid dimensions t={t_len}, d={d}")

    payload = data[newline + 1 :]
    expected = 4 * t_len * d + (t_len if has_labels else 0) + (4 * t_len if has_progress else 0)
    if len(payload) != expected:
        raise FeatureFileError(
            f"payload has {len(payload)} bytes, expected {expected} (truncated or oversized)"
        )
    pos = 4 * t_len * d
    features = np.frombuffer(payload[:pos], dtype="<f4").reshape(t_len, d).copy()
    labels = None
    if has_labels:
        labels = np.frombuffer(payload[pos : pos + t_len], dtype=np.uint8).astype(np.int64)
        pos += t_len
        if n_phases and labels.size and labels.max() >= n_phases:
            raise FeatureFileError("label value outside [0, n_phases)")
    progress = None
    if has_progress:
        progress = np.frombuffer(payload[pos : pos + 4 * t_len], dtype="<f4").copy()
    return FeatureSequence(features=features, labels=labels, progress=progress, n_phases=n_phases)


@dataclass
class Manifest:
    """Dataset index written next to the feature files."""

    train: list[str] = field(default_factory=list)
    eval: list[str] = field(default_factory=list)
    spec: dict = field(default_factory=dict)


def save_manifest(manifest: Manifest, path) -> None:
    payload = {"train": manifest.train, "eval": manifest.eval, "spec": manifest.spec}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> Manifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest: {exc}") from exc
    if not isinstance(payload, dict) or "train" not in payload:
        raise DataError("manifest must be a JSON object with a 'train' list")
    return Manifest(
        train=list(payload.get("train", [])),
        eval=list(payload.get("eval", [])),
        spec=dict(payload.get("spec", {})),
    )
