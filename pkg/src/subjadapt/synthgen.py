"""Synthetic multi-subject, multi-class multichannel signals.

Every class owns a latent template built from three sinusoids. Trial ``i`` of
a class renders that template with its own small latency (shared by all
subjects, like a stimulus sequence every subject sees), then the subject's
linear channel mixing ``I + shift * MIX_SCALE * R_s``, per-channel gain and
offset are applied and white noise is added. ``shift_strength`` therefore
controls how far apart subjects are while the class structure stays shared,
and the latency jitter keeps a single trial from being a perfect class
exemplar.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from .dataio import DatasetHeader, EEGRecord
from .errors import ValidationError

N_COMPONENTS = 3
FREQ_RANGE_HZ = (4.0, 30.0)
MIX_SCALE = 0.25
GAIN_SCALE = 0.3
OFFSET_SCALE = 0.3
TEMPLATE_AMPLITUDE = 0.5
TRIAL_JITTER_MS = 20.0


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 4
    n_classes: int = 5
    per_class: int = 30
    n_channels: int = 16
    n_timesteps: int = 500
    shift_strength: float = 1.0
    noise_std: float = 0.5
    seed: int = 0
    sampling_rate_hz: int = 1000

    def __post_init__(self):
        for name in ("n_subjects", "n_classes", "per_class", "n_channels", "n_timesteps",
                     "sampling_rate_hz"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.shift_strength < 0 or self.noise_std < 0:
            raise ValidationError("shift_strength and noise_std must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ClassTemplates:
    """Per-class sinusoid parameters; :meth:`render` evaluates them in time."""

    freqs: np.ndarray   # K x N_COMPONENTS, Hz
    phases: np.ndarray  # K x N_COMPONENTS x D
    amps: np.ndarray    # K x N_COMPONENTS x D

    def render(self, label: int, t: np.ndarray) -> np.ndarray:
        arg = 2 * np.pi * self.freqs[label][:, None, None] * t + self.phases[label][..., None]
        return (self.amps[label][..., None] * np.sin(arg)).sum(axis=0)


def class_templates(cfg: SynthConfig, rng: np.random.Generator) -> ClassTemplates:
    K, D = cfg.n_classes, cfg.n_channels
    freqs = rng.uniform(*FREQ_RANGE_HZ, size=(K, N_COMPONENTS))
    phases = rng.uniform(0, 2 * np.pi, size=(K, N_COMPONENTS, D))
    amps = TEMPLATE_AMPLITUDE * rng.normal(size=(K, N_COMPONENTS, D)) / np.sqrt(N_COMPONENTS)
    return ClassTemplates(freqs, phases, amps)


def subject_transforms(cfg: SynthConfig, rng: np.random.Generator):
    """Per-subject mixing matrices, channel gains and channel offsets."""
    S, D, a = cfg.n_subjects, cfg.n_channels, cfg.shift_strength
    mix = np.eye(D) + a * MIX_SCALE * rng.normal(size=(S, D, D)) / np.sqrt(D)
    gain = 1.0 + a * GAIN_SCALE * rng.normal(size=(S, D))
    offset = a * OFFSET_SCALE * rng.normal(size=(S, D))
    return mix, gain, offset


def generate(cfg: SynthConfig) -> tuple[DatasetHeader, list[EEGRecord]]:
    tmpl_rng, subj_rng, noise_rng, trial_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4))
    templates = class_templates(cfg, tmpl_rng)
    mix, gain, offset = subject_transforms(cfg, subj_rng)
    t = np.arange(cfg.n_timesteps) / cfg.sampling_rate_hz
    # trial-to-trial latency variation; trial i of a class is the same stimulus
    # for every subject, so the latencies are shared across subjects
    jitter = TRIAL_JITTER_MS / 1000.0
    delays = trial_rng.uniform(-jitter, jitter, size=(cfg.n_classes, cfg.per_class))
    latents = [[templates.render(c, t - delays[c, i]) for i in range(cfg.per_class)]
               for c in range(cfg.n_classes)]
    records = []
    for s in range(cfg.n_subjects):
        for c in range(cfg.n_classes):
            for i in range(cfg.per_class):
                clean = gain[s][:, None] * (mix[s] @ latents[c][i]) + offset[s][:, None]
                noise = cfg.noise_std * noise_rng.normal(size=clean.shape)
                records.append(EEGRecord(s, c, clean + noise))
    header = DatasetHeader(
        n_samples=len(records), n_channels=cfg.n_channels, n_timesteps=cfg.n_timesteps,
        n_classes=cfg.n_classes, n_subjects=cfg.n_subjects,
        sampling_rate_hz=cfg.sampling_rate_hz)
    return header, records


def shift_probe(records) -> dict:
    """Mean Euclidean distance between per-subject class-mean signals.

    Returns ``{"pairs": {(s_i, s_j): distance}, "mean": overall or None}``.
    """
    sums: dict[tuple[int, int], np.ndarray] = {}
    counts: dict[tuple[int, int], int] = {}
    for r in records:
        key = (r.subject_id, r.label)
        sums[key] = sums.get(key, 0.0) + r.signal
        counts[key] = counts.get(key, 0) + 1
    means = {key: sums[key] / counts[key] for key in sums}
    subjects = sorted({s for s, _ in means})
    pairs = {}
    for si, sj in combinations(subjects, 2):
        shared = sorted({c for s, c in means if s == si} & {c for s, c in means if s == sj})
        if shared:
            pairs[(si, sj)] = float(np.mean(
                [np.linalg.norm(means[(si, c)] - means[(sj, c)]) for c in shared]))
    overall = float(np.mean(list(pairs.values()))) if pairs else None
    return {"pairs": pairs, "mean": overall}
