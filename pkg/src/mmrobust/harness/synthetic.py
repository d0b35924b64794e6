"""Synthetic paired-modality datasets at desk scale.

Each class occupies a region of a 2-D latent space (a blob, a crescent,
or a ring; the last two give non-convex class supports), and each sample
gets two latent draws: one for the audio view and one for the video view,
mixed according to the cross-modal correlation. Low correlation produces
samples whose two modalities tell conflicting stories, which is exactly
the regime where unimodal attacks get interesting. Fixed random
projections lift the latents into the two feature spaces.

All values are quantized through float32 before the dataset is built so
that the binary file format (which stores float32) round-trips bit for
bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DomainError
from ..models import Dataset, MultiModalSample

SHAPES = ("blob", "crescent", "ring")


@dataclass
class SyntheticConfig:
    n_classes: int = 3
    samples_per_class: int = 80
    d_audio: int = 6
    d_video: int = 6
    cluster_spread: Sequence[float] | float = 0.25
    cross_modal_correlation: float = 0.9
    shapes: Sequence[str] | str = "blob"
    seed: int = 0
    multi_label: bool = False
    class_separation: float = 1.0
    shape_radius: Sequence[float] | float = 0.8
    ambient_noise: float = 0.02
    # per-class distance of the class center from the origin; None puts
    # every center on the class_separation circle. A radius of 0 centers
    # the class at the origin, so a blob inside a concentric ring is
    # center_radius = (0, 0, ...) with suitable shape radii.
    center_radius: Sequence[float] | None = None

    spreads: tuple[float, ...] = field(init=False)
    shape_tags: tuple[str, ...] = field(init=False)
    radii: tuple[float, ...] = field(init=False)
    center_radii: tuple[float, ...] = field(init=False)

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise DomainError("need at least two classes")
        if self.samples_per_class < 1:
            raise DomainError("samples_per_class must be >= 1")
        if not (0.0 <= self.cross_modal_correlation <= 1.0):
            raise DomainError("cross_modal_correlation must lie in [0, 1]")
        self.spreads = _broadcast(self.cluster_spread, self.n_classes, "cluster_spread")
        if any(s <= 0 for s in self.spreads):
            raise DomainError("cluster_spread entries must be > 0")
        tags = _broadcast(self.shapes, self.n_classes, "shapes")
        for tag in tags:
            if tag not in SHAPES:
                raise DomainError(f"unknown shape {tag!r}; expected one of {SHAPES}")
        self.shape_tags = tags
        self.radii = _broadcast(self.shape_radius, self.n_classes, "shape_radius")
        if any(r <= 0 for r in self.radii):
            raise DomainError("shape_radius entries must be > 0")
        if self.center_radius is None:
            self.center_radii = tuple([self.class_separation] * self.n_classes)
        else:
            self.center_radii = _broadcast(self.center_radius, self.n_classes,
                                           "center_radius")
            if any(r < 0 for r in self.center_radii):
                raise DomainError("center_radius entries must be >= 0")


def _broadcast(value, n: int, name: str) -> tuple:
    if isinstance(value, (str, int, float)):
        return tuple([value] * n)
    items = tuple(value)
    if len(items) == 1:
        return tuple([items[0]] * n)
    if len(items) != n:
        raise DomainError(f"{name} needs 1 or {n} entries, got {len(items)}")
    return items


def _latent(
    rng: np.random.Generator, shape: str, center: np.ndarray, spread: float,
    radius: float, rotation: float, n: int,
) -> np.ndarray:
    if shape == "blob":
        return center + spread * rng.standard_normal((n, 2))
    if shape == "crescent":
        theta = rotation + rng.uniform(0.0, np.pi, size=n)
        arc = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return center + arc + spread * rng.standard_normal((n, 2))
    # ring: radial noise only keeps the hole open
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    r = radius + spread * rng.standard_normal(n)
    return center + r[:, None] * np.stack([np.cos(theta), np.sin(theta)], axis=1)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Deterministic dataset from the config seed.

    Per class, two independent latent clouds are drawn (audio view and an
    alternative view); the video latent is the convex mix
    corr * audio_latent + (1 - corr) * alternative, so corr 1 means both
    modalities see the same point and corr 0 makes them independent draws
    from the class region. Multi-label mode adds up to two extra labels
    per sample.
    """
    rng = np.random.default_rng(config.seed)
    k = config.n_classes
    proj_a = rng.standard_normal((config.d_audio, 2)) / np.sqrt(2.0)
    proj_v = rng.standard_normal((config.d_video, 2)) / np.sqrt(2.0)

    angles = 2.0 * np.pi * np.arange(k) / k
    centers = np.array(config.center_radii)[:, None] * np.stack(
        [np.cos(angles), np.sin(angles)], axis=1
    )

    samples: list[MultiModalSample] = []
    corr = config.cross_modal_correlation
    for c in range(k):
        n = config.samples_per_class
        spread = float(config.spreads[c])
        shape = config.shape_tags[c]
        rotation = angles[c]
        z_audio = _latent(rng, shape, centers[c], spread, config.radii[c], rotation, n)
        z_alt = _latent(rng, shape, centers[c], spread, config.radii[c], rotation, n)
        z_video = corr * z_audio + (1.0 - corr) * z_alt
        x_audio = z_audio @ proj_a.T + config.ambient_noise * rng.standard_normal((n, config.d_audio))
        x_video = z_video @ proj_v.T + config.ambient_noise * rng.standard_normal((n, config.d_video))
        labels = np.zeros((n, k))
        labels[:, c] = 1.0
        if config.multi_label:
            extras = rng.integers(0, 3, size=n)
            for i in range(n):
                if extras[i] and k > 1:
                    others = [o for o in range(k) if o != c]
                    picked = rng.choice(others, size=min(extras[i], len(others)), replace=False)
                    labels[i, picked] = 1.0
        x_audio = x_audio.astype(np.float32).astype(np.float64)
        x_video = x_video.astype(np.float32).astype(np.float64)
        for i in range(n):
            samples.append(MultiModalSample(x_audio[i], x_video[i], labels[i]))
    return Dataset(
        samples=samples,
        d_audio=config.d_audio,
        d_video=config.d_video,
        n_classes=k,
        multi_label=config.multi_label,
    )


def train_test_split(
    dataset: Dataset, train_fraction: float, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Stratified split by primary (argmax) class, deterministic given seed."""
    if not (0.0 < train_fraction < 1.0):
        raise DomainError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng([seed, 0x5311])
    _, _, y = dataset.as_arrays()
    primary = np.argmax(y, axis=1)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for c in range(dataset.n_classes):
        members = np.nonzero(primary == c)[0]
        if members.size == 0:
            continue
        order = members[rng.permutation(members.size)]
        n_train = int(np.ceil(train_fraction * members.size))
        if members.size > 1:
            n_train = min(n_train, members.size - 1)
        train_idx.extend(order[:n_train].tolist())
        test_idx.extend(order[n_train:].tolist())
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))
