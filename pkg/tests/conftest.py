import numpy as np
import pytest

from mmrobust import models
from mmrobust.harness import synthetic


def tiny_model(seed=0, activation="tanh", loss_kind="softmax_ce"):
    """The d_audio=3, d_video=3, bottleneck 4, K=3 reference model."""
    return models.build_fusion_model(
        3, 3, 3,
        bottleneck_audio=2, bottleneck_video=2,
        hidden_audio=(5,), hidden_video=(5,), hidden_head=(6,),
        activation=activation, loss_kind=loss_kind, seed=seed,
    )


def tiny_sample(seed=0, k=3, multi_label=False):
    rng = np.random.default_rng(seed)
    label = np.zeros(k)
    if multi_label:
        label[rng.choice(k, size=2, replace=False)] = 1.0
    else:
        label[rng.integers(0, k)] = 1.0
    return models.MultiModalSample(
        rng.standard_normal(3), rng.standard_normal(3), label
    )


def separable_dataset(seed=0, n_per_class=30, n_classes=2):
    """Well-separated blobs; a fusion MLP fits them to ~1.0 accuracy."""
    cfg = synthetic.SyntheticConfig(
        n_classes=n_classes, samples_per_class=n_per_class,
        d_audio=4, d_video=4, cluster_spread=0.15, shapes="blob",
        class_separation=2.0, cross_modal_correlation=1.0, seed=seed,
    )
    return synthetic.generate_synthetic(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
