import numpy as np
import pytest

from mmrobust import attacks, models
from mmrobust.attacks import (
    Mask,
    PerturbationBudget,
    apply_perturbation,
    attack_dataset,
    evaluate_under_attack,
    pgd_attack,
    pointwise_robustness,
    random_perturbation_like,
    uniform_in_ball,
    universal_perturbation,
)
from mmrobust.errors import BudgetError, EmptyInputError
from mmrobust.models import (
    Affine,
    Dataset,
    FusionModel,
    MultiModalSample,
    TrainConfig,
    build_fusion_model,
    identity_encoder,
)
from mmrobust.numerics import NormKind, lp_norm

from conftest import tiny_model, tiny_sample

ALL_NORMS = (NormKind.L1, NormKind.L2, NormKind.LINF)


def linear_binary_model(w_audio, w_video=None, bias=0.0):
    """logits = (0, w_a . x_a + w_v . x_v + bias) over identity encoders."""
    w_audio = np.asarray(w_audio, dtype=np.float64)
    d_a = w_audio.size
    w_video = np.zeros(2) if w_video is None else np.asarray(w_video, dtype=np.float64)
    d_v = w_video.size
    row = np.concatenate([w_audio, w_video])
    head = [Affine(np.vstack([np.zeros(d_a + d_v), row]), np.array([0.0, bias]), "linear")]
    return FusionModel(identity_encoder(d_a), identity_encoder(d_v), head)


class TestBudget:
    def test_paper_default_shape(self):
        budget = PerturbationBudget(epsilon=0.1)
        assert budget.norm is NormKind.L2
        assert budget.iterations == 20
        assert budget.mask is Mask.BOTH
        assert budget.alpha == pytest.approx(2.5 * 0.1 / 20)

    def test_invalid_budgets(self):
        with pytest.raises(BudgetError):
            PerturbationBudget(epsilon=-0.1)
        with pytest.raises(BudgetError):
            PerturbationBudget(epsilon=0.1, iterations=0)
        with pytest.raises(BudgetError):
            PerturbationBudget(epsilon=0.1, step_size=0.0)


class TestPgdAttack:
    def test_flat_loss_returns_zero(self):
        model = tiny_model(seed=1)
        for layer in model.head:
            layer.weight = np.zeros_like(layer.weight)
            layer.bias = np.zeros_like(layer.bias)
        sample = tiny_sample(seed=1)
        for norm in ALL_NORMS:
            pert = pgd_attack(model, sample, PerturbationBudget(0.5, norm=norm))
            assert np.all(pert.delta_audio == 0.0)
            assert np.all(pert.delta_video == 0.0)

    def test_linear_binary_converges_to_scaled_gradient(self):
        # affine-logit loss ascent: the input-gradient direction is fixed,
        # so once both balls saturate the deltas are epsilon times the
        # unit gradient of each modality (the joint normalization only
        # slows the walk, it cannot bend it)
        rng = np.random.default_rng(3)
        wa, wv = rng.standard_normal(3), rng.standard_normal(2)
        model = FusionModel(
            identity_encoder(3), identity_encoder(2),
            [Affine(np.vstack([np.zeros(5), np.concatenate([wa, wv])]), np.zeros(2), "linear")],
        )
        sample = MultiModalSample(rng.standard_normal(3), rng.standard_normal(2),
                                  np.array([1.0, 0.0]))
        eps = 0.3
        # explicit step size: each modality advances alpha * its gradient
        # share per step, so make the cumulative walk cover eps for the
        # smaller-gradient modality too
        w = np.concatenate([wa, wv])
        min_ratio = min(lp_norm(wa, NormKind.L2), lp_norm(wv, NormKind.L2)) / lp_norm(w, NormKind.L2)
        budget = PerturbationBudget(eps, norm=NormKind.L2, iterations=80, step_size=0.05)
        assert budget.iterations * budget.alpha * min_ratio > eps
        pert = pgd_attack(model, sample, budget)
        # label is class 0, so ascent pushes the class-1 score up: along +w
        np.testing.assert_allclose(pert.delta_audio, eps * wa / lp_norm(wa, NormKind.L2), rtol=1e-9)
        np.testing.assert_allclose(pert.delta_video, eps * wv / lp_norm(wv, NormKind.L2), rtol=1e-9)

    @pytest.mark.parametrize("norm", ALL_NORMS)
    def test_feasibility_and_determinism(self, norm):
        model = tiny_model(seed=2, activation="relu")
        rng = np.random.default_rng(4)
        for _ in range(10):
            sample = MultiModalSample(rng.standard_normal(3), rng.standard_normal(3),
                                      np.eye(3)[rng.integers(0, 3)])
            eps = float(rng.uniform(0.01, 1.0))
            budget = PerturbationBudget(eps, norm=norm, iterations=10)
            p1 = pgd_attack(model, sample, budget)
            p2 = pgd_attack(model, sample, budget)
            assert p1.is_feasible(budget)
            assert np.array_equal(p1.delta_audio, p2.delta_audio)
            assert np.array_equal(p1.delta_video, p2.delta_video)

    def test_best_iterate_no_worse_than_clean(self):
        model = tiny_model(seed=5, activation="relu")
        rng = np.random.default_rng(6)
        for _ in range(10):
            sample = MultiModalSample(rng.standard_normal(3), rng.standard_normal(3),
                                      np.eye(3)[rng.integers(0, 3)])
            # oversized step to provoke overshoot
            budget = PerturbationBudget(0.5, iterations=5, step_size=2.0)
            pert = pgd_attack(model, sample, budget)
            logits_clean, _ = models.forward(model, sample.x_audio, sample.x_video)
            logits_att, _ = models.forward(model, sample.x_audio + pert.delta_audio,
                                           sample.x_video + pert.delta_video)
            clean = models.loss(model, logits_clean, sample.label)
            att = models.loss(model, logits_att, sample.label)
            assert att >= clean - 1e-9

    def test_mask_soundness(self):
        model = tiny_model(seed=7)
        sample = tiny_sample(seed=3)
        audio_only = pgd_attack(model, sample, PerturbationBudget(0.4, mask=Mask.AUDIO_ONLY))
        video_only = pgd_attack(model, sample, PerturbationBudget(0.4, mask=Mask.VIDEO_ONLY))
        assert np.all(audio_only.delta_video == 0.0)
        assert np.any(audio_only.delta_audio != 0.0)
        assert np.all(video_only.delta_audio == 0.0)
        assert np.any(video_only.delta_video != 0.0)

    def test_unimodal_perturbation_feasible_for_joint_budget(self):
        model = tiny_model(seed=8)
        sample = tiny_sample(seed=4)
        joint = PerturbationBudget(0.25, norm=NormKind.L2)
        for mask in (Mask.AUDIO_ONLY, Mask.VIDEO_ONLY):
            pert = pgd_attack(model, sample, PerturbationBudget(0.25, mask=mask))
            assert pert.is_feasible(joint)


def small_benchmark(seed, eps_scale=1.0):
    from mmrobust.harness import synthetic

    cfg = synthetic.SyntheticConfig(
        n_classes=3, samples_per_class=25, d_audio=4, d_video=4,
        cluster_spread=0.18, shapes=("blob", "crescent", "ring"),
        class_separation=0.4 * eps_scale, shape_radius=0.25 * eps_scale,
        cross_modal_correlation=0.9, seed=seed,
    )
    dataset = synthetic.generate_synthetic(cfg)
    train, test = synthetic.train_test_split(dataset, 0.7, seed=seed)
    model = build_fusion_model(
        4, 4, 3, bottleneck_audio=3, bottleneck_video=3,
        hidden_audio=(10,), hidden_video=(10,), hidden_head=(10,),
        seed=seed + 1,
    )
    config = TrainConfig(epochs=25, batch_size=16, learning_rate=0.05, seed=seed + 2)
    trained, _ = models.train(model, train, config)
    return trained, train, test


class TestUniversalPerturbation:
    def test_zero_epsilon_is_noop(self):
        model, train, test = small_benchmark(seed=0)
        budget = PerturbationBudget(0.0, iterations=5)
        pert = universal_perturbation(model, test, budget, seed=0)
        assert np.all(pert.delta_audio == 0.0) and np.all(pert.delta_video == 0.0)

    def test_feasibility(self):
        model, _, test = small_benchmark(seed=1)
        for norm in ALL_NORMS:
            budget = PerturbationBudget(0.2, norm=norm, iterations=8)
            pert = universal_perturbation(model, test, budget, seed=1)
            assert pert.is_feasible(budget)

    def test_determinism_given_seed(self):
        model, _, test = small_benchmark(seed=2)
        budget = PerturbationBudget(0.2, iterations=6)
        p1 = universal_perturbation(model, test, budget, batch_size=8, seed=9)
        p2 = universal_perturbation(model, test, budget, batch_size=8, seed=9)
        assert np.array_equal(p1.delta_audio, p2.delta_audio)
        assert np.array_equal(p1.delta_video, p2.delta_video)

    def test_empty_subset_rejected(self):
        with pytest.raises(EmptyInputError):
            universal_perturbation(tiny_model(), [], PerturbationBudget(0.1))

    def test_beats_random_noise_of_equal_norm(self):
        # paired-seed protocol: universal delta should hurt accuracy more
        # than a random direction scaled to the same per-modality norm
        wins = 0
        for seed in range(10):
            model, train, test = small_benchmark(seed=seed)
            budget = PerturbationBudget(0.3, norm=NormKind.L2, iterations=15)
            pert = universal_perturbation(model, test, budget, seed=seed)
            rand = random_perturbation_like(np.random.default_rng(seed + 100), pert,
                                            NormKind.L2)

            def accuracy(delta):
                xa, xv, y = test.as_arrays()
                logits, _, _ = models._forward_batch(
                    model, xa + delta.delta_audio, xv + delta.delta_video
                )
                return float(np.mean(np.argmax(logits, axis=1) == np.argmax(y, axis=1)))

            if accuracy(pert) <= accuracy(rand):
                wins += 1
        assert wins >= 9


class TestPointwiseRobustness:
    def test_misclassified_sample_returns_zero(self):
        model = linear_binary_model([1.0, 0.0])
        # score positive => predicted class 1, but label class 0
        sample = MultiModalSample(np.array([2.0, 0.0]), np.zeros(2), np.array([1.0, 0.0]))
        eps = pointwise_robustness(model, sample, NormKind.L2, Mask.AUDIO_ONLY, 1.0, 1e-3)
        assert eps == 0.0

    def test_linear_margin_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            w = rng.standard_normal(3)
            x = rng.standard_normal(3)
            bias = float(rng.uniform(-0.5, 0.5))
            score = float(w @ x + bias)
            label = np.array([0.0, 1.0]) if score > 0 else np.array([1.0, 0.0])
            model = linear_binary_model(w, bias=bias)
            sample = MultiModalSample(x, np.zeros(2), label)
            margin = abs(score) / lp_norm(w, NormKind.L2)
            got = pointwise_robustness(
                model, sample, NormKind.L2, Mask.AUDIO_ONLY,
                eps_max=margin * 3 + 0.5, tol=1e-3, iterations=40,
            )
            assert got == pytest.approx(margin, abs=2e-3)

    def test_capped_by_eps_max(self):
        model = linear_binary_model([1.0, 0.0])
        sample = MultiModalSample(np.array([-5.0, 0.0]), np.zeros(2), np.array([1.0, 0.0]))
        got = pointwise_robustness(model, sample, NormKind.L2, Mask.AUDIO_ONLY, 0.5, 1e-3)
        assert got == 0.5

    def test_bad_range_rejected(self):
        model = linear_binary_model([1.0, 0.0])
        sample = MultiModalSample(np.array([-1.0, 0.0]), np.zeros(2), np.array([1.0, 0.0]))
        with pytest.raises(BudgetError):
            pointwise_robustness(model, sample, NormKind.L2, Mask.AUDIO_ONLY, 0.0, 1e-3)


class TestEvaluateUnderAttack:
    def test_zero_epsilon_metrics_identical(self):
        model, _, test = small_benchmark(seed=3)
        report = evaluate_under_attack(model, test, PerturbationBudget(0.0, iterations=3))
        assert report.attacked == report.clean

    def test_audio_mask_never_touches_video(self):
        model, _, test = small_benchmark(seed=4)
        budget = PerturbationBudget(0.2, mask=Mask.AUDIO_ONLY, iterations=5)
        perturbed, perts = attack_dataset(model, test, budget)
        for orig, att, p in zip(test.samples, perturbed.samples, perts):
            assert np.array_equal(orig.x_video, att.x_video)
            assert np.all(p.delta_video == 0.0)

    def test_default_budget_degrades_accuracy(self):
        model, _, test = small_benchmark(seed=5)
        report = evaluate_under_attack(model, test, PerturbationBudget(0.1))
        assert report.clean.accuracy > 0.8
        assert report.attacked.accuracy < report.clean.accuracy

    def test_per_class_drop_consistency(self):
        from mmrobust.harness.metrics import drop_rate

        model, _, test = small_benchmark(seed=6)
        report = evaluate_under_attack(model, test, PerturbationBudget(0.15))
        for c, drop in report.per_class_drop.items():
            clean_c = report.per_class_clean[c]
            if clean_c > 0:
                assert drop == pytest.approx(drop_rate(clean_c, report.per_class_attacked[c]))


class TestBallSampling:
    @pytest.mark.parametrize("norm", ALL_NORMS)
    def test_uniform_in_ball_feasible(self, norm, rng):
        for _ in range(300):
            eps = float(rng.uniform(0.01, 2.0))
            v = uniform_in_ball(rng, 6, norm, eps)
            assert lp_norm(v, norm) <= eps + 1e-12

    def test_zero_radius(self, rng):
        for norm in ALL_NORMS:
            assert np.all(uniform_in_ball(rng, 4, norm, 0.0) == 0.0)

    def test_random_like_matches_norms(self, rng):
        pert = attacks.Perturbation(rng.standard_normal(5), rng.standard_normal(3))
        for norm in ALL_NORMS:
            rand = random_perturbation_like(rng, pert, norm)
            na, nv = pert.norms(norm)
            ra, rv = rand.norms(norm)
            assert ra == pytest.approx(na, rel=1e-12)
            assert rv == pytest.approx(nv, rel=1e-12)


def test_apply_perturbation_adds_deltas():
    sample = tiny_sample(seed=10)
    pert = attacks.Perturbation(np.full(3, 0.5), np.full(3, -0.25))
    moved = apply_perturbation(sample, pert)
    np.testing.assert_array_equal(moved.x_audio, sample.x_audio + 0.5)
    np.testing.assert_array_equal(moved.x_video, sample.x_video - 0.25)
    np.testing.assert_array_equal(moved.label, sample.label)
