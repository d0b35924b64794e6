import math

import numpy as np
import pytest

from mmrobust import models, theory
from mmrobust.errors import ConstructionError, DomainError
from mmrobust.theory import (
    BreakCase,
    CounterexampleSpec,
    construct_counterexample,
    default_eps_unimodal,
    empirical_unimodal_break,
    find_unimodal_break,
    fused_score,
    verify_theorem1,
)


def unit_vec(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class TestConstruction:
    def test_direct_scalar_construction(self):
        spec = CounterexampleSpec(a=[1.0], b=[1.0], s=1.0, t=2.0)
        model, sample = construct_counterexample(spec)
        np.testing.assert_allclose(sample.x_audio, [-1.0])
        np.testing.assert_allclose(sample.x_video, [2.0])
        assert fused_score(model, sample.x_audio, sample.x_video) == pytest.approx(1.0)

    def test_s_larger_than_t(self):
        spec = CounterexampleSpec(a=[1.0], b=[1.0], s=2.0, t=1.0)
        model, sample = construct_counterexample(spec)
        np.testing.assert_allclose(sample.x_audio, [-2.0])
        np.testing.assert_allclose(sample.x_video, [1.0])
        assert fused_score(model, sample.x_audio, sample.x_video) == pytest.approx(-1.0)

    def test_random_specs_hit_exact_scores(self, rng):
        for _ in range(30):
            spec = CounterexampleSpec(
                a=rng.standard_normal(4), b=rng.standard_normal(3),
                s=float(rng.uniform(0.1, 5)), t=float(rng.uniform(0.1, 5)),
            )
            model, sample = construct_counterexample(spec)
            assert fused_score(model, sample.x_audio, sample.x_video) == pytest.approx(
                -spec.s + spec.t, abs=1e-12
            )
            assert float(spec.a @ models.encode_audio(model, sample.x_audio)) == pytest.approx(
                -spec.s, abs=1e-12
            )

    def test_invalid_specs_rejected(self):
        with pytest.raises(DomainError):
            CounterexampleSpec(a=[1.0], b=[1.0], s=-1.0, t=1.0)
        with pytest.raises(DomainError):
            CounterexampleSpec(a=[0.0], b=[1.0], s=1.0, t=1.0)


class TestFindBreak:
    def test_no_noise_needed_case(self):
        spec = CounterexampleSpec(a=[1.0], b=[1.0], s=1.0, t=2.0)
        model, sample = construct_counterexample(spec)
        report = find_unimodal_break(model, sample, spec)
        assert report.case is BreakCase.NO_NOISE_NEEDED
        assert report.delta_norm == 0.0
        assert report.fused_score_after == pytest.approx(1.0)
        assert report.label_flipped
        assert verify_theorem1(report, spec)

    def test_identity_closed_form(self):
        # hand oracle: a=(1), x_A=-3, target -t/2=-1 => delta = 2,
        # fused score after = +1 = t/2, and 2 < eps threshold 3
        spec = CounterexampleSpec(a=[1.0], b=[1.0], s=3.0, t=2.0, eps_unimodal=3.0)
        model, sample = construct_counterexample(spec)
        report = find_unimodal_break(model, sample, spec)
        assert report.case is BreakCase.IVT_BREAK
        assert report.delta_norm == pytest.approx(2.0, abs=1e-5)
        audio_score = float(spec.a @ (sample.x_audio + report.delta))
        assert audio_score == pytest.approx(-1.0, abs=1e-6)
        assert report.fused_score_after == pytest.approx(1.0, abs=1e-6)
        assert report.delta_norm < 3.0
        assert verify_theorem1(report, spec)

    def test_random_specs_reach_half_t(self, rng):
        for _ in range(50):
            s = float(rng.uniform(1.0, 4.0))
            t = float(rng.uniform(0.2, s))
            spec = CounterexampleSpec(a=unit_vec(rng, 3), b=unit_vec(rng, 4), s=s, t=t)
            model, sample = construct_counterexample(spec)
            report = find_unimodal_break(model, sample, spec)
            assert report.case is BreakCase.IVT_BREAK
            assert abs(report.fused_score_after - t / 2.0) < spec.tol
            assert report.delta_norm < report.eps_unimodal
            assert verify_theorem1(report, spec)

    def test_bisection_iteration_bound(self, rng):
        # unit-slope encoders: converges within ceil(log2(eps/tol)) + 2
        for _ in range(20):
            s = float(rng.uniform(1.0, 4.0))
            t = float(rng.uniform(0.2, s))
            spec = CounterexampleSpec(a=unit_vec(rng, 5), b=unit_vec(rng, 2),
                                      s=s, t=t, tol=1e-6)
            model, sample = construct_counterexample(spec)
            report = find_unimodal_break(model, sample, spec)
            bound = math.ceil(math.log2(report.eps_unimodal / spec.tol)) + 2
            assert report.bisection_iterations <= bound

    def test_video_side_mirror(self, rng):
        for _ in range(20):
            s = float(rng.uniform(0.5, 3.0))
            t = float(rng.uniform(0.2, 3.0))
            spec = CounterexampleSpec(a=unit_vec(rng, 3), b=unit_vec(rng, 3), s=s, t=t)
            model, sample = construct_counterexample(spec, modality="video")
            report = find_unimodal_break(model, sample, spec, modality="video")
            assert report.modality == "video"
            assert verify_theorem1(report, spec)

    def test_unbracketable_spec_raises(self):
        good = CounterexampleSpec(a=[1.0], b=[1.0], s=1.0, t=2.0)
        model, sample = construct_counterexample(good)
        # claim a larger s than the sample actually encodes: gap(0) >= 0
        lying = CounterexampleSpec(a=[1.0], b=[1.0], s=3.0, t=2.0, eps_unimodal=0.5)
        with pytest.raises(ConstructionError):
            find_unimodal_break(model, sample, lying)

    def test_threshold_default_matches_zero_crossing(self, rng):
        spec = CounterexampleSpec(a=rng.standard_normal(3) * 2, b=unit_vec(rng, 3),
                                  s=1.7, t=0.4)
        model, sample = construct_counterexample(spec)
        eps = default_eps_unimodal(spec, "audio")
        direction = spec.a / np.linalg.norm(spec.a)
        crossing = float(spec.a @ (sample.x_audio + eps * direction))
        assert crossing == pytest.approx(0.0, abs=1e-12)


class TestVerifier:
    def test_rejects_threshold_violation(self):
        spec = CounterexampleSpec(a=[1.0], b=[1.0], s=3.0, t=2.0)
        model, sample = construct_counterexample(spec)
        report = find_unimodal_break(model, sample, spec)
        report.delta_norm = report.eps_unimodal + 0.1
        assert not verify_theorem1(report, spec)

    def test_rejects_unflipped(self):
        spec = CounterexampleSpec(a=[1.0], b=[1.0], s=1.0, t=2.0)
        model, sample = construct_counterexample(spec)
        report = find_unimodal_break(model, sample, spec)
        report.label_flipped = False
        assert not verify_theorem1(report, spec)


class TestEmpiricalMode:
    def test_hits_are_below_joint_threshold(self):
        from mmrobust.harness import synthetic
        from mmrobust.models import TrainConfig, build_fusion_model

        cfg = synthetic.SyntheticConfig(
            n_classes=3, samples_per_class=20, d_audio=4, d_video=4,
            cluster_spread=0.2, shapes=("blob", "crescent", "ring"),
            class_separation=0.45, shape_radius=0.3,
            cross_modal_correlation=0.5, seed=21,
        )
        dataset = synthetic.generate_synthetic(cfg)
        train, test = synthetic.train_test_split(dataset, 0.7, seed=21)
        model = build_fusion_model(4, 4, 3, bottleneck_audio=3, bottleneck_video=3,
                                   hidden_audio=(10,), hidden_video=(10,),
                                   hidden_head=(10,), seed=22)
        trained, _ = models.train(
            model, train, TrainConfig(epochs=20, batch_size=16, learning_rate=0.05, seed=23)
        )
        hits = empirical_unimodal_break(trained, test, eps_max=0.8, tol=5e-3)
        for hit in hits:
            assert hit.flip_epsilon < hit.eps_star_joint
            assert 0 <= hit.sample_index < len(test)

    def test_joint_mask_rejected(self):
        from mmrobust.attacks import Mask

        spec = CounterexampleSpec(a=[1.0], b=[1.0], s=1.0, t=2.0)
        model, sample = construct_counterexample(spec)
        from mmrobust.models import Dataset

        with pytest.raises(DomainError):
            empirical_unimodal_break(model, Dataset([sample], 1, 1, 2), mask=Mask.BOTH)
