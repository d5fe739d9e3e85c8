import numpy as np
import pytest

from attrdelta.errors import NoValidPairs
from attrdelta.prompts import ContrastivePromptSet, PromptTuple, expand_prompt_set
from attrdelta.training import (
    DeltaTrainConfig,
    compose_target,
    delta_loss_and_grad,
    make_anchor,
    sample_alphas,
    train_attribute_delta,
)


class TestAlphaSampler:
    def test_exclusion_zone_empty(self, rng):
        draws = sample_alphas(np.random.default_rng(0), 50_000)
        assert np.sum((draws > -0.1) & (draws < 0.1)) == 0

    def test_range_respected(self):
        draws = sample_alphas(np.random.default_rng(1), 10_000)
        assert draws.min() >= -5.0 and draws.max() <= 5.0

    def test_roughly_balanced_halves(self):
        draws = sample_alphas(np.random.default_rng(2), 100_000)
        frac_neg = np.mean(draws < 0)
        assert abs(frac_neg - 0.5) < 0.01

    def test_deterministic(self):
        a = sample_alphas(np.random.default_rng(7), 100)
        b = sample_alphas(np.random.default_rng(7), 100)
        assert np.array_equal(a, b)

    def test_custom_range(self):
        draws = sample_alphas(np.random.default_rng(3), 1000, (-2.0, 2.0), (-0.5, 0.5))
        assert draws.min() >= -2.0 and draws.max() <= 2.0
        assert np.sum(np.abs(draws) < 0.5) == 0


class TestComposeTarget:
    def test_linear_composition(self, rng):
        a, p, m = (rng.standard_normal(16) for _ in range(3))
        t = compose_target(a, p, m, 2.5)
        assert np.allclose(t, a + 2.5 * (p - m))

    def test_alpha_zero_is_neutral(self, rng):
        a, p, m = (rng.standard_normal(16) for _ in range(3))
        assert np.array_equal(compose_target(a, p, m, 0.0), a)


class TestAnchors:
    def test_anchor_deterministic(self, backbone, enc_agg, balanced_pset):
        tr = expand_prompt_set(balanced_pset)[0]
        a = make_anchor(backbone, enc_agg, tr, seed=9, steps=5)
        b = make_anchor(backbone, enc_agg, tr, seed=9, steps=5)
        assert a.t == b.t
        assert np.array_equal(a.x_t, b.x_t)

    def test_anchor_timestep_in_range(self, backbone, enc_agg, balanced_pset):
        tr = expand_prompt_set(balanced_pset)[0]
        for seed in range(10):
            anchor = make_anchor(backbone, enc_agg, tr, seed=seed, steps=5)
            assert 1 <= anchor.t <= backbone.schedule.num_train_steps

    def test_truncation_mode_uses_trajectory_state(self, mix_backbone, enc_agg, balanced_pset):
        tr = expand_prompt_set(balanced_pset)[0]
        anchor = make_anchor(
            mix_backbone, enc_agg, tr, seed=4, mode="trajectory-truncation", steps=8
        )
        from attrdelta.diffusion import sample_times

        assert anchor.t in sample_times(mix_backbone.schedule.num_train_steps, 8)

    def test_base_predictions_cached(self, backbone, enc_agg, balanced_pset):
        tr = expand_prompt_set(balanced_pset)[0]
        anchor = make_anchor(backbone, enc_agg, tr, seed=1, steps=5)
        first = anchor.base_predictions(backbone)
        second = anchor.base_predictions(backbone)
        assert first[0] is second[0]


class TestLossAndGrad:
    def test_zero_delta_zero_alpha_reproduces_neutral(self, backbone, enc_agg, balanced_pset):
        tr = expand_prompt_set(balanced_pset)[0]
        anchor = make_anchor(backbone, enc_agg, tr, seed=2, steps=5)
        loss, grad = delta_loss_and_grad(backbone, anchor, np.zeros(16), 0.0)
        assert loss == 0.0
        assert np.array_equal(grad, np.zeros(16))

    def test_gradient_matches_finite_differences(self, backbone, enc_agg, balanced_pset, rng):
        tr = expand_prompt_set(balanced_pset)[0]
        anchor = make_anchor(backbone, enc_agg, tr, seed=3, steps=5)
        delta = rng.standard_normal(16)
        alpha = 1.8
        loss, grad = delta_loss_and_grad(backbone, anchor, delta, alpha)
        h = 1e-5
        for j in (0, 7, 15):
            dp, dm = delta.copy(), delta.copy()
            dp[j] += h
            dm[j] -= h
            lp, _ = delta_loss_and_grad(backbone, anchor, dp, alpha)
            lm, _ = delta_loss_and_grad(backbone, anchor, dm, alpha)
            assert grad[j] == pytest.approx((lp - lm) / (2 * h), rel=1e-6, abs=1e-9)

    def test_loss_scales_with_schedule_weight(self, enc_agg, balanced_pset):
        from attrdelta.diffusion import NoiseSchedule, ToyLinearBackbone, cosine_vp_schedule

        base = cosine_vp_schedule(1000)
        weighted = NoiseSchedule(
            num_train_steps=1000,
            alpha=base.alpha,
            sigma=base.sigma,
            loss_weight=np.full(1001, 3.0),
        )
        bb1 = ToyLinearBackbone(backbone_id="toy-w1")
        bb2 = ToyLinearBackbone(backbone_id="toy-w3", schedule=weighted)
        tr = expand_prompt_set(balanced_pset)[0]
        anchor1 = make_anchor(bb1, enc_agg, tr, seed=5, steps=5)
        anchor2 = make_anchor(bb2, enc_agg, tr, seed=5, steps=5)
        d = np.ones(16)
        l1, g1 = delta_loss_and_grad(bb1, anchor1, d, 2.0)
        l2, g2 = delta_loss_and_grad(bb2, anchor2, d, 2.0)
        assert l2 == pytest.approx(3.0 * l1)
        assert np.allclose(g2, 3.0 * g1)


class TestTrainer:
    def test_deterministic_given_config(self, backbone, enc_agg, balanced_pset):
        cfg = DeltaTrainConfig(steps=20, lr_decay="cosine", seed=3, anchor_seed_pool=2, anchor_steps=5)
        a = train_attribute_delta(backbone, enc_agg, balanced_pset, cfg)
        b = train_attribute_delta(backbone, enc_agg, balanced_pset, cfg)
        assert np.array_equal(a.vector, b.vector)

    def test_identical_poles_keep_delta_exactly_zero(self, backbone, enc_agg):
        pset = ContrastivePromptSet(
            "null",
            (PromptTuple("calm [person]", "calm [person]", "calm [person]"),),
            ("a photo of a",),
        )
        cfg = DeltaTrainConfig(steps=15, anchor_steps=5, anchor_seed_pool=2, seed=0)
        delta = train_attribute_delta(backbone, enc_agg, pset, cfg)
        assert np.all(delta.vector == 0.0)

    def test_no_usable_pairs_raises(self, backbone):
        from attrdelta.encoders import ToyTextEncoder

        tiny = ToyTextEncoder(encoder_id="tiny3", max_tokens=3, embedding_dim=16)
        pset = ContrastivePromptSet(
            "age", (PromptTuple("young [person]", "[person]", "old [person]"),), ("",)
        )
        with pytest.raises(NoValidPairs):
            train_attribute_delta(backbone, tiny, pset, DeltaTrainConfig(steps=1))

    def test_metadata_and_digest(self, backbone, enc_agg, balanced_pset):
        cfg = DeltaTrainConfig(steps=5, anchor_steps=5, anchor_seed_pool=1)
        delta = train_attribute_delta(backbone, enc_agg, balanced_pset, cfg)
        assert delta.method == "learned"
        assert delta.config_digest == cfg.digest()
        assert delta.training_nouns == ("man", "person", "woman")

    def test_log_callback_sees_every_step(self, backbone, enc_agg, balanced_pset):
        entries = []
        cfg = DeltaTrainConfig(steps=7, anchor_steps=5, anchor_seed_pool=1)
        train_attribute_delta(backbone, enc_agg, balanced_pset, cfg, log_fn=entries.append)
        assert [e.step for e in entries] == list(range(1, 8))
        assert all(np.isfinite(e.loss) for e in entries)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DeltaTrainConfig(steps=0)
        with pytest.raises(ValueError):
            DeltaTrainConfig(alpha_exclusion=(-6.0, 0.1))
        with pytest.raises(ValueError):
            DeltaTrainConfig(anchor_mode="bogus")
        with pytest.raises(ValueError):
            DeltaTrainConfig(lr_decay="linear")
