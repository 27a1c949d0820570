import math

import numpy as np
import pytest
from scipy.special import rel_entr

from app.core.errors import CheckpointError, InvalidArgumentError
from app.services.data import Session
from app.services.forward import Categorical, NoiseSchedule, build_perm_transition, build_token_transition
from app.services.nn.checkpoint import load_checkpoint, save_checkpoint
from app.services.nn.denoiser import (
    DenoiseExample,
    denoise_distribution,
    denoiser_backward,
    denoiser_forward,
    encode_context,
    example_loss_and_grads,
    init_denoiser_params,
    kl_loss,
    model_gradients,
    warm_start_encoder,
)
from app.services.nn.encoder import ENCODER_KEYS, Vocabulary
from app.services.nn.evaluator import (
    binary_cross_entropy,
    evaluator_loss,
    evaluator_score,
    init_evaluator_params,
    utility_from_scores,
)
from app.services.nn.optim import SGD, Adam
from app.services.permcore import ItemSequence, SequenceSpec

H = 1e-5


def numeric_grads(loss_fn, arrays):
    out = {}
    for key, arr in arrays.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + H
            plus = loss_fn()
            arr[idx] = orig - H
            minus = loss_fn()
            arr[idx] = orig
            g[idx] = (plus - minus) / (2 * H)
        out[key] = g
    return out


def assert_grads_match(analytic, numeric):
    for key in numeric:
        np.testing.assert_allclose(analytic[key], numeric[key], rtol=1e-4, atol=1e-8, err_msg=key)


@pytest.fixture
def perm_tm():
    return build_perm_transition(SequenceSpec(l_s=3, l_o=3), NoiseSchedule(0.3, 3))


@pytest.fixture
def token_tm():
    return build_token_transition(SequenceSpec(l_s=3, l_o=3), NoiseSchedule(0.3, 3))


class TestEncoder:
    def test_shape(self, denoiser, seq3):
        C = encode_context(denoiser, seq3, [105, 106])
        assert C.shape == (3, 8)

    def test_empty_history_half_is_zero(self, denoiser, seq3):
        C = encode_context(denoiser, seq3, [])
        np.testing.assert_array_equal(C[:, 4:], 0.0)

    def test_permutation_equivariance(self, denoiser, seq3):
        C = encode_context(denoiser, seq3, [105])
        moved = seq3.with_positions([2, 0, 1])
        np.testing.assert_allclose(encode_context(denoiser, moved, [105]), C[[2, 0, 1]], atol=1e-12)

    def test_zero_values_leave_item_embedding(self, denoiser, seq3):
        denoiser.arrays["self_v"][:] = 0.0
        C = encode_context(denoiser, seq3, [])
        rows = denoiser.vocab.rows(list(seq3.items))
        np.testing.assert_allclose(C[:, :4], denoiser.arrays["item_embeddings"][rows], atol=1e-12)

    def test_rows_stay_distinct_for_distinct_items(self, denoiser, seq3):
        C = encode_context(denoiser, seq3, [105])
        assert not np.allclose(C[0], C[1])

    def test_unknown_item_uses_shared_row(self, denoiser):
        a = encode_context(denoiser, ItemSequence.from_items([999, 101]), [])
        b = encode_context(denoiser, ItemSequence.from_items([998, 101]), [])
        np.testing.assert_array_equal(a, b)


class TestWarmStart:
    def test_copies_encoder_arrays(self, denoiser, evaluator):
        warm_start_encoder(denoiser, evaluator.arrays, evaluator.vocab)
        for key in ENCODER_KEYS:
            np.testing.assert_array_equal(denoiser.arrays[key], evaluator.arrays[key])
            assert denoiser.arrays[key] is not evaluator.arrays[key]
        denoiser.arrays["self_q"][:] = 0.0
        assert np.any(evaluator.arrays["self_q"] != 0.0)

    def test_vocabulary_mismatch(self, denoiser):
        other = init_evaluator_params(Vocabulary.build([1, 2]), 4, 5, np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            warm_start_encoder(denoiser, other.arrays, other.vocab)

    def test_width_mismatch(self, denoiser, vocab):
        wide = init_evaluator_params(vocab, 6, 5, np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            warm_start_encoder(denoiser, wide.arrays, wide.vocab)


class TestDenoiseDistribution:
    def test_perm_support_and_positivity(self, denoiser, seq3):
        dist = denoise_distribution(denoiser, seq3, (1, 1, 1), None, [105], "perm")
        assert len(dist.support) == 4
        assert dist.support[0] == seq3
        assert dist.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(dist.probs > 0)

    def test_token_per_position(self, denoiser):
        seq = ItemSequence.from_items([101, 102], [101, 102, 103, 104])
        dists = denoise_distribution(denoiser, seq, (1, 0), None, [], "token")
        assert len(dists) == 2
        for d in dists:
            assert d.support == (0, 1, 2, 3)
            assert d.probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_equal_scores_give_uniform(self, denoiser, seq3):
        denoiser.arrays["condition_q"][:] = 0.0
        denoiser.arrays["condition_embeddings"][:] = 0.0
        dist = denoise_distribution(denoiser, seq3, (1, 1, 1), None, [], "perm")
        np.testing.assert_allclose(dist.probs, 0.25, atol=1e-12)

    def test_empty_support(self, denoiser, seq3):
        with pytest.raises(InvalidArgumentError):
            denoise_distribution(denoiser, seq3, (1, 1, 1), [], [], "perm")

    def test_bad_condition(self, denoiser, seq3):
        with pytest.raises(InvalidArgumentError):
            denoise_distribution(denoiser, seq3, (1, 2, 1), None, [], "perm")


class TestKL:
    def test_zero_for_equal(self):
        p = Categorical(("a", "b"), [0.3, 0.7])
        assert kl_loss(p, p) == 0.0

    def test_point_mass_vs_uniform(self):
        q = Categorical(("a", "b"), [1.0, 0.0])
        p = Categorical(("a", "b"), [0.5, 0.5])
        assert kl_loss(q, p) == pytest.approx(math.log(2), abs=1e-12)

    def test_posterior_against_uniform(self):
        q = Categorical(tuple("abcd"), [49 / 52, 1 / 52, 1 / 52, 1 / 52])
        p = Categorical(tuple("abcd"), [0.25] * 4)
        expected = 49 / 52 * math.log(49 / 52 * 4) + 3 / 52 * math.log(4 / 52)
        assert kl_loss(q, p) == pytest.approx(expected, abs=1e-12)

    def test_support_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            kl_loss(Categorical(("a", "b"), [0.5, 0.5]), Categorical(("b", "a"), [0.5, 0.5]))


class TestDenoiserGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_perm_matches_finite_differences(self, vocab, perm_tm, seed):
        p = init_denoiser_params(vocab, dim=4, tau=0.5, rng=np.random.default_rng(seed), init_scale=0.5)
        R0 = ItemSequence.from_items([101, 102, 103])
        ex = DenoiseExample(Rt=R0.with_positions([1, 0, 2]), R0=R0, t=2, c=(1, 0, 1), history=(105, 106))
        _, grads = example_loss_and_grads(p, ex, perm_tm)
        assert_grads_match(grads, numeric_grads(lambda: example_loss_and_grads(p, ex, perm_tm)[0], p.arrays))

    @pytest.mark.parametrize("seed", range(3))
    def test_token_matches_finite_differences(self, vocab, token_tm, seed):
        p = init_denoiser_params(vocab, dim=4, tau=0.5, rng=np.random.default_rng(seed), init_scale=0.5)
        R0 = ItemSequence.from_items([101, 102, 103])
        ex = DenoiseExample(Rt=R0.with_positions([0, 0, 2]), R0=R0, t=3, c=(0, 1, 1), history=(104,))
        _, grads = example_loss_and_grads(p, ex, token_tm)
        assert_grads_match(grads, numeric_grads(lambda: example_loss_and_grads(p, ex, token_tm)[0], p.arrays))

    def test_zero_when_target_equals_model(self, denoiser, seq3):
        fwd = denoiser_forward(denoiser, seq3, (1, 1, 1), [105], "perm")
        grads = denoiser_backward(denoiser, fwd, fwd.probs - fwd.probs)
        assert math.sqrt(sum(float((g ** 2).sum()) for g in grads.values())) < 1e-8

    def test_duplicated_batch_same_mean(self, denoiser, perm_tm):
        R0 = ItemSequence.from_items([101, 102, 103])
        batch = [
            DenoiseExample(R0.with_positions([1, 0, 2]), R0, 2, (1, 0, 1), (105,)),
            DenoiseExample(R0, R0, 3, (0, 0, 1), ()),
        ]
        loss1, g1, _ = model_gradients(denoiser, batch, perm_tm)
        loss2, g2, _ = model_gradients(denoiser, batch + batch, perm_tm)
        assert loss1 == pytest.approx(loss2, abs=1e-12)
        for key in g1:
            np.testing.assert_allclose(g1[key], g2[key], atol=1e-12)

    def test_t1_loss_is_cross_entropy(self, denoiser, perm_tm):
        R0 = ItemSequence.from_items([101, 102, 103])
        R1 = R0.with_positions([0, 2, 1])
        ex = DenoiseExample(R1, R0, 1, (1, 1, 1), ())
        loss, _ = example_loss_and_grads(denoiser, ex, perm_tm)
        dist = denoise_distribution(denoiser, R1, (1, 1, 1), None, (), "perm")
        assert loss == pytest.approx(-math.log(dist.prob_of(R0)), abs=1e-12)

    def test_skips_inconsistent_examples(self, vocab):
        tm = build_perm_transition(SequenceSpec(l_s=4, l_o=4), NoiseSchedule(0.3, 2))
        p = init_denoiser_params(vocab, dim=4, tau=0.5, rng=np.random.default_rng(0))
        R0 = ItemSequence.from_items([101, 102, 103, 104])
        far = R0.with_positions([3, 2, 1, 0])
        loss, _, skipped = model_gradients(p, [DenoiseExample(far, R0, 1, (1, 1, 1, 1), ())], tm)
        assert skipped == 1
        assert math.isnan(loss)


class TestEvaluator:
    def test_utility_example(self):
        assert utility_from_scores([0.9, 0.5, 0.2]) == pytest.approx(0.9 + 0.5 / math.log2(3) + 0.1, abs=1e-12)
        assert utility_from_scores([0.9, 0.5, 0.2]) == pytest.approx(1.3155, abs=1e-4)

    def test_utility_zero(self):
        assert utility_from_scores([0.0] * 5) == 0.0

    def test_rearrangement(self):
        assert utility_from_scores([0.9, 0.1, 0.5]) >= utility_from_scores([0.1, 0.9, 0.5])

    def test_half_probabilities_give_log2(self, evaluator, session3):
        evaluator.arrays["mlp_w2"][:] = 0.0
        evaluator.arrays["mlp_b2"][:] = 0.0
        probs, _ = evaluator_score(evaluator, session3.displayed, session3.history)
        np.testing.assert_allclose(probs, 0.5)
        loss, _ = evaluator_loss(evaluator, session3)
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_perfect_predictions(self):
        assert binary_cross_entropy([1.0, 0.0, 1.0], [1, 0, 1]) == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, vocab, session3, seed):
        p = init_evaluator_params(vocab, dim=4, hidden=5, rng=np.random.default_rng(seed), init_scale=0.5)
        _, grads = evaluator_loss(p, session3)
        assert_grads_match(grads, numeric_grads(lambda: evaluator_loss(p, session3)[0], p.arrays))

    def test_missing_labels(self, evaluator, seq3):
        class Partial:
            session_id = 3
            displayed = seq3
            history = ()
            feedback = (1, 0)

        with pytest.raises(InvalidArgumentError):
            evaluator_loss(evaluator, Partial())


class TestOptimizers:
    def test_sgd_step(self):
        arrays = {"w": np.array([1.0, 2.0])}
        SGD(0.1).step(arrays, {"w": np.array([1.0, -1.0])})
        np.testing.assert_allclose(arrays["w"], [0.9, 2.1])

    def test_adam_first_step_is_lr_sized(self):
        arrays = {"w": np.array([0.0, 0.0])}
        Adam(0.01).step(arrays, {"w": np.array([3.0, -0.5])})
        np.testing.assert_allclose(arrays["w"], [-0.01, 0.01], atol=1e-8)

    def test_negative_lr(self):
        with pytest.raises(InvalidArgumentError):
            SGD(-1.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, denoiser, evaluator, seq3):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, denoiser, evaluator, "perm", {"l_s": 3, "l_o": 3}, {"dim": 4}, seed=7, step=12)
        den, ev, doc = load_checkpoint(path)
        assert doc.op == "perm" and doc.step == 12 and doc.seed == 7
        assert den.tau == denoiser.tau
        for key, arr in denoiser.arrays.items():
            np.testing.assert_allclose(den.arrays[key], arr.astype(np.float32), rtol=0, atol=0)
        for key, arr in evaluator.arrays.items():
            np.testing.assert_allclose(ev.arrays[key], arr.astype(np.float32), rtol=0, atol=0)
        assert den.vocab.item_ids == denoiser.vocab.item_ids

    def test_rejects_other_version(self, tmp_path, denoiser, evaluator):
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, denoiser, evaluator, "perm", {}, {}, seed=1, step=0)
        path.write_text(path.read_text().replace('"format_version":1', '"format_version":2'))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.json")
