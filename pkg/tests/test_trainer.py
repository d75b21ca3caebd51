import numpy as np
import pytest

import mixformer.trainer as trainer_mod
from mixformer.data import LabelRegression, TaskSpec
from mixformer.errors import NonFiniteLossError
from mixformer.mixup import FixedLambda, MixPlan, MixupConfig, mix_labels, mix_representations
from mixformer.model import EncodedBatch, ModelConfig, Parameters, encode, head_forward, init_params
from mixformer.numerics import cross_entropy_soft
from mixformer.synthetic import SyntheticSpec, generate, task_spec
from mixformer.trainer import TrainConfig, adam_update, evaluate, run_training, train_step

from conftest import text_dataset

NO_MIX = MixupConfig(enabled=False)


def scalar_params(value: float) -> Parameters:
    cfg = ModelConfig(vocab_size=5, d_model=2, n_heads=1, n_layers=1, d_ff=2, max_len=4, seed=0)
    return Parameters(cfg, {"w": np.array([[value]])})


def test_train_config_defaults_are_fine_tuning_recipe():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (3, 8, 2e-5)
    assert (cfg.beta1, cfg.beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)
    assert (cfg.weight_decay, cfg.grad_clip_norm) == (0.01, 1.0)
    mix = cfg.mixup
    assert mix.enabled and mix.schedule == "last_half"
    assert isinstance(mix.lambda_policy, FixedLambda) and mix.lambda_policy.value == 0.5


class TestAdamUpdate:
    def test_zero_gradients_no_decay_is_noop(self, tiny_params):
        before = {k: v.copy() for k, v in tiny_params.values.items()}
        grads = {k: np.zeros_like(v) for k, v in tiny_params.values.items()}
        adam_update(tiny_params, grads, 1, TrainConfig(weight_decay=0.0))
        for name, arr in tiny_params.values.items():
            np.testing.assert_array_equal(arr, before[name])

    def test_first_step_matches_hand_recurrence(self):
        # w=0, g=1, lr=0.1: m_hat = 1, v_hat = 1, step = lr / (1 + eps)
        params = scalar_params(0.0)
        cfg = TrainConfig(learning_rate=0.1, weight_decay=0.0, grad_clip_norm=None)
        adam_update(params, {"w": np.array([[1.0]])}, 1, cfg)
        beta1, beta2, eps = cfg.beta1, cfg.beta2, cfg.adam_eps
        m_hat = ((1 - beta1) * 1.0) / (1 - beta1)
        v_hat = ((1 - beta2) * 1.0) / (1 - beta2)
        expected = -cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        assert params.values["w"][0, 0] == pytest.approx(expected, abs=1e-15)
        assert params.values["w"][0, 0] == pytest.approx(-0.0999999, abs=1e-6)

    def test_global_norm_clip_scales_gradients(self):
        params = scalar_params(0.0)
        params.values["g2"] = np.array([6.0, 8.0])
        params.m["g2"] = np.zeros(2)
        params.v["g2"] = np.zeros(2)
        params.grads["g2"] = np.zeros(2)
        grads = {"w": np.array([[0.0]]), "g2": np.array([6.0, 8.0])}
        adam_update(params, grads, 1, TrainConfig(grad_clip_norm=1.0))
        np.testing.assert_allclose(grads["g2"], [0.6, 0.8])

    def test_decay_applies_to_matrices_only(self, tiny_params):
        grads = {k: np.zeros_like(v) for k, v in tiny_params.values.items()}
        before = {k: v.copy() for k, v in tiny_params.values.items()}
        cfg = TrainConfig(learning_rate=0.5, weight_decay=0.1)
        adam_update(tiny_params, grads, 1, cfg)
        for name, arr in tiny_params.values.items():
            if arr.ndim >= 2:
                np.testing.assert_allclose(arr, before[name] * (1 - 0.5 * 0.1))
            else:
                np.testing.assert_array_equal(arr, before[name])

    def test_step_count_validated(self, tiny_params):
        grads = {k: np.zeros_like(v) for k, v in tiny_params.values.items()}
        with pytest.raises(ValueError, match="step_count"):
            adam_update(tiny_params, grads, 0, TrainConfig())


class TestTrainStep:
    def test_disabled_matches_hand_composed_plain_step(self, tiny_params, tiny_batch):
        loss, grads = train_step(tiny_params, tiny_batch, False, NO_MIX)
        enc = encode(tiny_params, tiny_batch, train_mode=True)
        head = head_forward(tiny_params, enc.output)
        ce = cross_entropy_soft(head.output, tiny_batch.labels)
        assert loss == float(ce.output)
        (dlogits,) = ce.backward(1.0)
        dpooled, head_grads = head.backward(dlogits)
        expected = enc.backward(dpooled)
        expected.update(head_grads)
        assert set(grads) == set(expected)
        for name in grads:
            assert grads[name].tobytes() == expected[name].tobytes()

    def test_lambda_one_plan_loss_equals_plain_step(self, tiny_params, tiny_batch):
        plain_loss, _ = train_step(tiny_params, tiny_batch, False, NO_MIX)
        mixed_loss, _ = train_step(
            tiny_params, tiny_batch, True, MixupConfig(lambda_policy=FixedLambda(1.0)),
            plan=MixPlan(1.0, np.array([1, 0])),
        )
        assert mixed_loss == plain_loss

    def test_same_plan_applied_to_representations_and_labels(self, tiny_params, tiny_batch, monkeypatch):
        seen = {}

        def rec_mix(h, plan):
            seen["rep_plan"] = plan
            return mix_representations(h, plan)

        def rec_labels(y, plan):
            seen["label_plan"] = plan
            return mix_labels(y, plan)

        monkeypatch.setattr(trainer_mod, "mix_representations", rec_mix)
        monkeypatch.setattr(trainer_mod, "mix_labels", rec_labels)
        train_step(tiny_params, tiny_batch, True, MixupConfig(), mixup_rng=np.random.default_rng(0))
        assert seen["rep_plan"] is seen["label_plan"]

    def test_mix_gradients_reach_both_pair_members(self, tiny_params, tiny_batch):
        # identity perm vs swap perm must produce different gradients at lam != 1
        _, g_swap = train_step(
            tiny_params, tiny_batch, True, MixupConfig(),
            plan=MixPlan(0.5, np.array([1, 0])),
        )
        g_swap = {k: v.copy() for k, v in g_swap.items()}
        _, g_id = train_step(
            tiny_params, tiny_batch, True, MixupConfig(),
            plan=MixPlan(0.5, np.array([0, 1])),
        )
        assert any(not np.array_equal(g_swap[k], g_id[k]) for k in g_swap)

    def test_nonfinite_abort_names_first_bad_tensor(self, tiny_params, tiny_batch):
        tiny_params.values["embed.tok"][4, :] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(NonFiniteLossError, match="encoder.pooled"):
            train_step(tiny_params, tiny_batch, False, NO_MIX)

    def test_regression_path_uses_mse(self, tiny_batch):
        cfg = ModelConfig(vocab_size=11, d_model=8, n_heads=2, n_layers=1, d_ff=16,
                          max_len=4, head="regression", dropout_rate=0.0, seed=3)
        params = init_params(cfg)
        batch = EncodedBatch(tiny_batch.token_ids, tiny_batch.attention_mask,
                             np.array([[0.2], [1.4]]))
        loss, grads = train_step(params, batch, True, MixupConfig(),
                                 plan=MixPlan(0.5, np.array([1, 0])))
        assert np.isfinite(loss)
        assert grads["head.w"].shape == (8, 1)


def quick_task_data(n_train=360, n_dev=120, noise=0.0, seed=5):
    spec = SyntheticSpec(n_train=n_train, n_dev=n_dev, noise=noise, seed=seed)
    train_rows, dev_rows = generate(spec)
    task = task_spec()
    train_ds, vocab = text_dataset(train_rows, task)
    dev_ds, _ = text_dataset(dev_rows, task, split="dev", vocab=vocab)
    return train_ds, dev_ds, vocab


def quick_model_config(vocab, seed=0, dropout=0.0):
    return ModelConfig(vocab_size=vocab.size, d_model=16, n_heads=2, n_layers=1,
                       d_ff=32, max_len=16, dropout_rate=dropout, seed=seed)


def quick_train_config(seed=0, epochs=3, mixup=NO_MIX):
    return TrainConfig(epochs=epochs, batch_size=8, learning_rate=2e-3, seed=seed, mixup=mixup)


class TestRunTraining:
    def test_last_half_schedule_flags(self):
        train_ds, dev_ds, vocab = quick_task_data(n_train=48, n_dev=16)
        _, reports = run_training(
            quick_model_config(vocab),
            quick_train_config(mixup=MixupConfig(schedule="last_half")),
            train_ds, dev_ds,
        )
        assert [r.mixup_active for r in reports] == [False, True, True]
        assert [r.lambda_used for r in reports] == [1.0, 0.5, 0.5]

    def test_deterministic_given_seed(self):
        train_ds, dev_ds, vocab = quick_task_data(n_train=48, n_dev=16)
        mcfg, tcfg = quick_model_config(vocab, dropout=0.1), quick_train_config(mixup=MixupConfig())
        p1, r1 = run_training(mcfg, tcfg, train_ds, dev_ds)
        p2, r2 = run_training(mcfg, tcfg, train_ds, dev_ds)
        for name in p1.values:
            assert p1.values[name].tobytes() == p2.values[name].tobytes()
        for a, b in zip(r1, r2):
            assert (a.epoch, a.mixup_active, a.lambda_used, a.mean_train_loss) == (
                b.epoch, b.mixup_active, b.lambda_used, b.mean_train_loss
            )
            assert a.dev_metric == b.dev_metric

    def test_learns_separable_task(self):
        train_ds, dev_ds, vocab = quick_task_data()
        _, reports = run_training(
            quick_model_config(vocab), quick_train_config(), train_ds, dev_ds
        )
        assert reports[-1].dev_metric.value >= 0.95

    def test_loss_decreases_in_most_transitions_both_arms(self):
        train_ds, dev_ds, vocab = quick_task_data()
        for mix in (NO_MIX, MixupConfig()):
            _, reports = run_training(
                quick_model_config(vocab), quick_train_config(epochs=4, mixup=mix),
                train_ds, dev_ds,
            )
            losses = [r.mean_train_loss for r in reports]
            drops = sum(1 for a, b in zip(losses, losses[1:]) if b < a)
            assert drops >= 2, f"losses {losses}"

    def test_compute_parity_same_step_count(self, monkeypatch):
        train_ds, dev_ds, vocab = quick_task_data(n_train=50, n_dev=16)
        calls = []
        real = trainer_mod.train_step

        def counting(*args, **kwargs):
            calls.append(1)
            return real(*args, **kwargs)

        monkeypatch.setattr(trainer_mod, "train_step", counting)
        run_training(quick_model_config(vocab), quick_train_config(mixup=NO_MIX), train_ds, dev_ds)
        baseline_steps = len(calls)
        calls.clear()
        run_training(quick_model_config(vocab), quick_train_config(mixup=MixupConfig()), train_ds, dev_ds)
        assert len(calls) == baseline_steps

    def test_disabled_equals_fixed_lambda_one_bitwise(self):
        train_ds, dev_ds, vocab = quick_task_data(n_train=64, n_dev=16)
        mcfg = quick_model_config(vocab, dropout=0.1)
        p_off, r_off = run_training(mcfg, quick_train_config(mixup=NO_MIX), train_ds, dev_ds)
        lam1 = MixupConfig(enabled=True, lambda_policy=FixedLambda(1.0), schedule="always")
        p_one, r_one = run_training(mcfg, quick_train_config(mixup=lam1), train_ds, dev_ds)
        for name in p_off.values:
            assert p_off.values[name].tobytes() == p_one.values[name].tobytes()
        assert [r.mean_train_loss for r in r_off] == [r.mean_train_loss for r in r_one]

    def test_failure_carries_epoch_and_step_context(self, monkeypatch):
        train_ds, dev_ds, vocab = quick_task_data(n_train=24, n_dev=16)

        def boom(*args, **kwargs):
            raise NonFiniteLossError("non-finite values in tensor 'loss'")

        monkeypatch.setattr(trainer_mod, "train_step", boom)
        with pytest.raises(NonFiniteLossError, match="epoch 1, step 1"):
            run_training(quick_model_config(vocab), quick_train_config(), train_ds, dev_ds)

    def test_task_mismatch_rejected(self):
        train_ds, dev_ds, vocab = quick_task_data(n_train=24, n_dev=16)
        other = TaskSpec("other", "single", LabelRegression(0, 1), "spearman", 1, 0)
        dev_ds2 = type(dev_ds)(other, dev_ds.examples, "dev", dev_ds.max_len)
        with pytest.raises(ValueError, match="share a task"):
            run_training(quick_model_config(vocab), quick_train_config(), train_ds, dev_ds2)


class TestEvaluate:
    def test_untrained_balanced_accuracy_near_half(self):
        train_ds, dev_ds, vocab = quick_task_data(n_train=24, n_dev=240)
        values = []
        for seed in range(5):
            params = init_params(quick_model_config(vocab, seed=seed))
            values.append(evaluate(params, dev_ds, dev_ds.task).value)
        # 5 seeds x 240 balanced examples: 3 sigma of a fair coin mean
        sigma = (0.25 / (5 * 240)) ** 0.5
        assert abs(np.mean(values) - 0.5) < max(3 * sigma, 0.05)

    def test_repeatable(self, tiny_params):
        train_ds, dev_ds, vocab = quick_task_data(n_train=24, n_dev=32)
        params = init_params(quick_model_config(vocab))
        assert evaluate(params, dev_ds, dev_ds.task) == evaluate(params, dev_ds, dev_ds.task)

    def test_metric_dispatch(self):
        reg_task = TaskSpec("reg", "single", LabelRegression(0.0, 4.0), "spearman", 1, 0)
        rows = [(float(i % 5), f"word{i % 7} filler") for i in range(20)]
        reg_ds, vocab = text_dataset(rows, reg_task, split="dev")
        cfg = ModelConfig(vocab_size=vocab.size, d_model=8, n_heads=2, n_layers=1,
                          d_ff=16, max_len=16, head="regression", seed=0)
        assert evaluate(init_params(cfg), reg_ds, reg_task).metric_name == "spearman"

        from mixformer.data import LabelClasses
        mcc_task = TaskSpec("cola-like", "single", LabelClasses(2), "matthews", 1, 0)
        rows = [(i % 2, f"word{i % 7} filler") for i in range(20)]
        mcc_ds, vocab2 = text_dataset(rows, mcc_task, split="dev")
        cfg2 = ModelConfig(vocab_size=vocab2.size, d_model=8, n_heads=2, n_layers=1,
                           d_ff=16, max_len=16, seed=0)
        assert evaluate(init_params(cfg2), mcc_ds, mcc_task).metric_name == "matthews"

    def test_empty_dev_rejected(self, tiny_params):
        train_ds, dev_ds, vocab = quick_task_data(n_train=24, n_dev=16)
        empty = type(dev_ds)(dev_ds.task, [], "dev", dev_ds.max_len)
        params = init_params(quick_model_config(vocab))
        with pytest.raises(ValueError, match="empty"):
            evaluate(params, empty, dev_ds.task)
