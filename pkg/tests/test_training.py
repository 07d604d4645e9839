"""Tests for sampling, augmentation, the schedule, the optimizer and the training step."""
import numpy as np
import pytest

from adareg.config.run_config import AugConfig
from adareg.model.topology import ReIDModel
from adareg.training.augment import augment, augment_batch, erase_rectangle, hflip, pad_crop, random_erase
from adareg.training.optimizer import SGD
from adareg.training.sampler import PKConfig, pk_sample
from adareg.training.schedule import LRSchedule, lr_at
from adareg.training.trainer import Trainer, train_step, weight_statistics
from adareg.utils.exceptions import NonFiniteLossError, ValidationError


def _batch(dataset, config, seed=0):
    indices = pk_sample(dataset.identity_groups('train'), PKConfig(config.train.P, config.train.K),
                        np.random.default_rng(seed))
    return dataset.images[indices][:, None, :, :], dataset.identities[indices]


def _model(config, dataset, seed=0):
    return ReIDModel.build(config.model, config.reg, dataset.num_classes(), np.random.default_rng(seed))


class TestSampler:
    def test_batch_geometry(self):
        groups = {1: [0, 1, 2], 2: [3, 4], 3: [5, 6, 7]}
        batch = pk_sample(groups, PKConfig(2, 2), np.random.default_rng(0))
        assert len(batch) == 4
        owners = [next(pid for pid, members in groups.items() if i in members) for i in batch]
        assert owners[0] == owners[1] and owners[2] == owners[3] and owners[0] != owners[2]

    def test_small_identity_sampled_with_replacement(self):
        batch = pk_sample({1: [0], 2: [1, 2]}, PKConfig(2, 2), np.random.default_rng(0))
        assert sorted(batch.tolist()).count(0) == 2

    def test_same_seed_same_sequence(self):
        groups = {i: list(range(4 * i, 4 * i + 4)) for i in range(1, 7)}
        first_rng, second_rng = np.random.default_rng(9), np.random.default_rng(9)
        first = [pk_sample(groups, PKConfig(3, 2), first_rng) for _ in range(5)]
        second = [pk_sample(groups, PKConfig(3, 2), second_rng) for _ in range(5)]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValidationError):
            PKConfig(1, 4)
        with pytest.raises(ValidationError):
            pk_sample({1: [0, 1]}, PKConfig(2, 2), np.random.default_rng(0))


class TestAugment:
    def test_identity_pipeline(self, rng):
        image = rng.uniform(size=(8, 6))
        cfg = AugConfig(flip_prob=0.0, pad=0, erase_prob=0.0)
        np.testing.assert_array_equal(augment(image, cfg, rng), image)

    def test_flip_is_an_involution(self, rng):
        image = rng.uniform(size=(4, 5))
        np.testing.assert_array_equal(hflip(hflip(image)), image)
        np.testing.assert_array_equal(hflip(image)[:, 0], image[:, -1])

    def test_pad_crop_keeps_size(self, rng):
        image = np.ones((6, 4))
        out = pad_crop(image, 2, rng)
        assert out.shape == (6, 4)
        assert set(np.unique(out)) <= {0.0, 1.0}

    def test_erase_overwrites_exact_area(self):
        cfg = AugConfig(flip_prob=0.0, pad=0, erase_prob=1.0, erase_area=(0.25, 0.25), erase_aspect=(1.0, 1.0))
        for seed in range(10):
            image = np.zeros((8, 8))
            out = random_erase(image, cfg, np.random.default_rng(seed))
            assert np.count_nonzero(out != image) == 16
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_degenerate_erase_is_skipped(self):
        assert erase_rectangle(2, 2, (0.01, 0.01), (1.0, 1.0), np.random.default_rng(0)) is None

    def test_oversized_erase_is_clipped_to_image(self):
        cfg = AugConfig(flip_prob=0.0, pad=0, erase_prob=1.0, erase_area=(0.39, 0.39), erase_aspect=(0.3, 0.3))
        for seed in range(20):
            assert erase_rectangle(32, 16, cfg.erase_area, cfg.erase_aspect, np.random.default_rng(seed))[1:] == (0, 8, 16)
            image = np.zeros((32, 16))
            out = random_erase(image, cfg, np.random.default_rng(seed))
            assert np.count_nonzero(out != image) == 8 * 16

    def test_batch_streams_are_per_image(self, rng):
        images = rng.uniform(size=(3, 8, 6))
        cfg = AugConfig()
        full = augment_batch(images, cfg, seed=5, iteration=2)
        np.testing.assert_array_equal(augment_batch(images[:1], cfg, seed=5, iteration=2)[0], full[0])
        np.testing.assert_array_equal(full, augment_batch(images, cfg, seed=5, iteration=2))


class TestSchedule:
    def test_warmup_and_decay(self):
        s = LRSchedule(0.01, warmup_iters=1000, warmup_start_factor=0.1, milestones=(1500, 1800))
        assert lr_at(0, s) == pytest.approx(0.001)
        assert lr_at(500, s) == pytest.approx(0.0055)
        assert lr_at(1000, s) == 0.01
        assert lr_at(999, s) == pytest.approx(0.01, rel=1e-3)
        assert lr_at(1500, s) == pytest.approx(0.001)
        assert lr_at(1799, s) == lr_at(1500, s)
        assert lr_at(1800, s) == pytest.approx(0.0001)

    def test_rejects_bad_schedules(self):
        with pytest.raises(ValidationError):
            LRSchedule(0.01, warmup_iters=100, milestones=(50,))
        with pytest.raises(ValidationError):
            LRSchedule(0.01, milestones=(10, 10))
        with pytest.raises(ValidationError):
            lr_at(-1, LRSchedule(0.01))


class TestTrainStep:
    def test_zero_learning_rate_keeps_parameters(self, smoke_config, smoke_dataset):
        model = _model(smoke_config, smoke_dataset)
        before = {name: t.data.copy() for name, t in model.registry.items()}
        images, labels = _batch(smoke_dataset, smoke_config)
        optimizer = SGD(model.registry, smoke_config.train.momentum)
        for _ in range(3):
            result = train_step(model, images, labels, smoke_config, optimizer, 0.0)
        for name, tensor in model.registry.items():
            np.testing.assert_array_equal(tensor.data, before[name])
        assert np.isfinite(result.total)
        assert set(result.grad_norms) == {'weights', 'thetas'}

    def test_step_reports_every_term(self, smoke_config, smoke_dataset):
        model = _model(smoke_config, smoke_dataset)
        images, labels = _batch(smoke_dataset, smoke_config)
        result = train_step(model, images, labels, smoke_config, SGD(model.registry, 0.9), 0.01)
        assert result.ce_total > 0 and result.triplet_total >= 0 and result.penalty > 0
        assert result.total == pytest.approx(result.ce_total + result.triplet_total + result.penalty)

    def test_masked_task_loss_thetas_never_increase(self, smoke_config, smoke_dataset):
        config = smoke_config.with_overrides({'loss.mask_task_losses': True, 'train.momentum': 0.0})
        model = _model(config, smoke_dataset)
        optimizer = SGD(model.registry, 0.0)
        rng = np.random.default_rng(1)
        previous = np.array([f.theta.item() for f in model.factors])
        for it in range(100):
            images, labels = _batch(smoke_dataset, config, seed=int(rng.integers(1 << 30)))
            result = train_step(model, images, labels, config, optimizer, 0.05, it)
            assert result.ce_total > 0
            thetas = np.array([f.theta.item() for f in model.factors])
            assert np.all(thetas <= previous)
            previous = thetas
        assert previous.min() < 0.0

    def test_bias_before_batchnorm_gets_no_task_gradient(self, smoke_config, smoke_dataset):
        config = smoke_config.with_overrides({'reg.mode': 'off'})
        model = _model(config, smoke_dataset)
        images, labels = _batch(smoke_dataset, config)
        optimizer = SGD(model.registry, 0.0)
        train_step(model, images, labels, config, optimizer, 0.0)
        for name in model.registry:
            if name.endswith('.conv.bias'):
                assert not np.any(optimizer.velocity[name])

    def test_zero_bias_theta_stays_put(self, smoke_config, smoke_dataset):
        model = _model(smoke_config, smoke_dataset)
        optimizer = SGD(model.registry, smoke_config.train.momentum)
        factor = next(f for f in model.factors if f.param_id == 'backbone.block1.conv.bias')
        theta = factor.theta.item()
        for it in range(100):
            images, labels = _batch(smoke_dataset, smoke_config, seed=it)
            train_step(model, images, labels, smoke_config, optimizer, 0.01, it)
        assert factor.theta.item() == theta
        assert not np.any(model.registry['backbone.block1.conv.bias'].data)

    def test_non_finite_loss_aborts_without_update(self, smoke_config, smoke_dataset):
        model = _model(smoke_config, smoke_dataset)
        model.registry['global.head.classifier.kernel'].data[0, 0] = np.nan
        before = model.registry['backbone.block1.conv.kernel'].data.copy()
        images, labels = _batch(smoke_dataset, smoke_config)
        with pytest.raises(NonFiniteLossError) as info:
            train_step(model, images, labels, smoke_config, SGD(model.registry), 0.01, iteration=3)
        assert info.value.iteration == 3
        assert 'global_logits' in info.value.terms
        np.testing.assert_array_equal(model.registry['backbone.block1.conv.kernel'].data, before)

    def test_non_finite_loss_keeps_running_statistics(self, smoke_config, smoke_dataset):
        model = _model(smoke_config, smoke_dataset)
        model.registry['global.head.classifier.kernel'].data[0, 0] = np.inf
        before = {prefix: (bn.running_mean.copy(), bn.running_var.copy())
                  for prefix, bn in model.batchnorms().items()}
        images, labels = _batch(smoke_dataset, smoke_config)
        with pytest.raises(NonFiniteLossError):
            train_step(model, images, labels, smoke_config, SGD(model.registry), 0.01)
        for prefix, bn in model.batchnorms().items():
            np.testing.assert_array_equal(bn.running_mean, before[prefix][0])
            np.testing.assert_array_equal(bn.running_var, before[prefix][1])

    def test_mask_needs_a_regularizer(self, smoke_config, smoke_dataset):
        config = smoke_config.with_overrides({'loss.mask_task_losses': True, 'reg.mode': 'off'})
        model = _model(config, smoke_dataset)
        images, labels = _batch(smoke_dataset, config)
        with pytest.raises(ValidationError):
            train_step(model, images, labels, config, SGD(model.registry), 0.01)


class TestTrainer:
    def test_snapshot_count(self, smoke_config, smoke_dataset):
        config = smoke_config.with_overrides({'train.snapshot_every': 5})
        for iterations, expected in ((10, 3), (7, 2), (0, 1)):
            result = Trainer(config, smoke_dataset).run(iterations)
            assert len(result.snapshots) == expected == iterations // 5 + 1
            assert len(result.loss_log) == iterations
            assert len(result.diagnostics) == iterations

    def test_constant_mode_trajectory_is_flat(self, smoke_config, smoke_dataset):
        config = smoke_config.with_overrides({'reg.mode': 'constant'})
        result = Trainer(config, smoke_dataset).run(6)
        lambdas = {v.lam for s in result.snapshots for v in s.values}
        assert lambdas == {config.reg.constant_lambda}

    def test_rejects_mismatched_image_size(self, smoke_config, smoke_dataset):
        config = smoke_config.with_overrides({'model.input_height': 16})
        with pytest.raises(ValidationError):
            Trainer(config, smoke_dataset)

    def test_weight_statistics(self, smoke_config, smoke_dataset):
        model = _model(smoke_config, smoke_dataset)
        weight_sq, min_theta, min_lambda, max_lambda = weight_statistics(model, smoke_config)
        assert weight_sq > 0
        assert min_theta == 0.0
        assert min_lambda == max_lambda == pytest.approx(smoke_config.reg.amplitude / 2)
