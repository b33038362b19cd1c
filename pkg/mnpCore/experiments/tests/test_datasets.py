import math
import os
import tempfile

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from neural_processes.data_processing import format_value, read_csv, read_json, save_to_csv, save_to_json
from neural_processes.datasets import (
    LOWER_MOON,
    NOISE_LEVELS,
    UPPER_MOON,
    MultimodalBatch,
    NoiseSpec,
    inject_noise,
    load_feature_dataset,
    load_feature_matrices,
    make_moons,
    make_multimodal_views,
    mesh_grid,
    noise_subsets,
    one_hot,
    padded_bounds,
    save_feature_dataset,
    shift_features,
    view_maps,
)
from neural_processes.exceptions import ContractError, IngestionError


class BatchTests(SimpleTestCase):
    def test_row_counts_must_agree(self):
        with self.assertRaises(ContractError):
            MultimodalBatch([np.zeros((3, 2)), np.zeros((4, 2))])
        with self.assertRaises(ContractError):
            MultimodalBatch([np.zeros((3, 2))], one_hot([0, 1], 2))
        with self.assertRaises(ContractError):
            MultimodalBatch([np.zeros((1, 2))], np.array([[0.5, 0.5]]))

    def test_batches_cover_every_row_once(self):
        batch = MultimodalBatch([np.arange(10.0).reshape(5, 2)], one_hot([0, 1, 0, 1, 1], 2))
        chunks = list(batch.batches(2, np.random.default_rng(0)))
        self.assertEqual([c.n_samples for c in chunks], [2, 2, 1])
        rows = np.concatenate([c.features[0] for c in chunks])
        assert_array_equal(np.sort(rows[:, 0]), batch.features[0][:, 0])


class SyntheticDataTests(SimpleTestCase):
    def test_moons_are_deterministic_and_oriented(self):
        a, b = make_moons(200, seed=3), make_moons(200, seed=3)
        assert_array_equal(a.features[0], b.features[0])
        self.assertEqual(a.dims, [2])
        self.assertEqual(a.n_classes, 2)
        clean = make_moons(100, noise_std=0.0)
        upper = clean.features[0][clean.classes == UPPER_MOON]
        lower = clean.features[0][clean.classes == LOWER_MOON]
        self.assertTrue(np.all(upper[:, 1] >= -1e-12))
        self.assertTrue(np.all(lower[:, 1] <= 0.5 + 1e-12))
        assert_allclose(np.hypot(upper[:, 0], upper[:, 1]), 1.0)

    def test_mesh_grid_is_row_major(self):
        grid = mesh_grid(3, 2, ((0.0, 2.0), (0.0, 1.0)))
        assert_allclose(grid.features[0], [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]])
        self.assertIsNone(grid.labels)
        with self.assertRaises(ContractError):
            mesh_grid(1, 5, ((0, 1), (0, 1)))

    def test_padded_bounds(self):
        batch = MultimodalBatch([np.array([[0.0, 1.0], [2.0, -1.0]])])
        self.assertEqual(padded_bounds(batch), ((-1.0, 3.0), (-2.0, 2.0)))

    def test_views_keep_labels_and_share_maps(self):
        base = make_moons(50, seed=0)
        maps = view_maps(3, 2, seed=7)
        views = make_multimodal_views(base, 3, seed=1, noise_std=0.0, maps=maps)
        self.assertEqual(views.n_modalities, 3)
        assert_array_equal(views.labels, base.labels)
        assert_allclose(views.features[2], base.features[0] @ maps[2])
        # scaled rotations preserve distance ratios
        d_base = np.linalg.norm(base.features[0][0] - base.features[0][1])
        d_view = np.linalg.norm(views.features[0][0] - views.features[0][1])
        d_view_2 = np.linalg.norm(views.features[0][0] - views.features[0][2])
        d_base_2 = np.linalg.norm(base.features[0][0] - base.features[0][2])
        self.assertAlmostEqual(d_view / d_base, d_view_2 / d_base_2)
        with self.assertRaises(ContractError):
            make_multimodal_views(base, 1)
        with self.assertRaises(ContractError):
            make_multimodal_views(base, 2, maps=maps)


class NoiseProtocolTests(SimpleTestCase):
    def test_levels(self):
        self.assertEqual(len(NOISE_LEVELS), 10)
        self.assertAlmostEqual(NOISE_LEVELS[0], 0.01)
        self.assertAlmostEqual(NOISE_LEVELS[-1], 10.0)
        self.assertAlmostEqual(NoiseSpec(9, (0,)).std, 10.0)
        with self.assertRaises(ContractError):
            NoiseSpec(10)

    def test_subsets(self):
        self.assertEqual(noise_subsets(2), [(0,), (1,)])
        self.assertEqual(len(noise_subsets(5)), math.comb(5, 3))
        self.assertEqual(noise_subsets(3)[0], (0, 1))

    def test_inject_noise_touches_only_named_modalities(self):
        batch = MultimodalBatch([np.zeros((20, 2)), np.zeros((20, 3))], one_hot(np.zeros(20), 2))
        noisy = inject_noise(batch, NoiseSpec(5, (1,)), seed=0)
        assert_array_equal(noisy.features[0], 0.0)
        self.assertGreater(np.abs(noisy.features[1]).sum(), 0.0)
        assert_array_equal(batch.features[1], 0.0)
        again = inject_noise(batch, NoiseSpec(5, (1,)), seed=0)
        assert_array_equal(noisy.features[1], again.features[1])
        with self.assertRaises(ContractError):
            inject_noise(batch, NoiseSpec(0, (2,)))

    def test_shift(self):
        batch = MultimodalBatch([np.zeros((2, 2))])
        assert_array_equal(shift_features(batch, 10.0).features[0][:, 0], [10.0, 10.0])
        assert_array_equal(batch.features[0], 0.0)


class FeatureFileTests(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()
        rng = np.random.default_rng(0)
        labels = one_hot(np.arange(40) % 2, 2)
        self.batch = MultimodalBatch([rng.normal(size=(40, 3)) * 5 + 2, rng.normal(size=(40, 2))], labels)
        self.paths, self.labels_path = save_feature_dataset(self.batch, self.directory)

    def test_load_splits_and_standardises(self):
        train, test = load_feature_dataset(self.paths, self.labels_path, split_ratio=0.75, seed=0)
        self.assertEqual((train.n_samples, test.n_samples), (30, 10))
        self.assertEqual(train.dims, [3, 2])
        assert_allclose(train.features[0].mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(train.features[0].std(axis=0), 1.0)
        self.assertEqual(int(test.classes.sum()), 5)

    def test_row_mismatch(self):
        short = os.path.join(self.directory, "short.csv")
        np.savetxt(short, np.zeros((5, 2)), delimiter=",")
        with self.assertRaises(IngestionError):
            load_feature_dataset([self.paths[0], short], self.labels_path)
        with self.assertRaises(IngestionError):
            load_feature_matrices([self.paths[0], short])

    def test_bad_files(self):
        with self.assertRaises(IngestionError):
            load_feature_dataset([os.path.join(self.directory, "missing.csv")], self.labels_path)
        bad_labels = os.path.join(self.directory, "bad_labels.csv")
        np.savetxt(bad_labels, np.full((40, 1), 0.5), delimiter=",")
        with self.assertRaises(IngestionError):
            load_feature_dataset(self.paths, bad_labels)
        with self.assertRaises(IngestionError):
            load_feature_dataset(self.paths, self.labels_path, n_classes=1)

    def test_unlabeled_matrices_are_used_as_is(self):
        batch = load_feature_matrices(self.paths)
        self.assertIsNone(batch.labels)
        assert_allclose(batch.features[0], self.batch.features[0])


class PersistenceTests(SimpleTestCase):
    def setUp(self):
        self.directory = tempfile.mkdtemp()

    def test_json_history_appends(self):
        save_to_json([{"run": 1}], "history.json", self.directory)
        save_to_json({"run": 2}, "history.json", self.directory)
        self.assertEqual(read_json("history.json", self.directory), [{"run": 1}, {"run": 2}])
        save_to_json([{"run": 3}], "history.json", self.directory, overwrite=True)
        self.assertEqual(read_json("history.json", self.directory), [{"run": 3}])

    def test_csv_cells_have_fixed_format(self):
        rows = [{"epoch": 1, "loss": np.float64(0.1), "ok": True}]
        save_to_csv(rows, "rows.csv", self.directory)
        with open(os.path.join(self.directory, "rows.csv"), encoding="utf-8") as file:
            self.assertEqual(file.read(), "epoch,loss,ok\n1,0.1,true\n")
        self.assertEqual(read_csv("rows.csv", self.directory), [{"epoch": "1", "loss": "0.1", "ok": "true"}])
        self.assertEqual(format_value(np.bool_(False)), "false")
