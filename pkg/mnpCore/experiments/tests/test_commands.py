import io
import json
import os
import shutil
import tempfile

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from numpy.testing import assert_allclose

from experiments import artifacts
from experiments.runner import grid, load_data, restore_model
from neural_processes.data_processing import read_csv, read_json
from neural_processes.datasets import LOWER_MOON, UPPER_MOON
from neural_processes.exceptions import IngestionError
from neural_processes.memory import ContextMemory

TINY = {
    "n_train": 40, "n_test": 20, "memory_size": 10, "latent_dim": 8, "n_samples": 2,
    "epochs": 3, "batch_size": 20, "eval_every": 2, "extractor_width": 16,
}


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.root = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, self.root, ignore_errors=True)
        override = self.settings(MNP_ARTIFACT_ROOT=self.root)
        override.enable()
        self.addCleanup(override.disable)

    def call(self, command, *args, **options):
        out = io.StringIO()
        call_command(command, *args, stdout=out, **options)
        return out.getvalue()

    def run_dir(self, name):
        return os.path.join(self.root, name)

    def train(self, name="train", **changes):
        self.call("train", run_dir=self.run_dir(name), **{**TINY, **changes})
        return os.path.join(self.run_dir(name), "checkpoint.bin")


class TrainCommandTests(CommandTestCase):
    def test_train_writes_artifacts(self):
        checkpoint = self.train()
        run_dir = self.run_dir("train")
        for name in ("config.json", "checkpoint.bin", "metrics.csv", "summary.json"):
            self.assertTrue(os.path.exists(os.path.join(run_dir, name)), name)
        rows = read_csv("metrics.csv", run_dir)
        self.assertEqual([r["epoch"] for r in rows], ["1", "2", "3"])
        self.assertEqual(rows[0]["test_accuracy"], "")
        self.assertNotEqual(rows[1]["test_accuracy"], "")
        echo = read_json("config.json", run_dir)
        self.assertEqual(echo["config"]["n_train"], 40)
        self.assertEqual(echo["config"]["seed"], 0)
        summary = read_json("summary.json", run_dir)
        self.assertEqual(summary["model"]["latent_dim"], 8)
        self.assertEqual(summary["model"]["attention"], {"similarity": "rbf", "normalisation": "sparsemax",
                                                         "kernel_form": "literal"})
        self.assertIn("test_accuracy", summary)
        history = read_json("runs_historical.json", self.root)
        self.assertEqual(history[0]["command"], "train")
        self.assertNotIn("model", history[0])
        self.assertTrue(os.path.getsize(checkpoint) > 0)

    def test_same_seed_gives_identical_metrics(self):
        self.train("a")
        self.train("b")
        with open(os.path.join(self.run_dir("a"), "metrics.csv"), "rb") as a, \
                open(os.path.join(self.run_dir("b"), "metrics.csv"), "rb") as b:
            self.assertEqual(a.read(), b.read())

    def test_rbf_loss_flag_changes_loss_columns(self):
        self.train("with")
        self.train("without", rbf_loss=False)
        with_rbf = read_csv("metrics.csv", self.run_dir("with"))
        without = read_csv("metrics.csv", self.run_dir("without"))
        self.assertEqual(float(without[0]["loss_cl"]), 0.0)
        self.assertNotEqual(with_rbf[0]["loss_rbf"], without[0]["loss_rbf"])

    def test_config_file_and_default_run_directory(self):
        path = os.path.join(self.root, "config.json")
        with open(path, "w", encoding="utf-8") as file:
            json.dump({**TINY, "epochs": 1}, file)
        out = self.call("train", config=path)
        created = [d for d in os.listdir(self.root) if d.startswith("train-")]
        self.assertEqual(len(created), 1)
        self.assertIn(created[0], out)

    def test_invalid_config_exits_with_usage_code(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("train", memory_size=11, run_dir=self.run_dir("bad"))
        self.assertEqual(ctx.exception.returncode, 1)
        with self.assertRaises(CommandError) as ctx:
            self.call("train", "--batch-size", "-4", run_dir=self.run_dir("bad"))
        self.assertEqual(ctx.exception.returncode, 1)

    def test_unknown_flag_is_a_usage_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("train", "--no-such-flag")
        self.assertEqual(ctx.exception.returncode, 1)


class CheckpointCommandTests(CommandTestCase):
    def setUp(self):
        super().setUp()
        self.checkpoint = self.train()

    def restore(self, config):
        checkpoint = artifacts.load_checkpoint(self.checkpoint)
        train, test = load_data(config)
        return restore_model(checkpoint, config), train, test

    def test_eval(self):
        self.call("eval", checkpoint=self.checkpoint, run_dir=self.run_dir("eval"))
        rows = read_csv("evaluation.csv", self.run_dir("eval"))
        self.assertEqual([r["split"] for r in rows], ["train", "test"])
        self.assertEqual(rows[1]["n"], "20")
        bins = read_csv("reliability.csv", self.run_dir("eval"))
        self.assertEqual(len(bins), 15)
        self.assertEqual(sum(int(b["count"]) for b in bins), 20)

    def test_eval_reproduces_training_metrics(self):
        self.call("eval", checkpoint=self.checkpoint, run_dir=self.run_dir("eval"))
        test_row = read_csv("evaluation.csv", self.run_dir("eval"))[1]
        summary = read_json("summary.json", self.run_dir("train"))
        self.assertAlmostEqual(float(test_row["accuracy"]), summary["test_accuracy"])

    def test_grid(self):
        self.call("grid", checkpoint=self.checkpoint, run_dir=self.run_dir("grid"), nx=7, ny=5, svg=True)
        rows = read_csv("grid.csv", self.run_dir("grid"))
        self.assertEqual(len(rows), 35)
        self.assertEqual(list(rows[0]), ["x", "y", "p_class1", "p_class2", "uncertainty"])
        probes = read_csv("attention_probe.csv", self.run_dir("grid"))
        self.assertEqual(len(probes), 2 * 10)
        train_point_weights = [float(r["weight"]) for r in probes if r["probe"] == "train_point"]
        self.assertAlmostEqual(sum(train_point_weights), 1.0)
        with open(os.path.join(self.run_dir("grid"), "grid.svg"), encoding="utf-8") as file:
            self.assertIn("<svg", file.read())

    def test_first_class_column_is_the_upper_moon(self):
        config = artifacts.load_checkpoint(self.checkpoint).config
        model, train, _ = self.restore(config)
        result = grid(model, config, train, 4, 3, probes=[])
        assert_allclose([row["p_class1"] for row in result.grid_rows], result.probs[:, UPPER_MOON])
        assert_allclose([row["p_class2"] for row in result.grid_rows], result.probs[:, LOWER_MOON])

    def test_checkpoint_missing_a_parameter_is_a_data_error(self):
        with np.load(self.checkpoint) as data:
            arrays = {key: data[key] for key in data.files}
        dropped = sorted(key for key in arrays if key.startswith("param."))[0]
        del arrays[dropped]
        path = os.path.join(self.root, "partial.bin")
        with open(path, "wb") as file:
            np.savez(file, **arrays)
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", checkpoint=path, run_dir=self.run_dir("eval"))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_restore_rejects_memory_of_other_dimensions(self):
        checkpoint = artifacts.load_checkpoint(self.checkpoint)
        checkpoint.memory = ContextMemory([block[:, :, :1] for block in checkpoint.memory.blocks])
        with self.assertRaises(IngestionError):
            restore_model(checkpoint)
        checkpoint = artifacts.load_checkpoint(self.checkpoint)
        checkpoint.parameters = {k: v[..., :1] for k, v in checkpoint.parameters.items()}
        with self.assertRaises(IngestionError):
            restore_model(checkpoint)

    def test_grid_attention_point_flag(self):
        self.call("grid", "--probe", "0,0", "--probe", "30,30", checkpoint=self.checkpoint,
                  run_dir=self.run_dir("grid"), nx=2, ny=2)
        probes = read_csv("attention_probe.csv", self.run_dir("grid"))
        self.assertEqual(sorted({r["probe"] for r in probes}), ["probe_0", "probe_1"])

    def test_ood_report_and_schema(self):
        self.call("ood", checkpoint=self.checkpoint, run_dir=self.run_dir("ood"))
        report = read_json("report.json", self.run_dir("ood"))
        schema = read_json("report.schema.json", self.run_dir("ood"))
        self.assertEqual(set(report), set(schema["properties"]))
        self.assertIsNotNone(report["auroc_mc_variance"])
        self.assertEqual((report["n_id"], report["n_ood"]), (20, 20))
        self.assertEqual(report["ood_source"], "shifted")

    def test_noise_sweep_needs_two_modalities(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("noise_sweep", checkpoint=self.checkpoint, run_dir=self.run_dir("sweep"))
        self.assertEqual(ctx.exception.returncode, 1)

    def test_missing_checkpoint_is_a_data_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", checkpoint=os.path.join(self.root, "nope.bin"))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_corrupt_checkpoint_is_a_data_error(self):
        path = os.path.join(self.root, "corrupt.bin")
        with open(path, "wb") as file:
            file.write(b"not a checkpoint")
        with self.assertRaises(CommandError) as ctx:
            self.call("ood", checkpoint=path)
        self.assertEqual(ctx.exception.returncode, 2)


class MultimodalCommandTests(CommandTestCase):
    def test_noise_sweep_on_views(self):
        checkpoint = self.train(dataset="views", n_views=2)
        self.call("noise_sweep", checkpoint=checkpoint, run_dir=self.run_dir("sweep"))
        rows = read_csv("noise_sweep.csv", self.run_dir("sweep"))
        self.assertEqual(len(rows), 10)
        self.assertEqual({r["n_combinations"] for r in rows}, {"2"})
        self.assertAlmostEqual(float(rows[0]["std"]), 0.01)
        self.assertAlmostEqual(float(rows[-1]["std"]), 10.0)

    def test_grid_rejects_multimodal_input(self):
        checkpoint = self.train(dataset="views", n_views=2)
        with self.assertRaises(CommandError) as ctx:
            self.call("grid", checkpoint=checkpoint, run_dir=self.run_dir("grid"), nx=3, ny=3)
        self.assertEqual(ctx.exception.returncode, 1)


class AblateCommandTests(CommandTestCase):
    def test_memory_axis(self):
        self.call("ablate", axis="memory", run_dir=self.run_dir("ablate"), **{**TINY, "epochs": 1})
        rows = read_csv("ablation.csv", self.run_dir("ablate"))
        self.assertEqual([r["variant"] for r in rows], ["random", "fifo", "ce", "mse"])
        self.assertEqual(len({r["base_config_hash"] for r in rows}), 1)
        self.assertEqual(len({r["config_hash"] for r in rows}), 4)

    def test_unknown_axis(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("ablate", "--axis", "optimizer")
        self.assertEqual(ctx.exception.returncode, 1)
