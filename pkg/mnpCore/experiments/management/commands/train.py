import os

from experiments import artifacts
from experiments.runner import load_data, train_model
from neural_processes.data_processing import save_to_csv, save_to_json

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Entrenar un MNP y guardar checkpoint, config y metricas por epoca"
    name = "train"

    def run(self, config, checkpoint, run_dir, options):
        train, test = load_data(config)
        result = train_model(config, train, test)
        artifacts.save_checkpoint(os.path.join(run_dir, artifacts.CHECKPOINT_NAME), result.model, config)
        save_to_csv(result.rows, "metrics.csv", run_dir, fieldnames=list(result.rows[-1].keys()))
        summary = result.evaluation.as_row("test_")
        save_to_json({**summary, "model": result.model.hyperparameters()}, "summary.json", run_dir, overwrite=True)
        artifacts.record_run(self.name, config, run_dir, summary)
        self.done(f"test accuracy {summary['test_accuracy']:.4f}, ECE {summary['test_ece']:.4f}", run_dir)
