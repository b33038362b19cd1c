from experiments.runner import noise_sweep
from neural_processes.data_processing import save_to_csv

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Accuracy del checkpoint bajo ruido gaussiano en la mitad de las modalidades (10 niveles)"
    name = "noise_sweep"
    needs_checkpoint = True

    def run(self, config, checkpoint, run_dir, options):
        model, train, test = self.load(config, checkpoint)
        rows = noise_sweep(model, config, test, train)
        save_to_csv(rows, "noise_sweep.csv", run_dir)
        average = sum(r["accuracy"] for r in rows) / len(rows)
        self.done(f"average accuracy over {len(rows)} noise levels: {average:.4f}", run_dir)
