from dataclasses import asdict

from experiments.runner import evaluate
from neural_processes.data_processing import save_to_csv

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Evaluar un checkpoint: accuracy, ECE, NLL y tabla de confiabilidad"
    name = "eval"
    needs_checkpoint = True

    def run(self, config, checkpoint, run_dir, options):
        model, train, test = self.load(config, checkpoint)
        rows = []
        for split, batch in (("train", train), ("test", test)):
            result = evaluate(model, config, batch, train)
            rows.append({"split": split, "n": batch.n_samples, **result.as_row()})
            if split == "test":
                bins = [asdict(b) for b in result.bins]
        save_to_csv(rows, "evaluation.csv", run_dir)
        save_to_csv(bins, "reliability.csv", run_dir)
        test_row = rows[-1]
        self.done(f"test accuracy {test_row['accuracy']:.4f}, ECE {test_row['ece']:.4f}, "
                  f"NLL {test_row['nll']:.4f}", run_dir)
