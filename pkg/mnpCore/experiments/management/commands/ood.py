from experiments import artifacts
from experiments.runner import OOD_SHIFT, ood_batch, ood_report

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = "AUROC de incertidumbre entre el test set (ID) y un conjunto OOD"
    name = "ood"
    needs_checkpoint = True

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--ood-source", choices=["shifted", "copy", "files"], default="shifted")
        parser.add_argument("--shift", type=float, default=OOD_SHIFT, help="offset along the first feature")
        parser.add_argument("--ood-paths", nargs="+", help="one already-normalised CSV per modality")

    def run(self, config, checkpoint, run_dir, options):
        model, train, test = self.load(config, checkpoint)
        ood = ood_batch(config, test, options["ood_source"], options["shift"], options.get("ood_paths"))
        report = ood_report(model, config, test, ood, options["ood_source"], train)
        artifacts.write_report(report, run_dir)
        self.done(f"AUROC (entropy) {report.auroc_entropy:.4f}", run_dir)
