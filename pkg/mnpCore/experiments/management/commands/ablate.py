from experiments.runner import ABLATION_AXES, ablate
from neural_processes.data_processing import save_to_csv

from ._base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Entrenar una variante por valor del eje de ablacion y comparar sus metricas"
    name = "ablate"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
        parser.add_argument("--sizes", type=int, nargs="+", help="N^m values for the context-size axis")
        parser.add_argument("--jobs", type=int, default=1, help="worker processes")

    def run(self, config, checkpoint, run_dir, options):
        rows = ablate(config, options["axis"], max(options["jobs"], 1), options.get("sizes"))
        save_to_csv(rows, "ablation.csv", run_dir)
        best = max(rows, key=lambda r: r["accuracy"])
        self.done(f"{len(rows)} variants on '{options['axis']}', best accuracy {best['accuracy']:.4f} "
                  f"({best['variant']})", run_dir)
