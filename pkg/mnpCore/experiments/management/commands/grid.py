import os

from experiments.plotting import heatmap_svg
from experiments.runner import grid
from neural_processes.data_processing import save_to_csv
from neural_processes.datasets import UPPER_MOON

from ._base import ExperimentCommand


def probe(value):
    x, y = (float(v) for v in value.split(","))
    return x, y


class Command(ExperimentCommand):
    help = "Probabilidades predictivas sobre una grilla 2-D y pesos de atencion de puntos de prueba"
    name = "grid"
    needs_checkpoint = True

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--nx", type=int, default=100)
        parser.add_argument("--ny", type=int, default=100)
        parser.add_argument("--probe", type=probe, action="append", metavar="X,Y",
                            help="probe point for attention_probe.csv (repeatable; default: a training point "
                                 "and a far-field point)")
        parser.add_argument("--svg", action="store_true", help="also render grid.svg")

    def run(self, config, checkpoint, run_dir, options):
        model, train, _ = self.load(config, checkpoint)
        probes = None
        if options.get("probe"):
            probes = [(f"probe_{i}", point) for i, point in enumerate(options["probe"])]
        result = grid(model, config, train, options["nx"], options["ny"], probes)
        save_to_csv(result.grid_rows, "grid.csv", run_dir)
        save_to_csv(result.probe_rows, "attention_probe.csv", run_dir,
                    fieldnames=["probe", "x", "y", "context_index", "context_class", "weight"])
        if options.get("svg"):
            heatmap_svg(os.path.join(run_dir, "grid.svg"), result.mesh.features[0], result.probs[:, UPPER_MOON],
                        options["nx"], options["ny"], points=train.features[0], classes=train.classes)
        self.done(f"{len(result.grid_rows)} grid points, {len(result.probe_rows)} attention weights", run_dir)
