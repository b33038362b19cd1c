import logging
import os
import sys

from django.core.management.base import BaseCommand, CommandError

from experiments import artifacts
from experiments.config import ExperimentConfig, build_config, cli_options, load_config_file
from experiments.runner import load_data, restore_model
from neural_processes.exceptions import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    GraphError,
    IngestionError,
    NumericError,
    ProtocolError,
)

logger = logging.getLogger("experiments.commands")

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 1, 2, 3

# exit code per library error
RETURN_CODES = (
    (IngestionError, DATA_ERROR),
    (DimensionError, DATA_ERROR),
    (NumericError, NUMERIC_ERROR),
    (DomainError, NUMERIC_ERROR),
    (ConfigError, USAGE_ERROR),
    (ProtocolError, USAGE_ERROR),
    (ContractError, USAGE_ERROR),
    (GraphError, USAGE_ERROR),
)

# config fields a checkpoint command may override without retraining
EVALUATION_FIELDS = ("n_samples", "eval_batch_size", "ece_bins", "uncertainty")


class ExperimentCommand(BaseCommand):
    """
    Shared plumbing for the experiment commands.

    Subclasses implement ``run(config, checkpoint, run_dir, options)``. Library errors become a
    CommandError whose return code is 1 (usage), 2 (data) or 3 (numeric).
    """

    name = None
    needs_checkpoint = False
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # argument errors raise CommandError (exit 1) instead of argparse's exit 2
        parser.called_from_command_line = False
        return parser

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as e:
            self.stderr.write(f"CommandError: {e}")
            sys.exit(e.returncode)

    def add_arguments(self, parser):
        parser.add_argument("--run-dir", help="output directory (default: <MNP_ARTIFACT_ROOT>/<command>-<hash>)")
        if self.needs_checkpoint:
            parser.add_argument("--checkpoint", required=True, help="checkpoint.bin written by 'train'")
            fields = EVALUATION_FIELDS
        else:
            parser.add_argument("--config", help="JSON file with ExperimentConfig fields")
            fields = None
        for flag, kwargs in cli_options(fields):
            parser.add_argument(flag, **kwargs)

    def overrides(self, options, fields=None):
        fields = fields or ExperimentConfig.model_fields
        return {name: options.get(name) for name in fields if options.get(name) is not None}

    def resolve(self, options):
        """(config, checkpoint or None) for this invocation."""
        if self.needs_checkpoint:
            checkpoint = artifacts.load_checkpoint(options["checkpoint"])
            changes = self.overrides(options, EVALUATION_FIELDS)
            config = checkpoint.config.replace(**changes) if changes else checkpoint.config
            return config, checkpoint
        base = load_config_file(options["config"]) if options.get("config") else {}
        return build_config(base, self.overrides(options)), None

    def handle(self, *args, **options):
        try:
            config, checkpoint = self.resolve(options)
            run_dir = artifacts.run_directory(self.name, config, options.get("run_dir"))
            artifacts.write_config(config, run_dir)
            self.run(config, checkpoint, run_dir, options)
        except CommandError:
            raise
        except tuple(error for error, _ in RETURN_CODES) as e:
            code = next(code for error, code in RETURN_CODES if isinstance(e, error))
            logger.error(f"{self.name} failed: {e}")
            self.stdout.write(self.style.ERROR(f"{type(e).__name__}: {e}"))
            raise CommandError(str(e), returncode=code) from e

    def load(self, config, checkpoint):
        """Regenerate the data of ``config`` and rebuild the checkpointed model."""
        train, test = load_data(config)
        return restore_model(checkpoint, config), train, test

    def run(self, config, checkpoint, run_dir, options):
        raise NotImplementedError

    def done(self, message, run_dir):
        self.stdout.write(self.style.SUCCESS(f"{message} ({os.path.abspath(run_dir)})"))
