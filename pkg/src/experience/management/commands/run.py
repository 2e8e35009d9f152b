from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from experience.cli import EXIT_DIVERGENCE, EXIT_VIOLATION, config_error, parse_list, resolve_config
from experience.config import ExperimentKind, load_config
from experience.errors import ConfigError
from experience.models import ExperimentRun
from experience.runners import SeedStatus, run_experiment

_LEDGER_STATUS = {
    SeedStatus.PASSED: ExperimentRun.RunStatus.PASSED,
    SeedStatus.VIOLATION: ExperimentRun.RunStatus.VIOLATION,
    SeedStatus.DIVERGED: ExperimentRun.RunStatus.DIVERGED,
}


class Command(BaseCommand):
    help = "Run every seed of an experiment config and write traces, curves and run.json"

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help="config path or preset name")
        parser.add_argument('--out', default=None, help="output directory")
        parser.add_argument('--seeds', default=None, help="comma-separated seeds")
        parser.add_argument('--workers', type=int, default=settings.VER_WORKERS)
        parser.add_argument('--tolerance', type=float, default=settings.VER_TOLERANCE)

    def handle(self, *args, **options):
        try:
            cfg = load_config(resolve_config(options['config']))
            seeds = parse_list(options['seeds'], int) if options['seeds'] else None
            cfg = cfg.with_overrides(seeds=seeds, output_dir=options['out'])
        except ConfigError as err:
            raise config_error(err) from err
        out_dir = cfg.output_dir or settings.VER_OUTPUT_DIR / cfg.name

        ledger = {}
        if cfg.kind != ExperimentKind.LINEAR:
            for seed in cfg.seeds:
                ledger[seed] = ExperimentRun.objects.create(
                    kind=cfg.kind.value,
                    preset=cfg.name,
                    flavor=cfg.agent.flavor.value,
                    replay_strategy=cfg.replay.strategy.value,
                    seed=seed,
                    trace_path=str(out_dir / f'trace_seed{seed}.csv'),
                )

        outcome = run_experiment(cfg, out_dir, options['workers'], options['tolerance'])

        for result in outcome.seeds:
            run = ledger[result.seed]
            run.status = _LEDGER_STATUS[result.status]
            run.record_count = result.records
            run.violation_count = result.violating_records + result.priority_mismatches
            run.finished_at = timezone.now()
            run.save()
            self.stdout.write(
                f"seed {result.seed}: {result.records} records, {result.violating_records} violating, "
                f"{result.episodes} episodes, {result.status.value}")
        for row in outcome.linear:
            self.stdout.write(
                f"n={row['n']} {row['strategy']}: mean {row['mean_to_optimal']} replays to optimal "
                f"(reference {row['reference']}), {row['failures']} failures")

        if outcome.diverged:
            raise CommandError(f"training diverged; see {out_dir}", returncode=EXIT_DIVERGENCE)
        if outcome.violated:
            raise CommandError(f"bound violations logged; see {out_dir}", returncode=EXIT_VIOLATION)
        self.stdout.write(self.style.SUCCESS(f"{cfg.name}: results in {out_dir}"))
