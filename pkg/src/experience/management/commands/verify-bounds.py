import json

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from experience.cli import EXIT_VIOLATION, config_error
from experience.errors import TraceFormatError
from experience.runners import merge_reports, verify_bounds
from experience.traces import INVARIANTS


class Command(BaseCommand):
    help = "Re-check every trace of a run directory against the value-metric bounds"

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='in_dir', required=True, help="run directory")
        parser.add_argument('--tolerance', type=float, default=settings.VER_TOLERANCE)

    def handle(self, *args, **options):
        try:
            reports = verify_bounds(options['in_dir'], options['tolerance'])
        except TraceFormatError as err:
            raise config_error(err) from err

        for name, report in reports.items():
            self.stdout.write(f"{name}: {report.records} records, {report.violating_records} violating")
        total = merge_reports(reports)
        for invariant in INVARIANTS:
            self.stdout.write(f"  {invariant}: {total.counts[invariant]} "
                              f"(max excess {total.max_excess[invariant]!r})")

        mismatches = self._priority_mismatches(options['in_dir'])
        if mismatches:
            self.stdout.write(self.style.ERROR(f"  priority mismatches: {mismatches}"))
        if not total.clean or mismatches:
            raise CommandError(f"{total.violating_records} violating records beyond "
                               f"tolerance {options['tolerance']!r}", returncode=EXIT_VIOLATION)
        self.stdout.write(self.style.SUCCESS(f"{total.records} records within bounds"))

    def _priority_mismatches(self, in_dir) -> int:
        """VER/PER priority mismatches recorded in run.json, if there is one"""
        try:
            with open(f'{in_dir}/run.json', 'r', encoding='utf-8') as f:
                manifest = json.load(f)
        except FileNotFoundError:
            return 0
        except (OSError, json.JSONDecodeError) as err:
            raise config_error(TraceFormatError(f"run.json: {err}")) from err
        return sum(seed.get('priority_mismatches', 0) for seed in manifest.get('seeds', []))
