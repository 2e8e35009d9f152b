from pathlib import Path

from django.core.management.base import BaseCommand

from experience.cli import config_error
from experience.errors import TraceFormatError
from experience.runners import emit_summary


class Command(BaseCommand):
    help = "Write scatter data and a per-seed summary for a run directory"

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='in_dir', required=True, help="run directory")

    def handle(self, *args, **options):
        in_dir = Path(options['in_dir'])
        if not in_dir.is_dir():
            raise config_error(TraceFormatError(f"{in_dir} is not a directory"))
        try:
            rows = emit_summary(in_dir)
        except TraceFormatError as err:
            raise config_error(err) from err

        for row in rows:
            self.stdout.write(
                f"seed {row['seed']} {row['flavor']}: {row['records']} records, "
                f"nonzero evb {row['nonzero_evb']:.3f} piv {row['nonzero_piv']:.3f} "
                f"eiv {row['nonzero_eiv']:.3f}, {row['violating_records']} violating")
        if (in_dir / 'linear_summary.csv').exists():
            self.stdout.write(f"linear counts: {in_dir / 'linear_summary.csv'}")
        self.stdout.write(self.style.SUCCESS(f"summary written to {in_dir / 'summary.csv'}"))
