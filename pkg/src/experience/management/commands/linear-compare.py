from django.conf import settings
from django.core.management.base import BaseCommand

from experience.cli import config_error, parse_list
from experience.config import LinearSpec
from experience.errors import ConfigError
from experience.replay import ReplayStrategy
from experience.runners import run_linear_comparison


class Command(BaseCommand):
    help = "Count replays to the optimal policy on linear grids for each replay strategy"

    def add_arguments(self, parser):
        parser.add_argument('--n', default='5,10,20', help="comma-separated grid sizes")
        parser.add_argument('--strategies', default='uniform,oracle_td,oracle_evb')
        parser.add_argument('--seeds-per-point', type=int, default=300)
        parser.add_argument('--gamma', type=float, default=0.99)
        parser.add_argument('--out', default=None, help="output directory")
        parser.add_argument('--workers', type=int, default=settings.VER_WORKERS)

    def handle(self, *args, **options):
        try:
            if options['seeds_per_point'] < 1:
                raise ConfigError("--seeds-per-point must be positive")
            strategies = tuple(parse_list(options['strategies']))
            allowed = {ReplayStrategy.UNIFORM, ReplayStrategy.ORACLE_TD, ReplayStrategy.ORACLE_EVB}
            if not strategies or not set(strategies) <= {s.value for s in allowed}:
                raise ConfigError("--strategies must be drawn from uniform, oracle_td, oracle_evb")
            n_values = tuple(parse_list(options['n'], int))
            spec = LinearSpec(n_values=n_values, gamma=options['gamma'],
                              strategies=tuple(ReplayStrategy(s) for s in strategies))
            for n in n_values:
                spec.grid(n)
        except ConfigError as err:
            raise config_error(err) from err
        out_dir = options['out'] or settings.VER_OUTPUT_DIR / 'linear'

        summary = run_linear_comparison(spec, range(options['seeds_per_point']), out_dir,
                                        options['workers'])
        self.stdout.write("n,strategy,mean_to_optimal,std_to_optimal,mean_to_quiescence,reference,failures")
        for row in summary:
            self.stdout.write(
                f"{row['n']},{row['strategy']},{row['mean_to_optimal']},{row['std_to_optimal']},"
                f"{row['mean_to_quiescence']},{row['reference']},{row['failures']}")
        self.stdout.write(self.style.SUCCESS(f"counts written to {out_dir}"))
