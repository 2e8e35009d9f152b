"""
Run traces and the data files derived from them.

A trace holds one row per logged update, with the update's context (step,
episode, state, action, reward) followed by its metric record. Floats are
written with repr so that reading a file back reproduces the logged values
exactly.
"""
from collections import Counter
import csv
from dataclasses import dataclass
import logging
from pathlib import Path

from .errors import TraceFormatError
from .metrics import (DEFAULT_TOLERANCE, MetricFlavor, MetricRecord, invariant_tolerance,
                      record_violations, violation_excess)

logger = logging.getLogger(__name__)

TRACE_COLUMNS = (
    'step', 'episode', 'state', 'action', 'reward', 'td', 'evb', 'piv', 'eiv',
    'rho_max', 'rho_min', 'upper_bound', 'lower_bound', 'flavor',
)
SCATTER_COLUMNS = (
    'abs_td', 'upper_bound', 'lower_bound', 'abs_evb', 'abs_piv', 'abs_eiv', 'rho_max', 'flavor',
)
INVARIANTS = ('upper_bound', 'lower_bound', 'additivity', 'policy_improvement_sign')
METRICS = ('evb', 'piv', 'eiv')


def format_cell(value) -> str:
    """shortest round-trip text for floats, str for everything else"""
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, MetricFlavor):
        return value.value
    return str(value)


def write_csv(path: Path, header, rows) -> int:
    """Write a header and rows; returns the number of data rows"""
    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
            count += 1
    return count


@dataclass(frozen=True)
class TraceRow:
    """one parsed trace line"""
    step: int
    episode: int
    state: str
    action: int
    reward: float
    td: float
    evb: float
    piv: float
    eiv: float
    rho_max: float
    rho_min: float
    upper_bound: float
    lower_bound: float
    flavor: MetricFlavor

    @classmethod
    def from_record(cls, step: int, episode: int, state: str, action: int, reward: float,
                    record: MetricRecord) -> 'TraceRow':
        """attach update context to a metric record"""
        return cls(step, episode, state, int(action), float(reward), record.td, record.evb,
                   record.piv, record.eiv, record.rho_max, record.rho_min, record.upper_bound,
                   record.lower_bound, MetricFlavor(record.flavor))

    def cells(self) -> list:
        """values in column order"""
        return [getattr(self, name) for name in TRACE_COLUMNS]


class TraceWriter:
    """
    Append-only trace file of one run.

    Every row is checked against the record invariants again as it is
    written; broken invariants are counted and logged.
    """
    path: Path
    tolerance: float
    rows: int
    violations: Counter
    violating_rows: int
    nonzero: 'NonzeroTally'

    def __init__(self, path: Path, tolerance: float = DEFAULT_TOLERANCE) -> None:
        self.path = Path(path)
        self.tolerance = tolerance
        self.rows = 0
        self.violations = Counter()
        self.violating_rows = 0
        self.nonzero = NonzeroTally()
        self._file = open(self.path, 'w', newline='', encoding='utf-8')
        self._writer = csv.writer(self._file, lineterminator='\n')
        self._writer.writerow(TRACE_COLUMNS)

    def __enter__(self) -> 'TraceWriter':
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def write(self, row: TraceRow) -> tuple[str, ...]:
        """append one row; returns the invariants it breaks"""
        self._writer.writerow([format_cell(v) for v in row.cells()])
        self.rows += 1
        self.nonzero.add(row)
        broken = record_violations(row, self.tolerance)
        if broken:
            self.violations.update(broken)
            self.violating_rows += 1
            logger.warning("%s step %d: record breaks %s", self.path.name, row.step, broken)
        return broken

    def close(self) -> None:
        """flush and close the file"""
        if not self._file.closed:
            self._file.close()


_PARSERS = {
    'step': int, 'episode': int, 'state': str, 'action': int, 'flavor': MetricFlavor,
}


def iter_trace(path: Path):
    """Yield the rows of a trace file, raising TraceFormatError on any malformed line"""
    path = Path(path)
    try:
        with open(path, newline='', encoding='utf-8') as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != TRACE_COLUMNS:
                raise TraceFormatError(f"{path}: header does not match the trace columns")
            for line, cells in enumerate(reader, start=2):
                if len(cells) != len(TRACE_COLUMNS):
                    raise TraceFormatError(
                        f"{path}:{line}: expected {len(TRACE_COLUMNS)} cells, got {len(cells)}")
                try:
                    values = [_PARSERS.get(name, float)(cell)
                              for name, cell in zip(TRACE_COLUMNS, cells)]
                except ValueError as err:
                    raise TraceFormatError(f"{path}:{line}: {err}") from err
                yield TraceRow(*values)
    except OSError as err:
        raise TraceFormatError(f"{path}: {err}") from err


def read_trace(path: Path) -> list[TraceRow]:
    """all rows of a trace file"""
    return list(iter_trace(path))


def trace_files(directory: Path) -> list[Path]:
    """trace files of a run directory, in seed order"""
    def seed_of(path: Path) -> int:
        try:
            return int(path.stem.removeprefix('trace_seed'))
        except ValueError as err:
            raise TraceFormatError(f"{path.name} is not named trace_seed<seed>.csv") from err
    return sorted(Path(directory).glob('trace_seed*.csv'), key=seed_of)


@dataclass
class BoundReport:
    """invariant violations found across traces"""
    records: int
    tolerance: float
    counts: dict
    max_excess: dict
    violating_records: int = 0

    @property
    def total(self) -> int:
        """violations over every invariant"""
        return sum(self.counts.values())

    @property
    def clean(self) -> bool:
        """no invariant broken beyond tolerance"""
        return self.total == 0


def check_rows(rows, tolerance: float = DEFAULT_TOLERANCE) -> BoundReport:
    """Count invariant violations and their largest excess over the tolerance"""
    counts = dict.fromkeys(INVARIANTS, 0)
    max_excess = dict.fromkeys(INVARIANTS, 0.0)
    records = violating = 0
    for row in rows:
        records += 1
        broken = False
        for name, amount in violation_excess(row).items():
            limit = invariant_tolerance(name, row.flavor, tolerance)
            if amount > limit:
                broken = True
                counts[name] += 1
                max_excess[name] = max(max_excess[name], amount - limit)
        violating += broken
    return BoundReport(records, tolerance, counts, max_excess, violating)


def scatter_rows(rows):
    """(|TD|, bounds, |metric|...) per row, the data behind bound-vs-metric scatters"""
    for row in rows:
        yield (abs(row.td), row.upper_bound, row.lower_bound, abs(row.evb), abs(row.piv),
               abs(row.eiv), row.rho_max, row.flavor)


class NonzeroTally:
    """running count of rows with a nonzero |EVB|, |PIV| and |EIV|, per flavor"""
    records: Counter
    nonzero: dict

    def __init__(self) -> None:
        self.records = Counter()
        self.nonzero = {}

    def add(self, row) -> None:
        """count one row"""
        flavor = MetricFlavor(row.flavor).value
        self.records[flavor] += 1
        counter = self.nonzero.setdefault(flavor, Counter())
        for name in METRICS:
            if getattr(row, name) != 0.0:
                counter[name] += 1

    def fractions(self) -> dict:
        """{flavor: {'records': n, 'evb': f, 'piv': f, 'eiv': f}}"""
        return {
            flavor: {'records': count,
                     **{name: self.nonzero[flavor][name] / count for name in METRICS}}
            for flavor, count in sorted(self.records.items())
        }


def nonzero_fractions(rows) -> dict:
    """fraction of rows with nonzero metrics, per flavor"""
    tally = NonzeroTally()
    for row in rows:
        tally.add(row)
    return tally.fractions()
