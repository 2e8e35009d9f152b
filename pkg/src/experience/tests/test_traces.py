import csv
from pathlib import Path
import tempfile

from django.test import SimpleTestCase

from experience.errors import TraceFormatError
from experience.metrics import MetricFlavor, MetricRecord
from experience.traces import (TRACE_COLUMNS, TraceRow, TraceWriter, check_rows, format_cell,
                               nonzero_fractions, read_trace, scatter_rows, trace_files, write_csv)

CLEAN = MetricRecord(td=0.1, evb=0.1, piv=0.0, eiv=0.1, rho_max=1.0, rho_min=1.0,
                     upper_bound=0.1, lower_bound=0.0, flavor=MetricFlavor.PLAIN)
# |EVB| above the bound, PIV negative
BROKEN = MetricRecord(td=0.1, evb=0.3, piv=-0.1, eiv=0.4, rho_max=1.0, rho_min=0.0,
                      upper_bound=0.1, lower_bound=0.0, flavor=MetricFlavor.PLAIN)


class TraceFileTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write_trace(self, name: str, records) -> TraceWriter:
        with TraceWriter(self.dir / name) as writer:
            for step, record in enumerate(records):
                writer.write(TraceRow.from_record(step, 1, '0', 2, -0.004, record))
        return writer

    def test_round_trip_is_exact(self):
        record = MetricRecord(td=1 / 3, evb=0.1 + 0.2, piv=0.0, eiv=0.1 + 0.2, rho_max=0.7,
                              rho_min=0.3, upper_bound=0.7 / 2, lower_bound=0.1,
                              flavor=MetricFlavor.SOFT)
        self.write_trace('trace_seed0.csv', [record])
        row = read_trace(self.dir / 'trace_seed0.csv')[0]
        self.assertEqual(row.td, 1 / 3)
        self.assertEqual(row.evb, 0.1 + 0.2)
        self.assertEqual(row.upper_bound, 0.7 / 2)
        self.assertEqual(row.flavor, MetricFlavor.SOFT)
        self.assertEqual((row.step, row.episode, row.state, row.action, row.reward),
                         (0, 1, '0', 2, -0.004))

    def test_header(self):
        self.write_trace('trace_seed0.csv', [CLEAN])
        with open(self.dir / 'trace_seed0.csv', newline='', encoding='utf-8') as f:
            self.assertEqual(tuple(next(csv.reader(f))), TRACE_COLUMNS)

    def test_writer_counts_violations(self):
        with self.assertLogs('experience.traces', 'WARNING'):
            writer = self.write_trace('trace_seed0.csv', [CLEAN, BROKEN, CLEAN])
        self.assertEqual(writer.rows, 3)
        self.assertEqual(writer.violating_rows, 1)
        self.assertEqual(writer.violations, {'upper_bound': 1, 'policy_improvement_sign': 1})

    def test_check_rows(self):
        self.write_trace('trace_seed0.csv', [CLEAN, BROKEN])
        report = check_rows(read_trace(self.dir / 'trace_seed0.csv'), 1e-9)
        self.assertEqual(report.records, 2)
        self.assertEqual(report.violating_records, 1)
        self.assertEqual(report.counts['upper_bound'], 1)
        self.assertEqual(report.counts['lower_bound'], 0)
        self.assertAlmostEqual(report.max_excess['upper_bound'], 0.3 - 1e-9)
        self.assertFalse(report.clean)

    def test_tolerance_is_monotone(self):
        self.write_trace('trace_seed0.csv', [CLEAN, BROKEN])
        rows = read_trace(self.dir / 'trace_seed0.csv')
        totals = [check_rows(rows, tol).total for tol in (1e-12, 1e-9, 0.05, 0.2, 1.0)]
        self.assertEqual(totals, sorted(totals, reverse=True))
        self.assertEqual(totals[-1], 0)

    def test_malformed_traces(self):
        bad_header = self.dir / 'trace_seed1.csv'
        bad_header.write_text('step,episode\n1,2\n', encoding='utf-8')
        with self.assertRaises(TraceFormatError):
            read_trace(bad_header)
        short_row = self.dir / 'trace_seed2.csv'
        short_row.write_text(','.join(TRACE_COLUMNS) + '\n1,2,3\n', encoding='utf-8')
        with self.assertRaises(TraceFormatError):
            read_trace(short_row)
        bad_flavor = self.dir / 'trace_seed3.csv'
        bad_flavor.write_text(','.join(TRACE_COLUMNS) + '\n' + ','.join(['1'] * 13 + ['hot']) + '\n',
                              encoding='utf-8')
        with self.assertRaises(TraceFormatError):
            read_trace(bad_flavor)
        with self.assertRaises(TraceFormatError):
            read_trace(self.dir / 'missing.csv')

    def test_trace_files_in_seed_order(self):
        for seed in (10, 2, 1):
            self.write_trace(f'trace_seed{seed}.csv', [CLEAN])
        self.assertEqual([p.name for p in trace_files(self.dir)],
                         ['trace_seed1.csv', 'trace_seed2.csv', 'trace_seed10.csv'])

    def test_write_csv(self):
        count = write_csv(self.dir / 'out.csv', ('a', 'b'), [(1, 0.5), (MetricFlavor.FA_SOFT, True)])
        self.assertEqual(count, 2)
        self.assertEqual((self.dir / 'out.csv').read_text(encoding='utf-8'),
                         'a,b\n1,0.5\nfa_soft,True\n')


class SummaryRowTests(SimpleTestCase):
    def rows(self):
        idle = MetricRecord(td=0.0, evb=0.0, piv=0.0, eiv=0.0, rho_max=1.0, rho_min=1.0,
                            upper_bound=0.0, lower_bound=0.0, flavor=MetricFlavor.PLAIN)
        return [TraceRow.from_record(0, 1, '0', 0, 0.0, CLEAN),
                TraceRow.from_record(1, 1, '0', 0, 0.0, idle)]

    def test_nonzero_fractions(self):
        fractions = nonzero_fractions(self.rows())
        self.assertEqual(fractions, {'plain': {'records': 2, 'evb': 0.5, 'piv': 0.0, 'eiv': 0.5}})

    def test_scatter_rows(self):
        scatter = list(scatter_rows(self.rows()))
        self.assertEqual(scatter[0][:6], (0.1, 0.1, 0.0, 0.1, 0.0, 0.1))
        self.assertEqual(len(scatter), 2)

    def test_format_cell(self):
        self.assertEqual(format_cell(0.1), '0.1')
        self.assertEqual(format_cell(MetricFlavor.SOFT), 'soft')
        self.assertEqual(format_cell(7), '7')
