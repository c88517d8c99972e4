from core.exceptions import ConfigError
from metrics.events import read_logs
from metrics.models import ScenarioRun
from metrics.report import report

from cli.base import EdgeStreamCommand


class Command(EdgeStreamCommand):
    help = 'Compute the metric report of a run from its log directory'

    def add_arguments(self, parser):
        parser.add_argument('log_dir', nargs='?', default=None, help='Directory holding <node>.log files')
        parser.add_argument('--logs', default=None, help='Same as the positional log directory')
        parser.add_argument('--out', '--csv', dest='csv', default=None,
                            help='Write the report as CSV instead of printing it')
        parser.add_argument('--persist', action='store_true', help='Store the report in the database')
        parser.add_argument('--name', default=None, help='Run name when persisting (default: the directory)')

    def run(self, *args, **options):
        log_dir = options['logs'] or options['log_dir']
        if not log_dir:
            raise ConfigError('metrics_report needs a log directory (--logs <dir>)')
        events = read_logs(log_dir)
        result = report(events)
        if options['csv']:
            result.write_csv(options['csv'])
            self.stdout.write(f'Wrote {len(result.rows())} rows to {options["csv"]}')
        else:
            for metric, statistic, value in result.rows():
                self.stdout.write(f'{metric}\t{statistic}\t{value}')
        for violation in result.violations:
            self.stderr.write(f'violation: {violation}')
        if options['persist']:
            run = ScenarioRun.record(result, options['name'] or log_dir, mode=ScenarioRun.MODE_LIVE, log_dir=log_dir)
            self.stdout.write(f'Stored as run {run.pk}')
