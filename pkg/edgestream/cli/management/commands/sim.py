import os
import pprint

from core.conf import edgestream_setting
from core.exceptions import ConfigError
from metrics.models import ScenarioRun
from sim.experiments import EXPERIMENTS
from sim.harness import run_scenario
from sim.scenario import load_scenario

from cli.base import EdgeStreamCommand

SUMMARY_METRICS = ('end_to_end', 'total_communication', 'processing', 'reaction_time', 'queueing_time')


class Command(EdgeStreamCommand):
    help = 'Run a scenario (or a whole experiment) in the deterministic simulator'

    def add_arguments(self, parser):
        parser.add_argument('--scenario', default=None, help='Scenario file or shipped scenario name')
        parser.add_argument('--seed', type=int, default=None, help='Override the scenario seed')
        parser.add_argument('--csv', default=None, help='Also write the metric report as CSV')
        parser.add_argument('--persist', action='store_true', help='Store the report in the database')
        parser.add_argument('--experiment', choices=sorted(EXPERIMENTS), default=None)
        self.add_log_dir_argument(parser)

    def run(self, *args, **options):
        if options['experiment']:
            result = EXPERIMENTS[options['experiment']]()
            self.stdout.write(pprint.pformat(result))
            return
        if not options['scenario']:
            raise ConfigError('give --scenario or --experiment')
        scenario = load_scenario(options['scenario'])
        log_dir = options['log_dir'] or os.path.join(edgestream_setting('LOG_DIR'), scenario.name)
        result = run_scenario(scenario, options['seed'], log_dir)
        report = result.report

        self.stdout.write(f'Scenario {scenario.name} (seed {result.seed}), logs in {log_dir}')
        for metric in SUMMARY_METRICS:
            distribution = report.distributions.get(metric)
            if distribution is not None and distribution.count:
                self.stdout.write(f'  {metric}: median {distribution.median} us, p95 {distribution.p95} us')
        for reason, count in sorted(report.skipped.items()):
            self.stdout.write(f'  items {reason}: {count}')
        if report.accuracy is not None:
            self.stdout.write(f'  real-time accuracy: {report.accuracy.accuracy:.3f}')
        for violation in report.violations:
            self.stderr.write(f'  violation: {violation}')

        if options['csv']:
            report.write_csv(options['csv'])
        if options['persist']:
            run = ScenarioRun.record(report, scenario.name, seed=result.seed, log_dir=log_dir)
            self.stdout.write(f'Stored as run {run.pk}')
        self.stdout.write(self.style.SUCCESS('Simulation finished'))
