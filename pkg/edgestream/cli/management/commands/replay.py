from core.exceptions import ReplayDivergence
from join.replay import replay_log
from metrics.events import read_logs

from cli.base import EdgeStreamCommand


class Command(EdgeStreamCommand):
    help = 'Re-run every joiner over its logged arrivals and compare with the logged join decisions'

    def add_arguments(self, parser):
        parser.add_argument('log_dir', help='Directory holding <node>.log files')
        parser.add_argument('--node', default=None, help='Only replay pipelines on this node')
        parser.add_argument('--topic', default=None, help='Only replay pipelines of this topic')

    def run(self, *args, **options):
        results = [
            result for result in replay_log(read_logs(options['log_dir']))
            if options['node'] in (None, result.node) and options['topic'] in (None, result.topic)
        ]
        diverged = None
        for result in results:
            if result.ok:
                self.stdout.write(f'{result.node}/{result.topic}: {result.logged} tuples identical')
            else:
                self.stdout.write(f'{result.node}/{result.topic}: {result.divergence.describe()}')
                diverged = diverged or result
        if diverged is not None:
            raise ReplayDivergence(
                f'{diverged.node}/{diverged.topic} diverged at {diverged.divergence.describe()}'
            )
        self.stdout.write(self.style.SUCCESS(f'Replayed {len(results)} pipelines'))
