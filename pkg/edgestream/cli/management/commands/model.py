from core.conf import edgestream_setting
from core.types import ms
from runtime.failsoft import FailSoftPolicy
from runtime.live import ModelProcess
from runtime.operators import MODELS, build_model
from store.fetch import FetchClient

from cli.base import LiveCommand, parse_address, parse_params


class Command(LiveCommand):
    help = 'Consume a topic, run a model on every join tuple and publish its predictions'

    def add_arguments(self, parser):
        parser.add_argument('--leader', default='127.0.0.1:7400', help='Broker address host:port')
        parser.add_argument('--topic', required=True, help='Topic to consume')
        parser.add_argument('--model', required=True, choices=sorted(MODELS))
        parser.add_argument('--output', required=True, help='Stream the predictions are published on')
        parser.add_argument('--output-topic', default='', help='Default: <topic>.predictions')
        parser.add_argument('--cost-ms', type=float, default=0.0, help='Declared model cost')
        parser.add_argument('--id', default=None, help='Model id (default: the model name)')
        parser.add_argument('--node', default=None, help='Node name for the metric log (default: the id)')
        parser.add_argument('--shared', action='store_true', help='Join the shared consumer group')
        parser.add_argument('--policy', choices=[p.value for p in FailSoftPolicy],
                            default=FailSoftPolicy.DROP_TUPLE.value)
        parser.add_argument('--skip-fraction', type=float, default=0.0)
        parser.add_argument('--output-size', type=int, default=8)
        parser.add_argument('--param', action='append', default=[], help='Model parameter key=value')
        self.add_log_dir_argument(parser, '--log-dir')

    async def serve(self, options, stop):
        host, port = parse_address(options['leader'])
        model_id = options['id'] or options['model']
        node = options['node'] or model_id
        model = build_model(
            options['model'], model_id, options['topic'], options['output'], ms(options['cost_ms']),
            options['output_topic'], parse_params(options['param']), options['output_size'],
        )
        process = await ModelProcess.connect(
            host, port, model, self.event_log(node, options), f'{model_id}@{node}',
            shared=options['shared'],
            policy=FailSoftPolicy(options['policy']),
            skip_fraction=options['skip_fraction'],
            fetch_client=FetchClient(edgestream_setting('FETCH_CACHE_BYTES')),
        )
        try:
            await process.start()
            self.stdout.write(f'Model {model_id} consuming {options["topic"]}')
            await process.run(stop)
        finally:
            await process.close()
        self.stdout.write(self.style.SUCCESS(f'Model {model_id} stopped after {len(process.outputs)} predictions'))
