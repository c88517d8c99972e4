from broker.server import BrokerServer
from broker.service import Broker
from core.conf import edgestream_setting
from sim.scenario import load_scenario

from cli.base import LiveCommand, parse_address


class Command(LiveCommand):
    help = 'Run the leader broker until SIGTERM'

    def add_arguments(self, parser):
        parser.add_argument('--listen', default='127.0.0.1:7400', help='host:port to accept clients on')
        parser.add_argument('--retention', type=int, default=None, help='Headers kept per topic')
        parser.add_argument('--shared-window', type=int, default=None, help='Shared-mode in-flight window')
        parser.add_argument('--scenario', default=None, help='Create the topics of this scenario at startup')
        parser.add_argument('--node', default='leader', help='Node name used for the metric log')
        self.add_log_dir_argument(parser, '--log-dir')

    async def serve(self, options, stop):
        host, port = parse_address(options['listen'])
        broker = Broker(
            retention=options['retention'] or edgestream_setting('BROKER_RETENTION'),
            shared_window=options['shared_window'] or edgestream_setting('SHARED_WINDOW'),
            max_payload=edgestream_setting('MAX_PAYLOAD_BYTES'),
        )
        if options['scenario']:
            for config in load_scenario(options['scenario']).topics:
                broker.create_topic(config)
        log = self.event_log(options['node'], options)
        server = await BrokerServer(broker, host, port).start()
        self.stdout.write(f'Broker listening on {host}:{server.port}')
        try:
            await stop.wait()
        finally:
            await server.close()
            log.shutdown(**broker.stats.as_dict())
        self.stdout.write(self.style.SUCCESS(f'Broker stopped after {broker.stats.headers_in} headers'))
