import asyncio

from broker.client import BrokerClient
from core.conf import edgestream_setting
from core.exceptions import ConfigError
from core.types import ms
from runtime.live import SourceProcess
from sim.generators import make_payload
from sim.scenario import EAGER, LAZY
from store.fetch import FetchServer
from store.log import NodeStore

from cli.base import LiveCommand, parse_address


class Command(LiveCommand):
    help = 'Publish one periodic stream to the broker'

    def add_arguments(self, parser):
        parser.add_argument('--leader', default='127.0.0.1:7400', help='Broker address host:port')
        parser.add_argument('--topic', required=True)
        parser.add_argument('--stream', required=True)
        parser.add_argument('--node', default=None, help='Node name for the metric log (default: the stream)')
        parser.add_argument('--period-ms', type=float, default=1000.0)
        parser.add_argument('--count', type=int, default=None, help='Stop publishing after this many items')
        parser.add_argument('--payload-size', type=int, default=8)
        parser.add_argument('--routing', choices=[LAZY, EAGER], default=LAZY)
        parser.add_argument('--store-host', default='127.0.0.1', help='Address peers dial to fetch payloads')
        parser.add_argument('--store-port', type=int, default=0)
        self.add_log_dir_argument(parser, '--log-dir')

    async def serve(self, options, stop):
        if options['period_ms'] <= 0:
            raise ConfigError(f'--period-ms must be positive, got {options["period_ms"]}')
        host, port = parse_address(options['leader'])
        client = await BrokerClient.connect(host, port, edgestream_setting('MAX_PAYLOAD_BYTES'))
        store = fetch_server = None
        if options['routing'] == LAZY:
            store = NodeStore(
                options['store_host'],
                retention_bytes=edgestream_setting('STORE_RETENTION_BYTES'),
                segment_bytes=edgestream_setting('SEGMENT_BYTES'),
                segment_span=ms(edgestream_setting('SEGMENT_SPAN_MS')),
            )
            fetch_server = await FetchServer(store, options['store_host'], options['store_port']).start()
        log = self.event_log(options['node'] or options['stream'], options)
        source = SourceProcess(client, options['topic'], options['stream'], log, store)
        size = options['payload_size']
        producing = asyncio.create_task(
            source.run(lambda index: make_payload(index, size), ms(options['period_ms']), options['count'])
        )
        stopping = asyncio.create_task(stop.wait())
        try:
            done, _ = await asyncio.wait({producing, stopping}, return_when=asyncio.FIRST_COMPLETED)
            if producing in done:
                producing.result()
                self.stdout.write(f'Published {source.published} items')
                if store is not None:
                    # Consumers fetch from this process until it is told to stop.
                    await stop.wait()
        finally:
            for task in (producing, stopping):
                task.cancel()
            await asyncio.gather(producing, stopping, return_exceptions=True)
            log.shutdown(published=source.published)
            await client.close()
            if fetch_server is not None:
                await fetch_server.close()
        self.stdout.write(self.style.SUCCESS(f'Source {options["stream"]} stopped'))
