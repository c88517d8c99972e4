"""
Shared plumbing for the edgestream management commands.

Errors leave a command as ``CommandError`` carrying the process exit code:
0 success, 1 configuration error, 2 runtime error, 3 replay divergence.
"""
import asyncio
import json
import logging
import signal

from django.core.management.base import BaseCommand, CommandError

from core.conf import edgestream_setting
from core.exceptions import ConfigError, EdgeStreamError, InvalidTopology, ReplayDivergence, UnreachableNode
from core.timing import WallClock
from metrics.events import EventLog

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_DIVERGENCE = 3

CONFIG_ERRORS = (ConfigError, InvalidTopology, UnreachableNode)


def exit_code(exc):
    if isinstance(exc, ReplayDivergence):
        return EXIT_DIVERGENCE
    if isinstance(exc, CONFIG_ERRORS):
        return EXIT_CONFIG
    return EXIT_RUNTIME


def parse_address(value, default_port=7400):
    """``host:port``, ``host`` or ``:port``."""
    host, sep, port = value.rpartition(':')
    if not sep:
        return value or '127.0.0.1', default_port
    try:
        return host or '127.0.0.1', int(port)
    except ValueError:
        raise ConfigError(f'bad address {value!r}; expected host:port') from None


def parse_params(pairs):
    """``key=value`` flags; values are read as JSON when they parse, else kept as strings."""
    params = {}
    for pair in pairs or ():
        key, sep, raw = pair.partition('=')
        if not sep or not key:
            raise ConfigError(f'bad parameter {pair!r}; expected key=value')
        try:
            params[key] = json.loads(raw)
        except ValueError:
            params[key] = raw
    return params


class EdgeStreamCommand(BaseCommand):
    """Base class: maps EdgeStreamError to exit codes and resolves the log directory."""

    def add_log_dir_argument(self, parser, flag='--out'):
        parser.add_argument(
            flag, dest='log_dir', default=None,
            help='Metric log directory (default: EDGESTREAM_LOG_DIR or settings).',
        )

    def log_dir(self, options):
        return options.get('log_dir') or edgestream_setting('LOG_DIR')

    def event_log(self, node, options, clock=None):
        return EventLog(node, clock or WallClock(), self.log_dir(options))

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except EdgeStreamError as exc:
            raise CommandError(f'{exc.code}: {exc}', returncode=exit_code(exc)) from exc
        except OSError as exc:
            raise CommandError(f'transport_failure: {exc}', returncode=EXIT_RUNTIME) from exc

    def run(self, *args, **options):
        raise NotImplementedError('subclasses of EdgeStreamCommand must provide a run() method')


class LiveCommand(EdgeStreamCommand):
    """Long-running live process stopped cleanly by SIGTERM or SIGINT."""

    def run(self, *args, **options):
        asyncio.run(self._main(options))

    async def _main(self, options):
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for signum in (signal.SIGTERM, signal.SIGINT):
            try:
                loop.add_signal_handler(signum, stop.set)
            except (NotImplementedError, RuntimeError):
                # Not the main thread, or a platform without signal support.
                pass
        try:
            await self.serve(options, stop)
        finally:
            for signum in (signal.SIGTERM, signal.SIGINT):
                try:
                    loop.remove_signal_handler(signum)
                except (NotImplementedError, RuntimeError):
                    pass

    async def serve(self, options, stop):
        raise NotImplementedError('subclasses of LiveCommand must provide a serve() method')
