from django.conf import settings

DEFAULTS = {
    'LOG_DIR': 'logs',
    'BROKER_RETENTION': 65536,
    'SHARED_WINDOW': 16,
    'MAX_PAYLOAD_BYTES': 64 * 1024 * 1024,
    'STORE_RETENTION_BYTES': 1024 * 1024 * 1024,
    'SEGMENT_BYTES': 64 * 1024 * 1024,
    'SEGMENT_SPAN_MS': 10 * 60 * 1000,
    'FETCH_CACHE_BYTES': 256 * 1024 * 1024,
    'P2P_SETUP_MS': 5,
}


def edgestream_setting(name):
    """Read one entry of settings.EDGESTREAM, falling back to the shipped default."""
    configured = getattr(settings, 'EDGESTREAM', {})
    if name in configured:
        return configured[name]
    return DEFAULTS[name]
