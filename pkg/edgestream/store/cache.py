from collections import OrderedDict


class FetchCache:
    """Consumer-side LRU of fetched payloads, bounded by total bytes."""

    def __init__(self, capacity_bytes):
        self.capacity_bytes = capacity_bytes
        self.size = 0
        self._entries = OrderedDict()

    def __len__(self):
        return len(self._entries)

    def __contains__(self, locator):
        return locator in self._entries

    def get(self, locator):
        payload = self._entries.get(locator)
        if payload is not None:
            self._entries.move_to_end(locator)
        return payload

    def put(self, locator, payload):
        if len(payload) > self.capacity_bytes:
            return False
        if locator in self._entries:
            self._entries.move_to_end(locator)
            return True
        self._entries[locator] = payload
        self.size += len(payload)
        while self.size > self.capacity_bytes:
            _, evicted = self._entries.popitem(last=False)
            self.size -= len(evicted)
        return True
