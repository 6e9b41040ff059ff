from __future__ import annotations

import math
import os
import queue
import sys
import threading

import numpy as np

from .errors import InvalidValuesError

FLOAT32_LE = np.dtype('<f4')


def derive_rng(seed, *keys):
    """Independent generator for (seed, key...) so streams never depend on call order."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.default_rng(entropy)


def round_half_up(value):
    return int(math.floor(value + 0.5))


def to_float32_bytes(values):
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise InvalidValuesError("Can't pack non-finite values")
    return np.ascontiguousarray(values, dtype=FLOAT32_LE).tobytes(order='C')


def from_float32_bytes(data, shape):
    count = int(np.prod(shape))
    if len(data) != count * FLOAT32_LE.itemsize:
        raise InvalidValuesError("Expected {0} bytes for shape {1}, got {2}"
                         .format(count * FLOAT32_LE.itemsize, tuple(shape), len(data)))
    return np.frombuffer(data, dtype=FLOAT32_LE).reshape(shape).astype(np.float64)


def progress_enabled():
    if os.environ.get('MASKVC_NO_PROGRESS', '') == '1':
        return False
    return sys.stderr.isatty()


class Iterator(threading.Thread):
    """Runs ``produce(index)`` for ``start <= index < stop`` ahead of the consumer.

    Items come out strictly in index order; the queue bound limits how far the
    producer may run ahead. An exception raised by ``produce`` is re-raised in
    the consumer at the index where it happened.
    """

    def __init__(self, produce, start, stop, maxsize=4):
        super(Iterator, self).__init__()
        self.produce = produce
        self.start_index = start
        self.stop_index = stop
        self.items = queue.Queue(maxsize=max(1, maxsize))
        self.daemon = True
        self.running = False

    def run(self):
        self.running = True
        index = self.start_index
        while self.running and index < self.stop_index:
            try:
                item = (index, self.produce(index), None)
            except Exception as e:
                item = (index, None, e)
            while self.running:
                try:
                    self.items.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if item[2] is not None:
                break
            index += 1
        self.running = False

    def __iter__(self):
        if self.ident is None:
            self.start()
        for _ in range(self.start_index, self.stop_index):
            index, value, error = self.items.get()
            if error is not None:
                self.stop()
                raise error
            yield index, value

    def stop(self):
        self.running = False
