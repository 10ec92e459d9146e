#!/usr/bin/env python3
"""
General Utilities
(part of cfdata)
"""

import hashlib
import os
import shutil
from concurrent.futures import ProcessPoolExecutor

import numpy as np

__all__ = [
    "Storage",
    "storage",
    "Counter",
    "counter",
    "runs",
    "safewrite",
    "sha1file",
    "parallel_map",
]


class Storage(dict):
    """
    A Storage object is like a dictionary except `obj.foo` can be used
    in addition to `obj['foo']`.

        >>> o = storage(a=1)
        >>> o.a
        1
        >>> o['a']
        1
        >>> o.a = 2
        >>> o['a']
        2
        >>> del o.a
        >>> o.a
        Traceback (most recent call last):
            ...
        AttributeError: 'a'

    """

    def __getattr__(self, key):
        try:
            return self[key]
        except KeyError as k:
            raise AttributeError(k)

    def __setattr__(self, key, value):
        self[key] = value

    def __delattr__(self, key):
        try:
            del self[key]
        except KeyError as k:
            raise AttributeError(k)

    def __repr__(self):
        return "<Storage " + dict.__repr__(self) + ">"


storage = Storage


class Counter(storage):
    """Keeps count of how many times something is added.

    >>> c = counter()
    >>> c.add("1.4")
    >>> c.add("1.4")
    >>> c.add("1.2")
    >>> c["1.4"]
    2
    """

    def add(self, n, count=1):
        self.setdefault(n, 0)
        self[n] += count

    def sorted_keys(self):
        """Returns keys sorted by value, largest first; equal counts keep key order.

        >>> c = counter()
        >>> c.add('x')
        >>> c.add('y')
        >>> c.add('y')
        >>> c.sorted_keys()
        ['y', 'x']
        """
        return sorted(sorted(self.keys()), key=lambda k: self[k], reverse=True)

    def __repr__(self):
        return "<Counter " + dict.__repr__(self) + ">"


counter = Counter


def runs(mask):
    """
    Returns the maximal runs of True in a boolean sequence as
    half-open `(start, stop)` index pairs.

        >>> runs([0, 1, 1, 0, 1])
        [(1, 3), (4, 5)]
        >>> runs([])
        []
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    edges = np.diff(np.concatenate(([0], mask.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


def safewrite(filename, content):
    """Writes the content to a temp file and then moves the temp file to
    given filename to avoid overwriting the existing file in case of errors.
    """
    dirname = os.path.dirname(filename)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(filename + ".tmp", "w", encoding="utf-8", newline="") as f:
        f.write(content)
    shutil.move(f.name, filename)


def sha1file(filename):
    """Returns the hex sha1 digest of a file's bytes."""
    h = hashlib.sha1()
    with open(filename, "rb") as f:
        for block in iter(lambda: f.read(64 * 1024), b""):
            h.update(block)
    return h.hexdigest()


def parallel_map(func, items, workers=1):
    """
    Applies `func` to every item and returns the results in input order.
    With more than one worker the calls run in a process pool, so `func`
    and the items must be picklable.

        >>> parallel_map(abs, [-1, 2, -3])
        [1, 2, 3]
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return list(map(func, items))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
