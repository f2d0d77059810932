"""Run deeply recursive term traversals on a thread with a large stack.

Long let-chains nest deeply, and the traversals in this package are
recursive.  The main thread's stack is fixed by the OS, so entry points
that may recurse deeply hop onto a worker thread with a generous stack.
"""

from __future__ import annotations

import functools
import sys
import threading

_STACK_BYTES = 512 * 1024 * 1024
_RECURSION = 400_000
_local = threading.local()


def deep(fn):
    """Decorator: run ``fn`` on a big-stack thread unless already on one."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        if getattr(_local, "inside", False):
            return fn(*args, **kwargs)
        box = {}

        def target():
            _local.inside = True
            try:
                box["value"] = fn(*args, **kwargs)
            except BaseException as exc:  # re-raised on the caller's thread
                box["error"] = exc

        old_size = threading.stack_size()
        threading.stack_size(_STACK_BYTES)
        try:
            worker = threading.Thread(target=target, name="lbp-deep")
            worker.start()
        finally:
            threading.stack_size(old_size)
        worker.join()
        if "error" in box:
            raise box["error"]
        return box["value"]

    return wrapper


if sys.getrecursionlimit() < _RECURSION:
    sys.setrecursionlimit(_RECURSION)
