"""
Wall-clock timing helpers for studies and runs.
"""
import statistics
import time
from typing import Callable


def median_wall_time(fn: Callable[[], object], repeats: int = 20, warmup: int = 1) -> float:
    """
    Median wall-clock time of ``fn()`` over ``repeats`` calls.

    Args:
        fn: Zero-argument callable to time
        repeats: Number of timed calls (at least 1)
        warmup: Untimed calls made first so caches and FFT plans are warm

    Returns:
        Median duration in seconds
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    for _ in range(max(0, warmup)):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return float(statistics.median(samples))


def format_elapsed(seconds: float) -> str:
    """
    Elapsed time at the resolution that matters for it.

    Per-iteration timings are microseconds to milliseconds, studies run for
    minutes: "48.2us", "3.15ms", "12.4s", "7m 03s".
    """
    if seconds < 0:
        raise ValueError(f"seconds must be >= 0, got {seconds}")
    if seconds < 1e-3:
        return f"{seconds * 1e6:.1f}us"
    if seconds < 1.0:
        return f"{seconds * 1e3:.2f}ms"
    if seconds < 60.0:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(round(seconds)), 60)
    return f"{minutes}m {secs:02d}s"
