"""Thread caps for the BLAS backing the matrix products.

``VEA_THREADS`` limits kernel parallelism; with a fixed value results are
reproducible run to run.
"""
import os

from threadpoolctl import threadpool_limits

_limiter = None


def configure_threads(n=None):
    """Apply ``n`` (or ``$VEA_THREADS``) as the BLAS thread limit; returns it."""
    global _limiter
    if n is None:
        raw = os.environ.get("VEA_THREADS", "").strip()
        if not raw:
            return None
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"VEA_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _limiter = threadpool_limits(limits=n)
    return n
