import os

import scipy.fft


def workers() -> int:
    """Worker count for transforms, capped by ``VNLS_THREADS``."""
    cap = os.environ.get("VNLS_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            pass
    return n


def fftn(a, axes=(-3, -2, -1)):
    return scipy.fft.fftn(a, axes=axes, workers=workers())


def ifftn(a, axes=(-3, -2, -1)):
    return scipy.fft.ifftn(a, axes=axes, workers=workers())


def rfftn(a, axes=(-3, -2, -1)):
    return scipy.fft.rfftn(a, axes=axes, workers=workers())


def irfftn(a, shape, axes=(-3, -2, -1)):
    return scipy.fft.irfftn(a, s=shape[-3:], axes=axes, workers=workers())
