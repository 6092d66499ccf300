import random

import pytest

from siat.framewire import Compression, Frame, MiniBatch, PixelFormat


def make_frame(width, height, fmt=PixelFormat.GRAY8, fill=None, rng=None):
    size = width * height * fmt.channels
    if fill is not None:
        pixels = bytes([fill]) * size
    else:
        rng = rng or random.Random(0)
        pixels = bytes(rng.randrange(256) for _ in range(size))
    return Frame(width, height, fmt, pixels)


def random_batch(rng, max_dim=64, max_frames=32, seq=0):
    """One randomized mini-batch: either pixel format, either compression."""
    fmt = rng.choice([PixelFormat.GRAY8, PixelFormat.RGB24])
    width = rng.randint(1, max_dim)
    height = rng.randint(1, max_dim)
    count = rng.randint(0, max_frames)
    frames = tuple(
        Frame(width, height, fmt, rng.randbytes(width * height * fmt.channels))
        for _ in range(count)
    )
    return MiniBatch(
        source_id=f"cam{rng.randint(0, 9)}",
        batch_seq=seq,
        start_ts_micros=rng.randrange(2**48),
        frame_interval_micros=rng.randint(1, 10**6),
        frames=frames,
        compression=rng.choice([Compression.NONE, Compression.DEFLATE]),
    )


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
