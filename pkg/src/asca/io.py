"""File formats: WAV audio, binary float matrices, grayscale PNG previews.

Matrix file layout (little-endian)::

    bytes 0-3   magic b"AMAT"
    bytes 4-7   uint32 rows
    bytes 8-11  uint32 cols
    bytes 12-   rows*cols float32, row-major
"""

import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

MATRIX_MAGIC = b"AMAT"
_HEADER = struct.Struct("<4sII")


def read_wav(path):
    """Read a PCM WAV file as (float64 mono samples, sample rate).

    16-bit integer data is scaled to [-1, 1); float data is passed through.
    Multi-channel files are down-mixed by averaging channels.
    """
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return samples, int(rate)


def write_wav(path, samples, sample_rate_hz, dtype=np.float32):
    """Write mono IEEE-float WAV (32-bit by default, 64-bit for lossless clips)."""
    wavfile.write(str(path), int(sample_rate_hz), np.asarray(samples, dtype=dtype))


def write_matrix(path, matrix):
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError("matrix must be 2-D")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MATRIX_MAGIC, rows, cols))
        fh.write(np.ascontiguousarray(m).tobytes())


def read_matrix(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated matrix header")
    magic, rows, cols = _HEADER.unpack_from(raw)
    if magic != MATRIX_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float64)


def write_png(path, image):
    """8-bit grayscale export of a [0, 1] image, low mel bands at the bottom."""
    from PIL import Image

    pixels = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    pixels = np.round(pixels[::-1] * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(str(path))
