"""Reading and writing HOMTAG1 time-tag files.

Layout, little-endian::

    magic           8 bytes   b"HOMTAG1\\0"
    pixel_count     u32
    reserved        u32       zero
    tag_resolution  u64       femtoseconds
    rep_period      u64       femtoseconds
    record_count    u64
    records         record_count x (pixel u16, reserved u16, timestamp u64)

Record timestamps are integer femtoseconds so that 1.5 ps tag quanta are
represented exactly.
"""

import csv
import os
import struct

import numpy as np

from .simulate import TimeTagStream

MAGIC = b"HOMTAG1\0"
HEADER = struct.Struct("<IIQQQ")
RECORD_DTYPE = np.dtype([("pixel", "<u2"), ("reserved", "<u2"), ("timestamp", "<u8")])


class TagFileError(OSError):
    pass


def _atomic_write(path, write):
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def write_stream(path, stream):
    if stream.timestamps.size and stream.timestamps[0] < 0:
        raise TagFileError("negative timestamps cannot be stored")
    rec = np.zeros(len(stream), RECORD_DTYPE)
    rec["pixel"] = stream.pixels
    rec["timestamp"] = stream.timestamps

    def write(fh):
        fh.write(MAGIC)
        fh.write(
            HEADER.pack(
                stream.pixel_count, 0, stream.tag_resolution_fs, stream.repetition_period_fs,
                len(stream),
            )
        )
        fh.write(rec.tobytes())

    _atomic_write(path, write)


def read_stream(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise TagFileError(f"{path}: not a HOMTAG1 file")
    if len(data) < 8 + HEADER.size:
        raise TagFileError(f"{path}: truncated header")
    pixel_count, _, res_fs, period_fs, count = HEADER.unpack_from(data, 8)
    body = data[8 + HEADER.size:]
    if len(body) != count * RECORD_DTYPE.itemsize:
        raise TagFileError(f"{path}: expected {count} records, found {len(body)} bytes")
    rec = np.frombuffer(body, RECORD_DTYPE)
    return TimeTagStream(
        rec["pixel"].copy(), rec["timestamp"].astype(np.int64), pixel_count, res_fs, period_fs
    )


def write_stream_csv(path, stream):
    """Interchange export: ``pixel,timestamp_ps`` with exact decimal picoseconds."""
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pixel", "timestamp_ps"])
        for p, t in zip(stream.pixels.tolist(), stream.timestamps.tolist()):
            ps, fs = divmod(t, 1000)
            w.writerow([p, f"{ps}.{fs:03d}".rstrip("0").rstrip(".")])
    os.replace(tmp, path)


def read_stream_csv(path, pixel_count, tag_resolution_fs=0, repetition_period_fs=0):
    pixels, stamps = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pixels.append(int(row["pixel"]))
            whole, _, frac = row["timestamp_ps"].partition(".")
            stamps.append(int(whole) * 1000 + int((frac + "000")[:3]))
    return TimeTagStream(np.array(pixels), np.array(stamps), pixel_count, tag_resolution_fs,
                         repetition_period_fs)
