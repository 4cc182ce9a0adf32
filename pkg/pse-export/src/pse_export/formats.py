"""Writer for the engine's embedding interchange file.

Layout (little-endian), shared contract with the engine's provider:

    header:  magic "SCEM", version u32, dim u32, count u64
    record:  id_len u32, id bytes (UTF-8), n_sentences u32,
             n_sentences * dim float32, row-major
"""

from __future__ import annotations

import struct
from typing import Iterable, Tuple

import numpy as np

MAGIC = b"SCEM"
VERSION = 1

_HEADER = struct.Struct("<4sIIQ")
_U32 = struct.Struct("<I")


class FormatError(ValueError):
    pass


def write_embedding_file(path, records: Iterable[Tuple[str, np.ndarray]], dim: int) -> int:
    payload = bytearray()
    count = 0
    for article_id, rows in records:
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[1] != dim or rows.shape[0] < 1:
            raise FormatError(f"record {article_id!r}: expected n x {dim} rows, got {rows.shape}")
        if not np.isfinite(rows).all():
            raise FormatError(f"record {article_id!r} contains non-finite values")
        ident = article_id.encode("utf-8")
        payload += _U32.pack(len(ident))
        payload += ident
        payload += _U32.pack(rows.shape[0])
        payload += rows.astype("<f4").tobytes(order="C")
        count += 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dim, count))
        fh.write(bytes(payload))
    return count
