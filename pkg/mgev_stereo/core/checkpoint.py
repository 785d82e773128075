"""Parameter checkpoint file (``MGEVCKPT1``).

Layout after the 9-byte magic, repeated until end of file::

    u64 name length | UTF-8 name | u8 dtype (0 = f32, 1 = f64) | u64 rank |
    rank × u64 dims | raw little-endian float payload

All integers are little-endian.
"""

import os
import struct
from collections import OrderedDict
from typing import Dict, Mapping

import numpy as np

MAGIC = b'MGEVCKPT1'
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype('<f4'), 1: np.dtype('<f8')}


def save_checkpoint(path: str, tensors: Mapping[str, np.ndarray]) -> None:
    """Write ``tensors`` atomically: the previous file survives until the new one is complete."""
    tmp = f"{path}.tmp"
    with open(tmp, 'wb') as f:
        f.write(MAGIC)
        for name, array in tensors.items():
            array = np.asarray(array)
            if array.dtype not in _CODES:
                raise ValueError(f"Cannot checkpoint '{name}' with dtype {array.dtype}")
            code = _CODES[array.dtype]
            encoded = name.encode('utf-8')
            f.write(struct.pack('<Q', len(encoded)))
            f.write(encoded)
            f.write(struct.pack('<BQ', code, array.ndim))
            f.write(struct.pack(f'<{array.ndim}Q', *array.shape))
            f.write(np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, 'rb') as f:
        blob = f.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic at byte 0")

    tensors = OrderedDict()
    pos = len(MAGIC)
    try:
        while pos < len(blob):
            (name_len,) = struct.unpack_from('<Q', blob, pos)
            pos += 8
            name = blob[pos:pos + name_len].decode('utf-8')
            pos += name_len
            code, rank = struct.unpack_from('<BQ', blob, pos)
            pos += 9
            if code not in _DTYPES:
                raise ValueError(f"{path}: unknown dtype code {code} at byte {pos - 9}")
            dims = struct.unpack_from(f'<{rank}Q', blob, pos)
            pos += 8 * rank
            dtype = _DTYPES[code]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(blob):
                raise ValueError(f"{path}: truncated payload for '{name}' at byte {pos}")
            array = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos)
            tensors[name] = array.reshape(dims).astype(dtype.newbyteorder('='))
            pos += nbytes
    except struct.error as e:
        raise ValueError(f"{path}: truncated record at byte {pos}: {e}") from None
    return tensors
