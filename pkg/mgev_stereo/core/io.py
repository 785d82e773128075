"""Input/output functions: PFM/PPM/PGM files, dataset manifests, CSV logs and NetCDF dumps."""

import json
import logging
import os
from datetime import datetime
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import xarray as xr

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.jsonl'
MANIFEST_COLUMNS = ['left', 'right', 'gt', 'mask', 'd_max', 'seed']


# Header parsing ----------------------------------------------------------------

def _read_tokens(blob: bytes, count: int, path: str, pos: int = 0) -> Tuple[List[Tuple[int, bytes]], int]:
    """Read ``count`` whitespace-separated header tokens (skipping ``#`` comments).

    Returns the tokens with their byte offsets and the offset of the payload,
    which starts after the single whitespace byte following the last token.
    """
    tokens = []
    n = len(blob)
    while len(tokens) < count:
        while pos < n and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < n and blob[pos:pos + 1] == b'#':
            while pos < n and blob[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        if pos >= n:
            raise ValueError(f"{path}: header ends early at byte {pos}")
        start = pos
        while pos < n and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append((start, blob[start:pos]))
    if pos >= n:
        raise ValueError(f"{path}: no payload after header at byte {pos}")
    return tokens, pos + 1


def _positive_int(token: Tuple[int, bytes], what: str, path: str) -> int:
    offset, raw = token
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{path}: invalid {what} {raw!r} at byte {offset}") from None
    if value < 1:
        raise ValueError(f"{path}: {what} must be positive, got {value} at byte {offset}")
    return value


def _read_blob(path: str) -> bytes:
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, 'rb') as f:
        return f.read()


# PFM ---------------------------------------------------------------------------

def write_pfm(path: str, disparity: np.ndarray) -> None:
    """Single-channel little-endian PFM, rows stored bottom to top."""
    disparity = np.asarray(disparity)
    if disparity.ndim != 2:
        raise ValueError(f"write_pfm expects an H×W map, got shape {disparity.shape}")
    height, width = disparity.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode('ascii')
    payload = np.ascontiguousarray(disparity[::-1], dtype='<f4').tobytes()
    with open(path, 'wb') as f:
        f.write(header)
        f.write(payload)


def read_pfm(path: str) -> np.ndarray:
    """Read a single-channel PFM of either endianness into a float32 H×W array."""
    blob = _read_blob(path)
    tokens, pos = _read_tokens(blob, 4, path)
    if tokens[0][1] != b'Pf':
        raise ValueError(f"{path}: bad PFM magic {tokens[0][1]!r} at byte {tokens[0][0]}")
    width = _positive_int(tokens[1], 'width', path)
    height = _positive_int(tokens[2], 'height', path)
    offset, raw = tokens[3]
    try:
        scale = float(raw)
    except ValueError:
        raise ValueError(f"{path}: invalid PFM scale {raw!r} at byte {offset}") from None
    if scale == 0:
        raise ValueError(f"{path}: PFM scale must be nonzero at byte {offset}")
    dtype = np.dtype('<f4') if scale < 0 else np.dtype('>f4')
    expected = width * height * 4
    if len(blob) - pos < expected:
        raise ValueError(f"{path}: payload at byte {pos} holds {len(blob) - pos} bytes, need {expected}")
    data = np.frombuffer(blob, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return data[::-1].astype(np.float32)


# PPM / PGM ---------------------------------------------------------------------

def to_unit(image: np.ndarray) -> np.ndarray:
    """Quantise to 8 bits and back: the exact values a PPM roundtrip produces."""
    q = np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    return q.astype(np.float32) / np.float32(255.0)


def _to_bytes(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path: str, image: np.ndarray) -> None:
    """Binary P6 from a 3×H×W image in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"write_ppm expects a 3×H×W image, got shape {image.shape}")
    _, height, width = image.shape
    with open(path, 'wb') as f:
        f.write(f"P6\n{width} {height}\n255\n".encode('ascii'))
        f.write(np.ascontiguousarray(_to_bytes(image).transpose(1, 2, 0)).tobytes())


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary P5 from an H×W image in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"write_pgm expects an H×W image, got shape {image.shape}")
    height, width = image.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n255\n".encode('ascii'))
        f.write(_to_bytes(image).tobytes())


def _read_netpbm(path: str) -> np.ndarray:
    blob = _read_blob(path)
    tokens, pos = _read_tokens(blob, 4, path)
    magic = tokens[0][1]
    if magic not in (b'P5', b'P6'):
        raise ValueError(f"{path}: bad PPM/PGM magic {magic!r} at byte {tokens[0][0]}")
    width = _positive_int(tokens[1], 'width', path)
    height = _positive_int(tokens[2], 'height', path)
    maxval = _positive_int(tokens[3], 'maxval', path)
    if maxval != 255:
        raise ValueError(f"{path}: maxval must be 255, got {maxval} at byte {tokens[3][0]}")
    channels = 3 if magic == b'P6' else 1
    expected = width * height * channels
    if len(blob) - pos < expected:
        raise ValueError(f"{path}: payload at byte {pos} holds {len(blob) - pos} bytes, need {expected}")
    data = np.frombuffer(blob, dtype=np.uint8, count=expected, offset=pos)
    if channels == 3:
        data = data.reshape(height, width, 3).transpose(2, 0, 1)
    else:
        data = data.reshape(height, width)
    return data.astype(np.float32) / np.float32(255.0)


def read_pgm(path: str) -> np.ndarray:
    """H×W float32 in [0, 1]."""
    data = _read_netpbm(path)
    if data.ndim != 2:
        raise ValueError(f"{path}: expected a P5 grayscale file")
    return data


def read_ppm(path: str) -> np.ndarray:
    """3×H×W float32 in [0, 1]; grayscale P5 files are replicated to three channels."""
    data = _read_netpbm(path)
    if data.ndim == 2:
        data = np.repeat(data[None], 3, axis=0)
    return data


# Dataset manifest --------------------------------------------------------------

def write_manifest(data_dir: str, records: Sequence[Mapping]) -> str:
    path = os.path.join(data_dir, MANIFEST)
    frame = pd.DataFrame(list(records), columns=MANIFEST_COLUMNS)
    frame.to_json(path, orient='records', lines=True)
    logger.info(f"Saved manifest: {MANIFEST} ({len(frame)} samples)")
    return path


def read_manifest(data_dir: str) -> pd.DataFrame:
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Dataset manifest not found: {path}")
    records = []
    with open(path, 'r') as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_num}: invalid JSON ({e.msg})") from None
    frame = pd.DataFrame(records)
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing or frame.empty:
        raise ValueError(f"{path}: manifest lacks columns {missing} or holds no samples")
    return frame


def load_sample(data_dir: str, record: Mapping) -> Dict[str, np.ndarray]:
    """Left/right 3×H×W images, gt H×W disparity and boolean visibility mask."""
    def resolve(key):
        return os.path.join(data_dir, record[key])
    return {
        'left': read_ppm(resolve('left')),
        'right': read_ppm(resolve('right')),
        'gt': read_pfm(resolve('gt')),
        'mask': read_pgm(resolve('mask')) > 0.5,
    }


# Logs and dumps ----------------------------------------------------------------

def append_csv_row(path: str, row: Mapping) -> None:
    frame = pd.DataFrame([dict(row)])
    frame.to_csv(path, mode='a', header=not os.path.exists(path), index=False)


def save_table(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False)
    logger.info(f"Saved table: {os.path.basename(path)}")


def _encoding(ds: xr.Dataset) -> Dict[str, Dict]:
    return {var: {'zlib': True, 'complevel': 4} for var in ds.data_vars}


def save_iterations_netcdf(path: str, iterations: Sequence[np.ndarray], attrs: Optional[Mapping] = None) -> None:
    """Per-iteration full-resolution disparities as an (iteration, y, x) cube."""
    stack = np.stack([np.asarray(d, dtype=np.float32) for d in iterations])
    ds = xr.Dataset(
        {'disparity': (['iteration', 'y', 'x'], stack)},
        coords={'iteration': np.arange(1, len(stack) + 1)},
        attrs={**dict(attrs or {}), 'created': datetime.now().isoformat()},
    )
    ds.to_netcdf(path, encoding=_encoding(ds))
    logger.info(f"Saved iterations: {os.path.basename(path)}")


def save_volumes_netcdf(path: str, volumes: Mapping[str, np.ndarray], attrs: Optional[Mapping] = None) -> None:
    """Cost volumes (group, bin, y, x) and geometry volumes (bin, y, x) of the first sample."""
    data_vars = {}
    for name, array in volumes.items():
        array = np.asarray(array, dtype=np.float32)
        dims = [f'{name}_bin', 'y', 'x']
        if array.ndim == 4:
            dims = [f'{name}_group'] + dims
        data_vars[name] = (dims, array)
    ds = xr.Dataset(data_vars, attrs={**dict(attrs or {}), 'created': datetime.now().isoformat()})
    ds.to_netcdf(path, encoding=_encoding(ds))
    logger.info(f"Saved volumes: {os.path.basename(path)}")
