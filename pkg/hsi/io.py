"""
Portable cube format.

A JSON header (height, width, bands, dtype, order, name) describes a
little-endian payload laid out row-major with bands innermost. Scenes are
stored either as a ``<stem>.json`` + ``<stem>.raw`` pair, or as a single file
holding an 8-byte little-endian header length, the header, then the payload.
Label rasters use the same scheme with ``dtype="u16"`` and one band.

Vendor MATLAB scenes are converted once with ``scripts/convert_mat.md``.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from core.exceptions import DataFormatError, LabelError
from hsi.models import HsiCube, LabelField

logger = logging.getLogger(__name__)

ORDER = 'row-major band-innermost'
DTYPES = {'f32': np.dtype('<f4'), 'u16': np.dtype('<u2')}
_LENGTH = struct.Struct('<Q')


def _read(path):
    """Return (header, payload bytes) for either storage variant."""
    path = Path(path)
    if path.suffix == '.raw':
        path = path.with_suffix('.json')
    if not path.exists():
        raise DataFormatError(f"file not found: {path}")

    if path.suffix == '.json':
        try:
            header = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"unreadable header {path}: {exc}") from exc
        payload_path = path.with_suffix('.raw')
        if not payload_path.exists():
            raise DataFormatError(f"payload not found: {payload_path}")
        return header, payload_path.read_bytes()

    blob = path.read_bytes()
    if len(blob) < _LENGTH.size:
        raise DataFormatError(f"{path} is too short to hold a header")
    (length,) = _LENGTH.unpack_from(blob)
    start = _LENGTH.size + length
    if start > len(blob):
        raise DataFormatError(f"{path}: header length {length} exceeds file size")
    try:
        header = json.loads(blob[_LENGTH.size:start].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable header in {path}: {exc}") from exc
    return header, blob[start:]


def _decode(header, payload, expected_dtype, source):
    missing = {'height', 'width', 'bands', 'dtype'} - header.keys()
    if missing:
        raise DataFormatError(f"{source}: header lacks {sorted(missing)}")
    if header['dtype'] != expected_dtype:
        raise DataFormatError(f"{source}: expected dtype {expected_dtype}, header says {header['dtype']}")
    if header.get('order', ORDER) != ORDER:
        raise DataFormatError(f"{source}: unsupported order {header['order']!r}")

    shape = (int(header['height']), int(header['width']), int(header['bands']))
    dtype = DTYPES[expected_dtype]
    expected = shape[0] * shape[1] * shape[2] * dtype.itemsize
    if len(payload) != expected:
        raise DataFormatError(
            f"{source}: payload has {len(payload)} bytes, header {shape} needs {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape)


def _write(header, array, path, single_file):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(array).tobytes()
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')
    if single_file:
        path.write_bytes(_LENGTH.pack(len(encoded)) + encoded + payload)
        return path
    header_path = path.with_suffix('.json')
    header_path.write_bytes(encoded)
    header_path.with_suffix('.raw').write_bytes(payload)
    return header_path


def load_cube(path) -> HsiCube:
    header, payload = _read(path)
    data = _decode(header, payload, 'f32', path)
    cube = HsiCube(data.astype(np.float32), name=header.get('name', Path(path).stem))
    logger.info("Loaded cube %s: %dx%dx%d", cube.name, cube.height, cube.width, cube.bands)
    return cube


def save_cube(cube: HsiCube, path, single_file=False):
    header = {
        'height': cube.height,
        'width': cube.width,
        'bands': cube.bands,
        'dtype': 'f32',
        'order': ORDER,
        'name': cube.name,
    }
    return _write(header, cube.data.astype(DTYPES['f32']), path, single_file)


def load_labels(path) -> LabelField:
    header, payload = _read(path)
    data = _decode(header, payload, 'u16', path)
    if data.shape[2] != 1:
        raise DataFormatError(f"{path}: label rasters have one band, header says {data.shape[2]}")
    return LabelField(data[:, :, 0].astype(np.int64), class_names=list(header.get('class_names', [])))


def save_labels(labels: LabelField, path, name='', single_file=False):
    height, width = labels.shape
    header = {
        'height': height,
        'width': width,
        'bands': 1,
        'dtype': 'u16',
        'order': ORDER,
        'name': name,
        'class_names': list(labels.class_names),
    }
    return _write(header, labels.labels.astype(DTYPES['u16']).reshape(height, width, 1), path, single_file)


def load_split_file(path):
    """
    Read train coordinates per class: ``{"train": {"1": [[r, c], ...], ...}}``.
    Returns ``{class_id: [(r, c), ...]}``.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"split file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"unreadable split file {path}: {exc}") from exc
    train = document.get('train', document)
    try:
        return {int(cls): [tuple(map(int, rc)) for rc in coords] for cls, coords in train.items()}
    except (TypeError, ValueError) as exc:
        raise LabelError(f"malformed split file {path}: {exc}") from exc


def save_split_file(train_by_class, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'train': {str(cls): [list(map(int, rc)) for rc in coords]
                          for cls, coords in sorted(train_by_class.items())}}
    path.write_text(json.dumps(document))
    return path
