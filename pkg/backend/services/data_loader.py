"""
Binary container for IQ datasets (little-endian):

    "RFIQ" | version u16 | num_classes u32 | signal_len u32 | record_count u64
    | per class: name_len u8 + UTF-8 name
    | per record: label u16, then signal_len x (I f32, Q f32)
"""
import logging
import os
import struct
from typing import List

import numpy as np

from core.errors import FormatError, InputError
from services.signal_data import SIGNAL_LEN, Dataset, SignalRecord

logger = logging.getLogger(__name__)

MAGIC = b"RFIQ"
VERSION = 1
_HEADER = struct.Struct("<4sHIIQ")
RECORD_DTYPE = np.dtype([("label", "<u2"), ("iq", "<f4", (SIGNAL_LEN, 2))])


def _encode_names(names: List[str]) -> bytes:
    out = bytearray()
    for name in names:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise InputError(f"Class name longer than 255 bytes: {name[:32]}...")
        out += struct.pack("<B", len(raw)) + raw
    return bytes(out)


def dataset_to_bytes(dataset: Dataset) -> bytes:
    if dataset.num_classes > 0xFFFF:
        raise InputError("Labels are stored as u16; too many classes")
    header = _HEADER.pack(MAGIC, VERSION, dataset.num_classes, SIGNAL_LEN, len(dataset))
    records = np.empty(len(dataset), dtype=RECORD_DTYPE)
    records["label"] = dataset.labels
    records["iq"] = dataset.iq
    return header + _encode_names(dataset.class_names) + records.tobytes()


def dataset_from_bytes(blob: bytes) -> Dataset:
    if len(blob) < _HEADER.size:
        raise FormatError("Truncated dataset header", offset=len(blob))
    magic, version, num_classes, signal_len, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"Bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"Unsupported dataset version {version}", offset=4)
    if signal_len != SIGNAL_LEN:
        raise FormatError(f"Unsupported signal length {signal_len}", offset=10)

    offset = _HEADER.size
    names = []
    for _ in range(num_classes):
        if offset >= len(blob):
            raise FormatError("Truncated class-name table", offset=offset)
        size = blob[offset]
        offset += 1
        if offset + size > len(blob):
            raise FormatError("Truncated class name", offset=offset)
        try:
            names.append(blob[offset:offset + size].decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError("Class name is not valid UTF-8", offset=offset)
        offset += size

    expected = offset + count * RECORD_DTYPE.itemsize
    if len(blob) < expected:
        whole = (len(blob) - offset) // RECORD_DTYPE.itemsize
        raise FormatError(f"Truncated record payload: {count} records declared, {whole} complete",
                          offset=offset + whole * RECORD_DTYPE.itemsize)
    if len(blob) > expected:
        raise FormatError("Trailing bytes after the last record", offset=expected)

    records = np.frombuffer(blob, dtype=RECORD_DTYPE, count=count, offset=offset)
    labels = records["label"].astype(np.int64)
    if count and labels.max() >= num_classes:
        bad = int(np.argmax(labels >= num_classes))
        raise FormatError(f"Label {labels[bad]} out of range for {num_classes} classes",
                          offset=offset + bad * RECORD_DTYPE.itemsize)
    return Dataset(records["iq"].copy(), labels, num_classes, class_names=names)


def save_dataset(dataset: Dataset, path: str) -> str:
    blob = dataset_to_bytes(dataset)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    with open(path, "wb") as f:
        f.write(blob)
    logger.info(f"Dataset saved: {path} ({len(dataset)} records, {len(blob)} bytes)")
    return path


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    dataset = dataset_from_bytes(blob)
    logger.info(f"Dataset loaded: {path} ({len(dataset)} records, {dataset.num_classes} classes)")
    return dataset


def load_capture(path: str) -> SignalRecord:
    """A single-capture file is a dataset container holding exactly one record."""
    dataset = load_dataset(path)
    if len(dataset) != 1:
        raise FormatError(f"Capture file must hold exactly one record, found {len(dataset)}", offset=_HEADER.size - 8)
    return dataset[0]
