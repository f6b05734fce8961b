"""Deterministic zip containers of JSON metadata plus numpy arrays.

Member timestamps are fixed, so identical content always produces identical
bytes, and the sha256 of a file identifies its content.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile

import numpy as np

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class StoreError(Exception):
    pass


def _member(zf, name, payload, compress):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED if compress else zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def pack(meta: dict, arrays: dict) -> bytes:
    meta = dict(meta, arrays=sorted(arrays))
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode(), True)
        for name in sorted(arrays):
            member = io.BytesIO()
            np.save(member, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _member(zf, f"{name}.npy", member.getvalue(), False)
    return buf.getvalue()


def unpack(data: bytes):
    """Inverse of :func:`pack`; raises ``StoreError`` on any damage."""
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            if zf.testzip() is not None:
                raise StoreError("checksum failure")
            meta = json.loads(zf.read("meta.json"))
            arrays = {name: np.load(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
                      for name in meta["arrays"]}
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, EOFError) as exc:
        raise StoreError(str(exc)) from exc
    return meta, arrays


def write(path, meta, arrays) -> str:
    data = pack(meta, arrays)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def read(path):
    with open(path, "rb") as fh:
        return unpack(fh.read())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
