"""Binary ``.mrf`` function files.

Layout (little endian): ``b"MRF1"``, then u32 domain tag, resolution,
channels, basis tag, then the float64 coefficients.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .spaces import MultiResFunction, cells

MAGIC = b"MRF1"
DOMAIN_TAGS = {"interval": 0, "square": 1, "rectangle": 2, "triangle": 3}
BASIS_TAGS = {"pixel": 0, "haar": 1, "h01": 2}
_HEADER = struct.Struct("<4sIIII")


def dumps(f):
    head = _HEADER.pack(MAGIC, DOMAIN_TAGS[f.domain], f.resolution, f.channels, BASIS_TAGS[f.basis])
    return head + f.coeffs.astype("<f8").tobytes()


def loads(buf):
    if len(buf) < _HEADER.size:
        raise FormatError("mrf: truncated header")
    magic, dom, res, ch, basis = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"mrf: bad magic {magic!r}")
    domains = {v: k for k, v in DOMAIN_TAGS.items()}
    bases = {v: k for k, v in BASIS_TAGS.items()}
    if dom not in domains or basis not in bases:
        raise FormatError(f"mrf: unknown domain tag {dom} or basis tag {basis}")
    if res > 24 or ch == 0:
        raise FormatError(f"mrf: implausible resolution {res} / channels {ch}")
    n = cells(domains[dom], res) * ch
    body = buf[_HEADER.size :]
    if len(body) != 8 * n:
        raise FormatError(f"mrf: expected {n} coefficients, found {len(body) / 8:g}")
    coeffs = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return MultiResFunction(domains[dom], res, coeffs, channels=ch, basis=bases[basis])


def write_mrf(path, f):
    with open(path, "wb") as fh:
        fh.write(dumps(f))


def read_mrf(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
