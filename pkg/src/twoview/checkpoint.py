"""CSCK checkpoint files.

Layout (all integers little-endian)::

    b"CSCK"            magic
    u8                 version (1)
    u8                 kind: 0 = common, 1 = individual
    u32 k, u32 q
    u32                link: CRC32 of the common checkpoint an individual
                       checkpoint was trained against (0 for common)
    u32                number of networks
    per network:
        u8             whiten flag
        f64            running-stat momentum
        u32 L          number of layer sizes, then L x u32 sizes
    f64 payload        per network, in order: W0, b0, W1, b1, ...,
                       then running mean and running variance if whitened
    u32                CRC32 of every preceding byte

Networks are stored as encoder1, encoder2 (common) or encoder1, encoder2,
decoder1, decoder2 (individual).
"""
import struct
import zlib

import numpy as np

from twoview.common import CommonComponent
from twoview.individual import IndividualComponent
from twoview.nn import Mlp

MAGIC = b"CSCK"
VERSION = 1
KIND_COMMON = 0
KIND_INDIVIDUAL = 1


class CheckpointError(ValueError):
    pass


def _nets(component):
    if isinstance(component, CommonComponent):
        return KIND_COMMON, [component.encoder1, component.encoder2]
    if isinstance(component, IndividualComponent):
        return KIND_INDIVIDUAL, [*component.encoders, *component.decoders]
    raise TypeError(f"cannot checkpoint {type(component).__name__}")


def to_bytes(component, link=0):
    kind, nets = _nets(component)
    if kind == KIND_COMMON:
        k = q = component.k
    else:
        q = component.q
        k = component.decoders[0].in_dim - q
    out = bytearray(MAGIC)
    out += struct.pack("<BBIIII", VERSION, kind, k, q, link, len(nets))
    for net in nets:
        out += struct.pack("<BdI", int(net.whiten), net.momentum, len(net.sizes))
        out += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    for net in nets:
        for arr in net.state_arrays():
            out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def _header(blob):
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointError("not a CSCK checkpoint (bad magic)")
    if len(blob) < 22 + 4:
        raise CheckpointError("truncated checkpoint")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise CheckpointError("checkpoint CRC mismatch (corrupt file)")
    version, kind, k, q, link, nnets = struct.unpack("<BBIIII", blob[4:22])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if kind not in (KIND_COMMON, KIND_INDIVIDUAL):
        raise CheckpointError(f"unknown component kind {kind}")
    return kind, k, q, link, nnets


def from_bytes(blob, common=None):
    """Rebuild a component. Individual checkpoints attach to ``common`` if given."""
    blob = bytes(blob)
    kind, k, q, link, nnets = _header(blob)
    pos = 22
    specs = []
    for _ in range(nnets):
        if pos + 13 > len(blob) - 4:
            raise CheckpointError("truncated network table")
        whiten, momentum, L = struct.unpack("<BdI", blob[pos:pos + 13])
        pos += 13
        sizes = list(struct.unpack(f"<{L}I", blob[pos:pos + 4 * L]))
        pos += 4 * L
        specs.append((sizes, bool(whiten), momentum))
    nets = []
    for sizes, whiten, momentum in specs:
        net = Mlp(sizes, whiten, momentum, rng=0)
        arrs = []
        for a in net.state_arrays():
            nbytes = 8 * a.size
            if pos + nbytes > len(blob) - 4:
                raise CheckpointError("payload shorter than declared sizes")
            arrs.append(np.frombuffer(blob, dtype="<f8", count=a.size, offset=pos)
                        .reshape(a.shape).astype(np.float64))
            pos += nbytes
        net.load_state_arrays(arrs)
        nets.append(net)
    if pos != len(blob) - 4:
        raise CheckpointError("payload longer than declared sizes")
    if kind == KIND_COMMON:
        if nnets != 2:
            raise CheckpointError("common checkpoint must hold 2 networks")
        comp = CommonComponent(*nets)
        if comp.k != k:
            raise CheckpointError("declared k does not match the encoders")
        return comp
    if nnets != 4:
        raise CheckpointError("individual checkpoint must hold 4 networks")
    comp = IndividualComponent(*nets)
    if comp.q != q or nets[2].in_dim != k + q:
        raise CheckpointError("declared k/q do not match the networks")
    comp.link = link
    if common is not None:
        if link and link != crc_of(common):
            raise CheckpointError("individual checkpoint was trained against a different common component")
        comp.attach(common)
    return comp


def crc_of(common):
    return zlib.crc32(to_bytes(common)[:-4])


def save(path, component, link=0):
    blob = to_bytes(component, link)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def load(path, common=None):
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), common)


def peek_kind(path):
    with open(path, "rb") as fh:
        return _header(fh.read())[0]
