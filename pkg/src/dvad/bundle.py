"""Versioned binary serialization of a trained model bundle.

Layout: magic ``DVAD``, a version integer, then length-prefixed named
sections, each protected by a CRC32. All numeric arrays are stored as
little-endian float64 with explicit dimensions, so a bundle is fully
self-describing and loads without side-channel configuration.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib

import numpy as np

from .config import PipelineConfig, validate_config, serialize_config
from .diffusion import DiffusionEmbedding, NystromReference
from .errormap import SvmModel
from .errors import BundleError
from .features import Standardizer
from .network import EncoderDecoder, LayerParams
from .pipeline import ModelBundle

MAGIC = b"DVAD"
FORMAT_VERSION = 1

_SECTIONS = ("config", "standardizer", "model0", "model1", "svm_realtime",
             "svm_batch", "embedding0", "embedding1", "metadata")


def _pack_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    buf.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<Q", dim))
    buf.write(arr.tobytes())


def _unpack_array(buf: io.BytesIO) -> np.ndarray:
    (ndim,) = struct.unpack("<I", buf.read(4))
    shape = tuple(struct.unpack("<Q", buf.read(8))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf.read(8 * count), dtype="<f8")
    return data.reshape(shape).copy()


def _pack_int(buf, value):
    buf.write(struct.pack("<q", int(value)))


def _unpack_int(buf):
    return struct.unpack("<q", buf.read(8))[0]


def _pack_text(buf, text: str):
    raw = text.encode("utf-8")
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)


def _unpack_text(buf) -> str:
    (length,) = struct.unpack("<Q", buf.read(8))
    return buf.read(length).decode("utf-8")


def _encode_standardizer(s: Standardizer) -> bytes:
    buf = io.BytesIO()
    for arr in (s.mu, s.sigma, s.range_lo, s.range_hi,
                s.degenerate.astype(np.float64)):
        _pack_array(buf, arr)
    return buf.getvalue()


def _decode_standardizer(raw: bytes) -> Standardizer:
    buf = io.BytesIO(raw)
    mu, sigma, lo, hi, degenerate = (_unpack_array(buf) for _ in range(5))
    return Standardizer(mu=mu, sigma=sigma, range_lo=lo, range_hi=hi,
                        degenerate=degenerate.astype(bool))


def _encode_model(model: EncoderDecoder) -> bytes:
    buf = io.BytesIO()
    _pack_int(buf, model.hypothesis)
    for stack in (model.encoder, model.decoder):
        _pack_int(buf, len(stack))
        for layer in stack:
            _pack_array(buf, layer.weights)
            _pack_array(buf, layer.biases)
    return buf.getvalue()


def _decode_model(raw: bytes) -> EncoderDecoder:
    buf = io.BytesIO(raw)
    hypothesis = _unpack_int(buf)
    stacks = []
    for _ in range(2):
        n = _unpack_int(buf)
        stacks.append([LayerParams(_unpack_array(buf), _unpack_array(buf))
                       for _ in range(n)])
    return EncoderDecoder(encoder=stacks[0], decoder=stacks[1],
                          hypothesis=hypothesis)


def _encode_svm(svm: SvmModel) -> bytes:
    buf = io.BytesIO()
    _pack_text(buf, svm.mode)
    _pack_array(buf, svm.weights)
    _pack_array(buf, np.array([svm.bias]))
    return buf.getvalue()


def _decode_svm(raw: bytes) -> SvmModel:
    buf = io.BytesIO(raw)
    mode = _unpack_text(buf)
    weights = _unpack_array(buf)
    bias = float(_unpack_array(buf)[0])
    return SvmModel(weights=weights, bias=bias, mode=mode)


def _encode_embedding(embedding: DiffusionEmbedding) -> bytes:
    buf = io.BytesIO()
    ref = embedding.reference
    _pack_int(buf, ref.k)
    for arr in (embedding.eigenvalues, embedding.basis, embedding.coords,
                embedding.softmax_coords, ref.points, ref.local_scales,
                ref.degrees_stage1):
        _pack_array(buf, arr)
    return buf.getvalue()


def _decode_embedding(raw: bytes) -> DiffusionEmbedding:
    buf = io.BytesIO(raw)
    k = _unpack_int(buf)
    (eigenvalues, basis, coords, softmax, points, scales,
     degrees) = (_unpack_array(buf) for _ in range(7))
    return DiffusionEmbedding(
        eigenvalues=eigenvalues, basis=basis, coords=coords,
        softmax_coords=softmax,
        reference=NystromReference(points=points, local_scales=scales,
                                   degrees_stage1=degrees, k=k))


def save_bundle(bundle: ModelBundle, path) -> None:
    """Write the bundle atomically (temp file, then rename)."""
    sections = {
        "config": serialize_config(bundle.config).encode("utf-8"),
        "standardizer": _encode_standardizer(bundle.standardizer),
        "model0": _encode_model(bundle.model0),
        "model1": _encode_model(bundle.model1),
        "svm_realtime": _encode_svm(bundle.svm_realtime),
        "svm_batch": _encode_svm(bundle.svm_batch),
        "embedding0": _encode_embedding(bundle.embedding0),
        "embedding1": _encode_embedding(bundle.embedding1),
        "metadata": json.dumps(bundle.metadata, sort_keys=True).encode("utf-8"),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(sections)))
    for name in _SECTIONS:
        payload = sections[name]
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
        buf.write(payload)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_bundle(path) -> ModelBundle:
    """Read and validate a bundle: magic, version, section checksums."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise BundleError(f"cannot read bundle {path!r}: {exc}") from exc
    buf = io.BytesIO(raw)
    if buf.read(4) != MAGIC:
        raise BundleError(f"not a bundle: {path}")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != FORMAT_VERSION:
        raise BundleError(
            f"unsupported bundle version {version} (supported: {FORMAT_VERSION})")
    (n_sections,) = struct.unpack("<I", buf.read(4))
    sections = {}
    for _ in range(n_sections):
        (name_len,) = struct.unpack("<I", buf.read(4))
        name = buf.read(name_len).decode("utf-8")
        (length,) = struct.unpack("<Q", buf.read(8))
        (crc,) = struct.unpack("<I", buf.read(4))
        payload = buf.read(length)
        if len(payload) != length:
            raise BundleError(f"truncated section {name!r}")
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            raise BundleError(f"checksum failure in section {name!r}")
        sections[name] = payload
    missing = [name for name in _SECTIONS if name not in sections]
    if missing:
        raise BundleError(f"bundle missing sections {missing}")
    config = validate_config(sections["config"].decode("utf-8"))
    return ModelBundle(
        standardizer=_decode_standardizer(sections["standardizer"]),
        model0=_decode_model(sections["model0"]),
        model1=_decode_model(sections["model1"]),
        svm_realtime=_decode_svm(sections["svm_realtime"]),
        svm_batch=_decode_svm(sections["svm_batch"]),
        embedding0=_decode_embedding(sections["embedding0"]),
        embedding1=_decode_embedding(sections["embedding1"]),
        config=config,
        metadata=json.loads(sections["metadata"].decode("utf-8")),
        format_version=version,
    )
