"""Dual index of document vectors and scenario-unit vectors.

File layout (little-endian)::

    b"SPKIDX" | u32 version | u32 header_len | header JSON
    | f32[num_docs * dim] | f32[num_units * dim] | i32[num_units] unit owners
    | u32 tables_len | tables JSON (doc_ids, unit_ids, unit_texts)
    | u32 crc32 of everything before it
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .embedding import PASSAGE, EmbeddingProviderConfig, make_provider
from .model import ComponentMode, ContractError, Corpus, PathLike, ScenarioUnit, SpikeError
from .scenarios import ExpansionUnit

logger = logging.getLogger(__name__)

MAGIC = b"SPKIDX"
FORMAT_VERSION = 1
EXPANSION_MODES = ("scenario", "pseudo_query", "summary", "none")


class IndexFormatError(SpikeError):
    pass


class IndexIntegrityError(SpikeError):
    pass


class BuildError(SpikeError):
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DualIndex:
    dim: int
    doc_ids: Tuple[str, ...]
    doc_vectors: np.ndarray
    unit_ids: Tuple[str, ...]
    unit_texts: Tuple[str, ...]
    unit_vectors: np.ndarray
    unit_owner: np.ndarray
    provider_fingerprint: str
    component_mode: ComponentMode
    expansion_mode: str

    def __post_init__(self) -> None:
        n_docs, n_units = len(self.doc_ids), len(self.unit_ids)
        if self.doc_vectors.shape != (n_docs, self.dim) or self.unit_vectors.shape != (n_units, self.dim):
            raise ContractError("vector matrix shapes disagree with id tables")
        if len(self.unit_texts) != n_units or self.unit_owner.shape != (n_units,):
            raise ContractError("unit tables have inconsistent lengths")
        if n_units and (self.unit_owner.min() < 0 or self.unit_owner.max() >= n_docs):
            raise ContractError("unit owner out of range")
        if n_units > 1 and np.any(np.diff(self.unit_owner) < 0):
            raise ContractError("units must be grouped by owner document")
        if self.expansion_mode not in EXPANSION_MODES:
            raise ContractError(f"unknown expansion mode {self.expansion_mode!r}")
        starts = np.searchsorted(self.unit_owner, np.arange(n_docs), side="left")
        ends = np.searchsorted(self.unit_owner, np.arange(n_docs), side="right")
        object.__setattr__(self, "doc_units", _frozen(np.stack([starts, ends], axis=1).astype(np.int64)))
        object.__setattr__(self, "_doc_pos", {d: i for i, d in enumerate(self.doc_ids)})
        for arr in (self.doc_vectors, self.unit_vectors, self.unit_owner):
            arr.setflags(write=False)

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def num_units(self) -> int:
        return len(self.unit_ids)

    def doc_index(self, doc_id: str) -> int:
        return self._doc_pos[doc_id]

    def units_of(self, doc_id: str) -> range:
        start, end = self.doc_units[self.doc_index(doc_id)]
        return range(int(start), int(end))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DualIndex):
            return NotImplemented
        return (self.dim == other.dim and self.doc_ids == other.doc_ids and self.unit_ids == other.unit_ids
                and self.unit_texts == other.unit_texts
                and self.provider_fingerprint == other.provider_fingerprint
                and self.component_mode == other.component_mode and self.expansion_mode == other.expansion_mode
                and np.array_equal(self.unit_owner, other.unit_owner)
                and self.doc_vectors.tobytes() == other.doc_vectors.tobytes()
                and self.unit_vectors.tobytes() == other.unit_vectors.tobytes())

    __hash__ = None  # type: ignore[assignment]


Unit = Union[ScenarioUnit, ExpansionUnit]


def build_index(corpus: Corpus, units: Sequence[Unit], provider_cfg: EmbeddingProviderConfig,
                component_mode=ComponentMode.M_E, expansion_mode: str = "scenario", provider=None) -> DualIndex:
    """Embed documents and units with one passage-role provider.

    For ``pseudo_query``/``summary`` expansion, unit texts are appended to
    their document (newline-joined) and no unit vectors are stored.
    """
    component_mode = ComponentMode.parse(component_mode)
    if expansion_mode not in EXPANSION_MODES:
        raise ContractError(f"unknown expansion mode {expansion_mode!r}")
    if expansion_mode == "none" and units:
        raise ContractError("expansion_mode 'none' takes no units")
    for u in units:
        if u.doc_id not in corpus:
            raise BuildError(f"unit references unknown document {u.doc_id!r}")
        if expansion_mode == "scenario":
            if not isinstance(u, ScenarioUnit):
                raise ContractError("scenario expansion needs ScenarioUnit inputs")
            if u.component_mode is not component_mode:
                raise ContractError(f"unit {u.unit_id} rendered as {u.component_mode.value}, "
                                    f"index mode is {component_mode.value}")
        elif expansion_mode != "none" and (not isinstance(u, ExpansionUnit) or u.kind != expansion_mode):
            raise ContractError(f"{expansion_mode} expansion needs ExpansionUnit inputs of that kind")

    provider = provider or make_provider(provider_cfg)
    doc_ids = sorted(corpus)
    doc_pos = {d: i for i, d in enumerate(doc_ids)}

    if expansion_mode in ("pseudo_query", "summary"):
        extra: Dict[str, List[str]] = {}
        for u in units:
            extra.setdefault(u.doc_id, []).append(u.text)
        doc_texts = ["\n".join([corpus[d].text] + extra.get(d, [])) for d in doc_ids]
        scenario_units: List[ScenarioUnit] = []
    else:
        doc_texts = [corpus[d].text for d in doc_ids]
        scenario_units = sorted(units, key=lambda u: (doc_pos[u.doc_id], u.unit_id))  # type: ignore[arg-type]
        seen = set()
        for u in scenario_units:
            if u.unit_id in seen:
                raise BuildError(f"duplicate unit id {u.unit_id!r}")
            seen.add(u.unit_id)

    dim = provider_cfg.dim
    doc_vectors = _embed(provider, doc_texts, dim)
    unit_vectors = _embed(provider, [u.text for u in scenario_units], dim)
    return DualIndex(
        dim=dim,
        doc_ids=tuple(doc_ids),
        doc_vectors=doc_vectors,
        unit_ids=tuple(u.unit_id for u in scenario_units),
        unit_texts=tuple(u.text for u in scenario_units),
        unit_vectors=unit_vectors,
        unit_owner=np.asarray([doc_pos[u.doc_id] for u in scenario_units], dtype=np.int32),
        provider_fingerprint=provider_cfg.fingerprint,
        component_mode=component_mode,
        expansion_mode=expansion_mode,
    )


def _embed(provider, texts: List[str], dim: int) -> np.ndarray:
    if not texts:
        return np.zeros((0, dim), dtype=np.float32)
    vectors = np.ascontiguousarray(provider.embed(texts, PASSAGE), dtype=np.float32)
    if vectors.shape != (len(texts), dim):
        raise ContractError(f"provider returned shape {vectors.shape}, expected {(len(texts), dim)}")
    return vectors


def index_to_bytes(index: DualIndex) -> bytes:
    header = json.dumps({
        "dim": index.dim,
        "num_docs": index.num_docs,
        "num_units": index.num_units,
        "component_mode": index.component_mode.value,
        "expansion_mode": index.expansion_mode,
        "provider_fingerprint": index.provider_fingerprint,
    }, sort_keys=True).encode("utf-8")
    tables = json.dumps({
        "doc_ids": list(index.doc_ids),
        "unit_ids": list(index.unit_ids),
        "unit_texts": list(index.unit_texts),
    }, ensure_ascii=False).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(header)),
        header,
        index.doc_vectors.astype("<f4").tobytes(),
        index.unit_vectors.astype("<f4").tobytes(),
        index.unit_owner.astype("<i4").tobytes(),
        struct.pack("<I", len(tables)),
        tables,
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def index_from_bytes(data: bytes) -> DualIndex:
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise IndexFormatError("not a SPIKE index file (bad magic)")
    version, header_len = struct.unpack_from("<II", data, len(MAGIC))
    if version > FORMAT_VERSION:
        raise IndexFormatError(f"index format version {version} is newer than supported version "
                               f"{FORMAT_VERSION}; upgrade the package to read it")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version}")
    if len(data) < 4:
        raise IndexIntegrityError("index file truncated")
    body, (stored_crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != stored_crc:
        raise IndexIntegrityError("index checksum mismatch (file truncated or corrupted)")
    try:
        offset = len(MAGIC) + 8
        header = json.loads(body[offset:offset + header_len])
        offset += header_len
        dim, n_docs, n_units = header["dim"], header["num_docs"], header["num_units"]
        doc_vectors = np.frombuffer(body, dtype="<f4", count=n_docs * dim, offset=offset).reshape(n_docs, dim)
        offset += 4 * n_docs * dim
        unit_vectors = np.frombuffer(body, dtype="<f4", count=n_units * dim, offset=offset).reshape(n_units, dim)
        offset += 4 * n_units * dim
        unit_owner = np.frombuffer(body, dtype="<i4", count=n_units, offset=offset)
        offset += 4 * n_units
        (tables_len,) = struct.unpack_from("<I", body, offset)
        offset += 4
        tables = json.loads(body[offset:offset + tables_len])
        if offset + tables_len != len(body):
            raise IndexIntegrityError("trailing bytes after id tables")
    except (KeyError, ValueError, struct.error) as exc:
        raise IndexIntegrityError(f"index payload is malformed: {exc}") from exc
    return DualIndex(
        dim=dim,
        doc_ids=tuple(tables["doc_ids"]),
        doc_vectors=doc_vectors.astype(np.float32, copy=False),
        unit_ids=tuple(tables["unit_ids"]),
        unit_texts=tuple(tables["unit_texts"]),
        unit_vectors=unit_vectors.astype(np.float32, copy=False),
        unit_owner=unit_owner.astype(np.int32, copy=False),
        provider_fingerprint=header["provider_fingerprint"],
        component_mode=ComponentMode.parse(header["component_mode"]),
        expansion_mode=header["expansion_mode"],
    )


def save_index(index: DualIndex, path: PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(index_to_bytes(index))


def load_index(path: PathLike) -> DualIndex:
    with open(path, "rb") as fh:
        return index_from_bytes(fh.read())
