"""Experience documents and the metadata-partitioned vector store that holds them.

Directory layout written by :meth:`ExperienceLibrary.save`::

    docs.jsonl     one JSON document per line, in insertion order
    vectors.bin    float64 embeddings, row i belongs to line i of docs.jsonl
    manifest.json  dimension, graph parameters, embedder identity, count

The graph is rebuilt on load.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DimensionMismatch
from .embedding import DEFAULT_DIM
from .hnsw import HNSWIndex

FORMATIONS = ("HeadOn", "Parallel", "TFormation", "Converging")
LIBRARY_FORMAT = 1

_ALIASES = {f.lower(): f for f in FORMATIONS}
_ALIASES.update({"head-on": "HeadOn", "head on": "HeadOn", "t-formation": "TFormation", "t formation": "TFormation"})


def normalize_formation(name: str) -> str:
    """Map loose spellings ("head-on", "converging") onto the canonical formation names."""
    key = " ".join(str(name).strip().lower().replace("_", " ").split())
    if key in _ALIASES:
        return _ALIASES[key]
    if key.replace(" ", "").replace("-", "") in _ALIASES:
        return _ALIASES[key.replace(" ", "").replace("-", "")]
    raise ValueError(f"unknown conflict formation {name!r}; expected one of {', '.join(FORMATIONS)}")


@dataclass(frozen=True)
class CommandEntry:
    command: str
    helpful: bool
    insight: str = ""

    def to_dict(self) -> dict:
        return {"command": self.command, "helpful": self.helpful, "insight": self.insight}

    @classmethod
    def from_dict(cls, d: dict) -> "CommandEntry":
        return cls(d["command"], bool(d["helpful"]), d.get("insight", ""))


@dataclass
class ExperienceDocument:
    id: str
    conflict_description: str
    num_aircraft: int
    conflict_formation: str
    commands: list[CommandEntry] = field(default_factory=list)
    embedding: np.ndarray | None = None
    source_backend: str = ""
    created_at: str = ""

    def __post_init__(self):
        self.conflict_formation = normalize_formation(self.conflict_formation)
        self.num_aircraft = int(self.num_aircraft)
        if self.embedding is not None:
            self.embedding = np.asarray(self.embedding, dtype=float)

    def text_fields(self) -> list[str]:
        out = [self.conflict_description]
        for c in self.commands:
            out += [c.command, c.insight]
        return out

    def render(self) -> str:
        lines = [
            f"Experience document {self.id}",
            f"Conflict: {self.conflict_formation}, {self.num_aircraft} aircraft",
            f"Description: {self.conflict_description}",
        ]
        for label, flag in (("Helpful commands:", True), ("Unhelpful commands:", False)):
            entries = [c for c in self.commands if c.helpful is flag]
            if not entries:
                continue
            lines.append(label)
            for c in entries:
                lines.append(f"- {c.command}" + (f" Insight: {c.insight}" if c.insight else ""))
        if not self.commands:
            lines.append("No commands were issued.")
        return "\n".join(lines)

    def to_dict(self, with_embedding: bool = False) -> dict:
        d = {
            "id": self.id,
            "conflict_description": self.conflict_description,
            "num_aircraft": self.num_aircraft,
            "conflict_formation": self.conflict_formation,
            "commands": [c.to_dict() for c in self.commands],
            "source_backend": self.source_backend,
            "created_at": self.created_at,
        }
        if with_embedding and self.embedding is not None:
            d["embedding"] = self.embedding.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperienceDocument":
        return cls(
            id=d["id"],
            conflict_description=d["conflict_description"],
            num_aircraft=d["num_aircraft"],
            conflict_formation=d["conflict_formation"],
            commands=[CommandEntry.from_dict(c) for c in d.get("commands", [])],
            embedding=d.get("embedding"),
            source_backend=d.get("source_backend", ""),
            created_at=d.get("created_at", ""),
        )


class ExperienceLibrary:
    """Documents partitioned by ``(num_aircraft, formation)``, one cosine graph per partition.

    Writes are serialized by a lock; searches take the same lock so they never
    see a half-inserted document.
    """

    def __init__(
        self,
        embedder=None,
        dim: int | None = None,
        m: int = 16,
        ef_construction: int = 200,
        ef_search: int = 200,
        k: int = 1,
        seed: int = 0,
    ):
        self.embedder = embedder
        self.dim = dim or getattr(embedder, "dim", None) or DEFAULT_DIM
        self.graph_params = {"m": m, "ef_construction": ef_construction, "ef_search": ef_search}
        self.k = k
        self.seed = seed
        self._docs: dict[str, ExperienceDocument] = {}
        self._graphs: dict[tuple[int, str], HNSWIndex] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def get(self, doc_id: str) -> ExperienceDocument:
        return self._docs[doc_id]

    def documents(self) -> list[ExperienceDocument]:
        with self._lock:
            return list(self._docs.values())

    def partitions(self) -> dict[tuple[int, str], int]:
        with self._lock:
            return {key: len(g) for key, g in sorted(self._graphs.items())}

    def embed(self, text: str) -> np.ndarray:
        if self.embedder is None:
            raise ValueError("this library has no embedder; pass vectors explicitly")
        return np.asarray(self.embedder.embed(text), dtype=float)

    def upsert(self, doc: ExperienceDocument) -> ExperienceDocument:
        """Insert or replace ``doc`` by id. Embeds the description when no vector is attached."""
        vec = doc.embedding if doc.embedding is not None else self.embed(doc.conflict_description)
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.shape[0] != self.dim:
            raise DimensionMismatch(f"library dimension is {self.dim}, document vector has {vec.shape[0]}")
        doc.embedding = vec
        key = (doc.num_aircraft, doc.conflict_formation)
        with self._lock:
            old = self._docs.get(doc.id)
            if old is not None:
                old_key = (old.num_aircraft, old.conflict_formation)
                if old_key != key:
                    self._graphs[old_key].remove(doc.id)
            graph = self._graphs.get(key)
            if graph is None:
                graph = self._graphs[key] = HNSWIndex(self.dim, seed=self.seed, **self.graph_params)
            graph.add(doc.id, vec)
            self._docs[doc.id] = doc
        return doc

    def search_vector(
        self, vector, num_aircraft: int, formation: str, k: int | None = None, approximate: bool = True
    ) -> list[tuple[ExperienceDocument, float]]:
        """Top-``k`` documents in the exact metadata partition, best first, ties by lowest id."""
        key = (int(num_aircraft), normalize_formation(formation))
        k = k or self.k
        with self._lock:
            graph = self._graphs.get(key)
            if graph is None or len(graph) == 0:
                return []
            hits = graph.search(vector, k) if approximate else graph.brute_force(vector, k)
            return [(self._docs[i], s) for i, s in hits]

    def search(
        self, description: str, num_aircraft: int, formation: str, approximate: bool = True
    ) -> tuple[ExperienceDocument, float] | None:
        hits = self.search_vector(self.embed(description), num_aircraft, formation, 1, approximate)
        return hits[0] if hits else None

    def scan(self) -> list[str]:
        """Ids of every stored document, by brute force over the partitions."""
        with self._lock:
            return sorted(i for g in self._graphs.values() for i in g.keys())

    # persistence

    def save(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        with self._lock:
            docs = list(self._docs.values())
            with open(out / "docs.jsonl", "w") as fh:
                for d in docs:
                    fh.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")
            vecs = np.array([d.embedding for d in docs], dtype="<f8").reshape(len(docs), self.dim)
            (out / "vectors.bin").write_bytes(vecs.tobytes())
            manifest = {
                "format": LIBRARY_FORMAT,
                "dim": self.dim,
                "count": len(docs),
                "graph": self.graph_params,
                "k": self.k,
                "seed": self.seed,
                "embedder": getattr(self.embedder, "identity", None),
            }
            (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, directory, embedder=None) -> "ExperienceLibrary":
        src = Path(directory)
        manifest = json.loads((src / "manifest.json").read_text())
        g = manifest["graph"]
        lib = cls(embedder, manifest["dim"], g["m"], g["ef_construction"], g["ef_search"], manifest["k"], manifest["seed"])
        lines = [ln for ln in (src / "docs.jsonl").read_text().splitlines() if ln.strip()]
        vecs = np.frombuffer((src / "vectors.bin").read_bytes(), dtype="<f8").reshape(-1, lib.dim) if lines else []
        if len(lines) != len(vecs) or len(lines) != manifest["count"]:
            raise ValueError(f"library at {src} is inconsistent: {len(lines)} documents, {len(vecs)} vectors")
        for line, vec in zip(lines, vecs):
            doc = ExperienceDocument.from_dict(json.loads(line))
            doc.embedding = np.array(vec)
            lib.upsert(doc)
        return lib
