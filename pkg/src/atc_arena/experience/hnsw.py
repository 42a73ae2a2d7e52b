"""Hierarchical navigable small-world graph for cosine nearest-neighbour search.

Vectors are stored unit-normalized so cosine similarity is a dot product.
Construction follows the usual layered scheme: each node draws a top
layer from a geometric distribution, greedy descent finds an entry point,
and the neighbour-selection heuristic keeps links that add coverage.
"""

from __future__ import annotations

import heapq
import math
import random

import numpy as np

from ..errors import DimensionMismatch


class HNSWIndex:
    def __init__(self, dim: int, m: int = 16, ef_construction: int = 200, ef_search: int = 200, seed: int = 0):
        if dim <= 0 or m < 2:
            raise ValueError("dim must be positive and m at least 2")
        self.dim = dim
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self._ml = 1.0 / math.log(m)
        self._rng = random.Random(seed)
        self._vecs = np.zeros((16, dim))
        self._keys: list = []
        self._node_of: dict = {}
        self._links: list[list[list[int]]] = []
        self._deleted: set[int] = set()
        self._entry: int | None = None
        self._top = -1

    def __len__(self) -> int:
        return len(self._node_of)

    def __contains__(self, key) -> bool:
        return key in self._node_of

    def keys(self) -> list:
        return sorted(self._node_of)

    def vector(self, key) -> np.ndarray:
        return self._vecs[self._node_of[key]].copy()

    def _check(self, vector) -> np.ndarray:
        v = np.asarray(vector, dtype=float).ravel()
        if v.shape[0] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {v.shape[0]}")
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("vector must be finite and non-zero")
        return v / norm

    def _sims(self, q: np.ndarray, nodes: list[int]) -> np.ndarray:
        return self._vecs[nodes] @ q

    def _search_layer(self, q, entry: list[int], ef: int, level: int) -> list[tuple[float, int]]:
        sims = self._sims(q, entry)
        visited = set(entry)
        candidates = [(-s, n) for s, n in zip(sims, entry)]
        heapq.heapify(candidates)
        results = [(s, n) for s, n in zip(sims, entry)]
        heapq.heapify(results)
        while len(results) > ef:
            heapq.heappop(results)
        while candidates:
            neg, c = heapq.heappop(candidates)
            if -neg < results[0][0] and len(results) >= ef:
                break
            fresh = [n for n in self._links[c][level] if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for s, n in zip(self._sims(q, fresh), fresh):
                if len(results) < ef or s > results[0][0]:
                    heapq.heappush(candidates, (-s, n))
                    heapq.heappush(results, (s, n))
                    if len(results) > ef:
                        heapq.heappop(results)
        return sorted(results, key=lambda r: (-r[0], r[1]))

    def _select(self, candidates: list[tuple[float, int]], m: int) -> list[int]:
        """Keep a candidate only if it is closer to the base than to every kept neighbour."""
        if len(candidates) <= m:
            return [c for _, c in candidates]
        nodes = [c for _, c in candidates]
        base_sims = np.array([s for s, _ in candidates])
        vecs = self._vecs[nodes]
        gram = vecs @ vecs.T
        closest_kept = np.full(len(nodes), -np.inf)
        kept: list[int] = []
        pruned: list[int] = []
        for i in range(len(nodes)):
            if len(kept) >= m:
                break
            if closest_kept[i] > base_sims[i]:
                pruned.append(i)
            else:
                kept.append(i)
                np.maximum(closest_kept, gram[i], out=closest_kept)
        kept.extend(pruned[: m - len(kept)])
        return [nodes[i] for i in kept]

    def add(self, key, vector) -> None:
        v = self._check(vector)
        if key in self._node_of:
            old = self._node_of[key]
            if np.array_equal(self._vecs[old], v):
                return
            # graph deletions are lossy; tombstone the old node and insert fresh
            self._deleted.add(old)
            del self._node_of[key]
        node = len(self._keys)
        if node >= self._vecs.shape[0]:
            self._vecs = np.vstack([self._vecs, np.zeros_like(self._vecs)])
        self._vecs[node] = v
        self._keys.append(key)
        self._node_of[key] = node
        level = int(-math.log(1.0 - self._rng.random()) * self._ml)
        self._links.append([[] for _ in range(level + 1)])
        if self._entry is None:
            self._entry, self._top = node, level
            return
        ep = [self._entry]
        for lv in range(self._top, level, -1):
            ep = [self._search_layer(v, ep, 1, lv)[0][1]]
        for lv in range(min(level, self._top), -1, -1):
            found = self._search_layer(v, ep, self.ef_construction, lv)
            neigh = self._select(found, self.m)
            self._links[node][lv] = neigh
            cap = self.m0 if lv == 0 else self.m
            for n in neigh:
                links = self._links[n][lv]
                links.append(node)
                if len(links) > cap:
                    sims = self._sims(self._vecs[n], links)
                    ranked = sorted(zip(sims, links), key=lambda r: (-r[0], r[1]))
                    self._links[n][lv] = self._select(ranked, cap)
            ep = [n for _, n in found]
        if level > self._top:
            self._entry, self._top = node, level

    def remove(self, key) -> None:
        """Tombstone ``key``; its node keeps routing traffic but is never returned."""
        node = self._node_of.pop(key)
        self._deleted.add(node)

    def search(self, vector, k: int = 1, ef: int | None = None) -> list[tuple[object, float]]:
        """Approximate top-``k`` as ``(key, cosine similarity)``, best first, ties by lowest key."""
        q = self._check(vector)
        if self._entry is None or not self._node_of:
            return []
        ef = max(ef or self.ef_search, k)
        ep = [self._entry]
        for lv in range(self._top, 0, -1):
            ep = [self._search_layer(q, ep, 1, lv)[0][1]]
        found = self._search_layer(q, ep, ef + len(self._deleted), 0)
        hits = [(self._keys[n], float(s)) for s, n in found if n not in self._deleted]
        hits.sort(key=lambda h: (-h[1], h[0]))
        return hits[:k]

    def brute_force(self, vector, k: int = 1) -> list[tuple[object, float]]:
        """Exact top-``k`` by scanning every live vector."""
        q = self._check(vector)
        if not self._node_of:
            return []
        nodes = list(self._node_of.values())
        sims = self._sims(q, nodes)
        hits = [(self._keys[n], float(s)) for n, s in zip(nodes, sims)]
        hits.sort(key=lambda h: (-h[1], h[0]))
        return hits[:k]
