import concurrent.futures
from typing import List, Tuple
import numpy as np
from . import utils

PRETRAIN_CROSS_DOMAIN = "pretrain-cross-domain"
FINETUNE_SRC_TGT = "finetune-src-tgt"
FINETUNE_TGT_GLOBAL = "finetune-tgt-global"
MODES = [PRETRAIN_CROSS_DOMAIN, FINETUNE_SRC_TGT, FINETUNE_TGT_GLOBAL]


class SemanticError(utils.TextBridgeError):
    code = "SEMANTIC_EDGE_ERROR"


class NeighborLists:
    """Top-k neighbor lists; row i belongs to query_indices[i], unused slots hold index -1"""

    def __init__(self, query_indices: np.ndarray, neighbor_indices: np.ndarray, similarities: np.ndarray):
        self.query_indices = np.asarray(query_indices, dtype=np.int64)
        self.neighbor_indices = np.asarray(neighbor_indices, dtype=np.int64)
        self.similarities = np.asarray(similarities, dtype=np.float64)

    @property
    def k(self) -> int:
        return int(self.neighbor_indices.shape[1]) if self.neighbor_indices.ndim == 2 else 0

    def __len__(self) -> int:
        return int(self.query_indices.shape[0])

    def neighbors_of(self, row: int) -> List[Tuple[int, float]]:
        """Returns the (neighbor, similarity) list of one query row"""
        valid = self.neighbor_indices[row] >= 0
        return list(zip(self.neighbor_indices[row][valid].tolist(), self.similarities[row][valid].tolist()))

    def triples(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns flat arrays (query, neighbor, similarity) of all valid entries"""
        valid = self.neighbor_indices >= 0
        queries = np.repeat(self.query_indices, valid.sum(axis=1))
        return queries, self.neighbor_indices[valid], self.similarities[valid]

    @staticmethod
    def concatenate(lists: List["NeighborLists"]) -> "NeighborLists":
        """Joins neighbor lists (padding to the largest k)"""
        lists = [entry for entry in lists if len(entry)]
        if not lists:
            return NeighborLists(np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0)))
        k = max(entry.k for entry in lists)
        indices, sims = [], []
        for entry in lists:
            pad = k - entry.k
            indices.append(np.pad(entry.neighbor_indices, ((0, 0), (0, pad)), constant_values=-1))
            sims.append(np.pad(entry.similarities, ((0, 0), (0, pad)), constant_values=0.0))
        return NeighborLists(np.concatenate([entry.query_indices for entry in lists]),
                             np.concatenate(indices), np.concatenate(sims))


class SemanticEdgeSet:
    """Thresholded same-kind cosine-similarity edges; each undirected pair is stored once with a < b"""

    def __init__(self, pairs: np.ndarray, similarities: np.ndarray, mode: str, gamma: float, k_cap: int):
        self.pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        self.similarities = np.asarray(similarities, dtype=np.float64)
        self.mode = mode
        self.gamma = gamma
        self.k_cap = k_cap

    def __len__(self) -> int:
        return int(self.pairs.shape[0])

    @property
    def edges(self) -> List[Tuple[int, int, float]]:
        """Returns the edges as (a, b, similarity) triples"""
        return [(int(a), int(b), float(s)) for (a, b), s in zip(self.pairs, self.similarities)]

    def pair_array(self) -> np.ndarray:
        """Returns the undirected pairs as (E, 2) array"""
        return self.pairs

    def edge_keys(self) -> set:
        """Returns the set of undirected pairs"""
        return set((int(a), int(b)) for a, b in self.pairs)

    def remap(self, mapping: np.ndarray) -> "SemanticEdgeSet":
        """Returns the edge set with node indices translated through an index map"""
        mapped = mapping[self.pairs]
        mapped.sort(axis=1)
        return SemanticEdgeSet(mapped, self.similarities, self.mode, self.gamma, self.k_cap)

    @staticmethod
    def union(edge_sets: List["SemanticEdgeSet"], mode: str) -> "SemanticEdgeSet":
        """Joins edge sets built over disjoint node partitions (e.g. users and items)"""
        if not edge_sets:
            return SemanticEdgeSet(np.zeros((0, 2)), np.zeros(0), mode, None, None)
        return SemanticEdgeSet(np.concatenate([entry.pairs for entry in edge_sets]),
                               np.concatenate([entry.similarities for entry in edge_sets]),
                               mode, edge_sets[0].gamma, edge_sets[0].k_cap)


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalises the rows of a matrix in 64-bit; zero rows stay zero"""
    rows = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return np.divide(rows, norms, out=np.zeros_like(rows), where=norms > 0.0)


def _exact_block(unit: np.ndarray, queries: np.ndarray, candidates: np.ndarray, k: int):
    """Exact top-k for one block of queries; candidates must be sorted ascending"""
    sims = unit[queries] @ unit[candidates].T
    is_self = queries[:, None] == candidates[None, :]
    sims[is_self] = -np.inf
    # stable sort keeps ascending candidate order among equal similarities
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    top_sims = np.take_along_axis(sims, order, axis=1)
    top_indices = candidates[order]
    excluded = np.isneginf(top_sims)
    top_indices[excluded] = -1
    top_sims[excluded] = 0.0
    return top_indices, top_sims


def _exact_topk(unit: np.ndarray, queries: np.ndarray, candidates: np.ndarray, k: int, block_size: int,
                workers: int):
    """Blocked exact neighbor search; blocks may run in parallel, results are assembled in query order"""
    blocks = [queries[start:start + block_size] for start in range(0, len(queries), block_size)]
    if workers > 1 and len(blocks) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda block: _exact_block(unit, block, candidates, k), blocks))
    else:
        results = [_exact_block(unit, block, candidates, k) for block in blocks]
    return np.concatenate([r[0] for r in results]), np.concatenate([r[1] for r in results])


def _faiss_topk(unit: np.ndarray, queries: np.ndarray, candidates: np.ndarray, k: int, min_recall: float):
    """Approximate neighbor search with an HNSW inner-product index, checked against the exact search"""
    try:
        import faiss
    except ImportError:
        raise SemanticError("The 'faiss' backend requires the faiss-cpu package", code="MISSING_DEPENDENCY")
    index = faiss.IndexHNSWFlat(unit.shape[1], 32, faiss.METRIC_INNER_PRODUCT)
    index.add(np.ascontiguousarray(unit[candidates], dtype=np.float32))
    sims, positions = index.search(np.ascontiguousarray(unit[queries], dtype=np.float32), k + 1)

    top_indices = np.full((len(queries), k), -1, dtype=np.int64)
    top_sims = np.zeros((len(queries), k), dtype=np.float64)
    for row, query in enumerate(queries):
        found = [(float(s), int(candidates[p])) for s, p in zip(sims[row], positions[row])
                 if p >= 0 and candidates[p] != query]
        found.sort(key=lambda entry: (-entry[0], entry[1]))
        for column, (similarity, neighbor) in enumerate(found[:k]):
            top_indices[row, column] = neighbor
            top_sims[row, column] = float(unit[query] @ unit[neighbor])

    # Recall self-test on a sample of queries
    sample = queries[:min(len(queries), 64)]
    exact_indices, _ = _exact_block(unit, sample, candidates, k)
    hits = sum(len(set(exact_indices[i][exact_indices[i] >= 0]) & set(top_indices[i][top_indices[i] >= 0]))
               for i in range(len(sample)))
    expected = int((exact_indices >= 0).sum())
    recall = hits / expected if expected else 1.0
    if recall < min_recall:
        raise SemanticError("Approximate neighbor search recall " + format(recall, ".3f") + " is below "
                            + str(min_recall))
    return top_indices, top_sims


def topk_cosine_neighbors(matrix, queries, candidates, k: int, backend="exact", block_size=512, workers=1,
                          min_recall=0.95) -> NeighborLists:
    """Finds for every query its k most cosine-similar candidates (never itself), by descending similarity
    with ties broken by ascending candidate index; the cosine of a zero vector is 0"""
    if k < 1:
        raise SemanticError("k must be at least 1")
    rows = matrix.rows if hasattr(matrix, "rows") else matrix
    unit = normalize_rows(rows)
    queries = np.asarray(queries, dtype=np.int64)
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    if queries.size == 0 or candidates.size == 0:
        return NeighborLists(queries, np.full((queries.size, 0), -1), np.zeros((queries.size, 0)))
    k_eff = min(k, candidates.size)
    if backend == "exact":
        indices, sims = _exact_topk(unit, queries, candidates, k_eff, block_size, workers)
    elif backend == "faiss":
        indices, sims = _faiss_topk(unit, queries, candidates, k_eff, min_recall)
    else:
        raise SemanticError("Unknown neighbor search backend '" + backend + "'")
    return NeighborLists(queries, indices, sims)


def _mode_predicate(mode: str, domain_a: np.ndarray, domain_b: np.ndarray, target_domain) -> np.ndarray:
    """Evaluates the domain condition of a construction mode on arrays of endpoint domains"""
    if mode == PRETRAIN_CROSS_DOMAIN:
        keep = domain_a != domain_b
        if target_domain is not None:
            keep &= (domain_a != target_domain) & (domain_b != target_domain)
        return keep
    if target_domain is None:
        raise SemanticError("Mode '" + mode + "' requires a target domain")
    in_target_a = domain_a == target_domain
    in_target_b = domain_b == target_domain
    if mode == FINETUNE_SRC_TGT:
        return in_target_a != in_target_b
    if mode == FINETUNE_TGT_GLOBAL:
        return in_target_a | in_target_b
    raise SemanticError("Unknown semantic edge mode '" + mode + "'")


def build_semantic_edges(neighbors: NeighborLists, gamma: float, mode: str, domain_labels: np.ndarray,
                         target_domain=None, k_cap=20, kinds=None) -> SemanticEdgeSet:
    """Keeps neighbor pairs with similarity > gamma satisfying the mode's domain condition, symmetrises them
    and caps the semantic degree of every node at k_cap (highest similarities first)"""
    if not 0.0 < gamma < 1.0:
        raise SemanticError("gamma must lie in (0, 1), got " + str(gamma))
    if mode not in MODES:
        raise SemanticError("Unknown semantic edge mode '" + mode + "'")
    domain_labels = np.asarray(domain_labels)
    queries, others, sims = neighbors.triples()

    keep = (sims > gamma) & (queries != others)
    keep &= _mode_predicate(mode, domain_labels[queries], domain_labels[others], target_domain)
    if kinds is not None:
        keep &= kinds[queries] == kinds[others]
    a = np.minimum(queries[keep], others[keep])
    b = np.maximum(queries[keep], others[keep])
    sims = sims[keep]

    # Symmetrise: one entry per unordered pair, keeping the larger of the two directed similarities
    order = np.lexsort((-sims, b, a))
    a, b, sims = a[order], b[order], sims[order]
    first = np.ones(a.shape[0], dtype=bool)
    first[1:] = (a[1:] != a[:-1]) | (b[1:] != b[:-1])
    a, b, sims = a[first], b[first], sims[first]

    # Degree cap, visiting pairs by descending similarity (ties by ascending pair)
    order = np.lexsort((b, a, -sims))
    degree = {}
    accepted = []
    for position in order:
        u, v = int(a[position]), int(b[position])
        if degree.get(u, 0) < k_cap and degree.get(v, 0) < k_cap:
            degree[u] = degree.get(u, 0) + 1
            degree[v] = degree.get(v, 0) + 1
            accepted.append(position)
    accepted = np.sort(np.asarray(accepted, dtype=np.int64))
    pairs = np.stack([a[accepted], b[accepted]], axis=1) if accepted.size else np.zeros((0, 2), dtype=np.int64)
    return SemanticEdgeSet(pairs, sims[accepted], mode, gamma, k_cap)


def candidate_partition(mode: str, domains: np.ndarray, kinds: np.ndarray, kind_value: bool, target_domain=None):
    """Yields (queries, candidates) node sets of one node kind for a construction mode"""
    same_kind = kinds == kind_value
    if mode == PRETRAIN_CROSS_DOMAIN:
        sources = same_kind if target_domain is None else same_kind & (domains != target_domain)
        for domain in np.unique(domains[sources]):
            queries = np.flatnonzero(sources & (domains == domain))
            candidates = np.flatnonzero(sources & (domains != domain))
            yield queries, candidates
    elif mode == FINETUNE_SRC_TGT:
        yield (np.flatnonzero(same_kind & (domains == target_domain)),
               np.flatnonzero(same_kind & (domains != target_domain)))
    elif mode == FINETUNE_TGT_GLOBAL:
        yield np.flatnonzero(same_kind & (domains == target_domain)), np.flatnonzero(same_kind)
    else:
        raise SemanticError("Unknown semantic edge mode '" + mode + "'")


def search_neighbors(text_rows: np.ndarray, domains: np.ndarray, kinds: np.ndarray, mode: str, k: int,
                     target_domain=None, backend="exact", workers=1) -> Tuple[NeighborLists, NeighborLists]:
    """Runs the neighbor searches a construction mode needs; returns (user lists, item lists)"""
    per_kind = []
    for kind_value in (False, True):
        lists = [topk_cosine_neighbors(text_rows, queries, candidates, k, backend=backend, workers=workers)
                 for queries, candidates in candidate_partition(mode, domains, kinds, kind_value, target_domain)
                 if queries.size and candidates.size]
        per_kind.append(NeighborLists.concatenate(lists))
    return per_kind[0], per_kind[1]


def semantic_edges(text_rows: np.ndarray, domains: np.ndarray, kinds: np.ndarray, mode: str, gamma: float,
                   k_cap=20, target_domain=None, backend="exact", workers=1, neighbors=None) -> SemanticEdgeSet:
    """Builds the user-user and item-item semantic edges of a construction mode"""
    if neighbors is None:
        neighbors = search_neighbors(text_rows, domains, kinds, mode, k_cap, target_domain, backend, workers)
    edge_sets = [build_semantic_edges(lists, gamma, mode, domains, target_domain, k_cap, kinds)
                 for lists in neighbors]
    return SemanticEdgeSet.union(edge_sets, mode)


def similarity_quantiles(neighbors: NeighborLists, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
    """Summarises the distribution of neighbor similarities, e.g. for choosing gamma"""
    _, _, sims = neighbors.triples()
    if sims.size == 0:
        return {format(q, "g"): None for q in quantiles}
    return {format(q, "g"): float(np.quantile(sims, q)) for q in quantiles}
