import collections
from typing import List, Dict, Iterable, Tuple, Union
import numpy as np
import scipy.sparse
from . import utils

USER = "user"
ITEM = "item"
KIND_TAGS = {USER: "u", ITEM: "i"}

NodeId = collections.namedtuple("NodeId", ["index", "kind", "domain"])


class GraphConstructionError(utils.TextBridgeError):
    code = "GRAPH_CONSTRUCTION_ERROR"


def node_key(domain_name: str, kind: str, key: str) -> str:
    """Creates the external string key of a node, e.g. 'Books/u/A1B2'"""
    return domain_name + "/" + KIND_TAGS[kind] + "/" + key


class Graph:
    """Symmetric, unweighted, self-loop free graph in CSR layout"""

    def __init__(self, num_nodes: int, row_offsets: np.ndarray, col_indices: np.ndarray, edge_values: np.ndarray):
        """Constructor"""
        self.num_nodes = int(num_nodes)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(col_indices, dtype=np.int64)
        self.edge_values = np.ascontiguousarray(edge_values, dtype=np.float64)
        for array in (self.row_offsets, self.col_indices, self.edge_values):
            array.setflags(write=False)
        self._matrices = {}

    @property
    def num_entries(self) -> int:
        """Number of stored directed entries (twice the number of undirected edges)"""
        return int(self.col_indices.shape[0])

    @property
    def num_edges(self) -> int:
        """Number of undirected edges"""
        return self.num_entries // 2

    def degrees(self) -> np.ndarray:
        """Returns the degree of every node"""
        return np.diff(self.row_offsets)

    def neighbors(self, node: int) -> np.ndarray:
        """Returns the sorted neighbors of a node"""
        return self.col_indices[self.row_offsets[node]:self.row_offsets[node + 1]]

    def edge_pairs(self) -> np.ndarray:
        """Returns every undirected edge once as (a, b) with a < b"""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.degrees())
        upper = rows < self.col_indices
        return np.stack([rows[upper], self.col_indices[upper]], axis=1)

    def matrix(self, dtype=np.float64) -> scipy.sparse.csr_matrix:
        """Returns the graph as scipy CSR matrix (cached per dtype)"""
        dtype = np.dtype(dtype)
        if dtype not in self._matrices:
            self._matrices[dtype] = scipy.sparse.csr_matrix(
                (self.edge_values.astype(dtype), self.col_indices, self.row_offsets),
                shape=(self.num_nodes, self.num_nodes))
        return self._matrices[dtype]

    def densify(self) -> np.ndarray:
        """Returns the dense adjacency matrix"""
        return self.matrix().toarray()

    def fingerprint(self) -> str:
        """Hash of the CSR arrays"""
        payload = (np.int64(self.num_nodes).tobytes() + self.row_offsets.astype("<i8").tobytes()
                   + self.col_indices.astype("<i8").tobytes() + self.edge_values.astype("<f8").tobytes())
        return utils.sha256_hex(payload)

    def validate(self) -> None:
        """Checks the structural invariants of the graph"""
        if self.row_offsets.shape[0] != self.num_nodes + 1 or self.row_offsets[0] != 0 \
                or self.row_offsets[-1] != self.num_entries:
            raise GraphConstructionError("Inconsistent row offsets")
        for node in range(self.num_nodes):
            row = self.neighbors(node)
            if np.any(np.diff(row) <= 0):
                raise GraphConstructionError("Row " + str(node) + " is not strictly sorted")
            if np.any(row == node):
                raise GraphConstructionError("Self-loop at node " + str(node))
        matrix = self.matrix()
        if (matrix != matrix.T).nnz != 0:
            raise GraphConstructionError("Graph is not symmetric")


class NormalizedGraph(Graph):
    """Graph whose edge values are (deg(a) deg(b))^(-1/2)"""

    def __init__(self, graph: Graph, edge_values: np.ndarray):
        """Constructor"""
        super().__init__(graph.num_nodes, graph.row_offsets, graph.col_indices, edge_values)
        self.source_fingerprint = graph.fingerprint()


def _as_pair_array(edges) -> np.ndarray:
    """Converts a list of pairs (or an edge set) into an (E, 2) integer array"""
    if edges is None:
        return np.zeros((0, 2), dtype=np.int64)
    if hasattr(edges, "pair_array"):
        return edges.pair_array()
    pairs = np.asarray(edges, dtype=np.int64)
    if pairs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise GraphConstructionError("Edges must be given as pairs of node indices")
    return pairs


def build_csr(edges: Union[Iterable[Tuple[int, int]], np.ndarray], num_nodes: int) -> Graph:
    """Builds a deduplicated, symmetrised, sorted CSR graph from undirected node pairs"""
    pairs = _as_pair_array(list(edges) if not isinstance(edges, np.ndarray) else edges)

    # Check all pairs before building anything
    out_of_range = np.flatnonzero(np.any((pairs < 0) | (pairs >= num_nodes), axis=1))
    if out_of_range.size:
        a, b = pairs[out_of_range[0]]
        raise GraphConstructionError("Edge (" + str(a) + ", " + str(b) + ") has an endpoint outside [0, "
                                     + str(num_nodes) + ")")
    loops = np.flatnonzero(pairs[:, 0] == pairs[:, 1])
    if loops.size:
        a = pairs[loops[0], 0]
        raise GraphConstructionError("Self-loop (" + str(a) + ", " + str(a) + ") is not permitted")

    # Symmetrise, sort by (row, column), drop duplicates
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    codes = np.unique(rows * np.int64(num_nodes) + cols)
    rows = codes // num_nodes
    cols = codes % num_nodes
    row_offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=num_nodes), out=row_offsets[1:])
    return Graph(num_nodes, row_offsets, cols, np.ones(cols.shape[0], dtype=np.float64))


def symmetric_normalize(g: Graph) -> NormalizedGraph:
    """Replaces every edge value by (deg(a) deg(b))^(-1/2); rows of isolated nodes stay empty"""
    degrees = g.degrees().astype(np.float64)
    rows = np.repeat(np.arange(g.num_nodes, dtype=np.int64), g.degrees())
    values = 1.0 / np.sqrt(degrees[rows] * degrees[g.col_indices])
    return NormalizedGraph(g, values)


def merge_graphs(parts: List[Graph], extra_edges=None, offsets: List[int] = None) -> Graph:
    """Disjoint union of graphs (laid out at the given or at consecutive offsets) plus extra edges.
    Extra edges colliding with part edges collapse into a single unweighted edge."""
    if offsets is None:
        offsets = list(np.cumsum([0] + [part.num_nodes for part in parts[:-1]]))
    if len(offsets) != len(parts):
        raise GraphConstructionError("Expected one offset per graph")

    # Node ranges have to tile [0, total) without overlap
    ranges = sorted((int(offset), int(offset) + part.num_nodes) for offset, part in zip(offsets, parts))
    position = 0
    for start, stop in ranges:
        if start < position:
            raise GraphConstructionError("Overlapping node ranges at node " + str(start))
        if start > position:
            raise GraphConstructionError("Node range gap between " + str(position) + " and " + str(start))
        position = stop
    num_nodes = position

    pair_blocks = [part.edge_pairs() + int(offset) for offset, part in zip(offsets, parts)]
    pair_blocks.append(_as_pair_array(extra_edges))
    return build_csr(np.concatenate(pair_blocks, axis=0), num_nodes)


class GraphUniverse:
    """Registry of all nodes (users and items of every domain) and of the per-domain training edges"""

    def __init__(self, domain_names: List[str], target_domain=None):
        """Constructor - domains are registered in the given order; the target domain has to come last"""
        if len(set(domain_names)) != len(domain_names) or not domain_names:
            raise GraphConstructionError("Domain names must be unique and non-empty")
        if target_domain is not None and domain_names[-1] != target_domain:
            raise GraphConstructionError("The target domain has to be the last registered domain")
        self.domain_names = list(domain_names)
        self.target_domain = target_domain
        self.frozen = False
        self._keys = []                                             # type: List[str]
        self._nodes = []                                            # type: List[NodeId]
        self._registry = {}                                         # type: Dict[str, NodeId]
        self._domain_edges = {}                                     # type: Dict[int, np.ndarray]

    def __len__(self) -> int:
        return len(self._nodes)

    def domain_index(self, domain_name: str) -> int:
        """Returns the identifier of a domain"""
        try:
            return self.domain_names.index(domain_name)
        except ValueError:
            raise GraphConstructionError("Unknown domain '" + domain_name + "'")

    @property
    def target_index(self):
        """Identifier of the target domain, if any"""
        return None if self.target_domain is None else len(self.domain_names) - 1

    @property
    def source_indices(self) -> List[int]:
        """Identifiers of all source domains"""
        count = len(self.domain_names) - (0 if self.target_domain is None else 1)
        return list(range(count))

    def add_node(self, domain_name: str, kind: str, key: str) -> NodeId:
        """Registers a node (idempotent); domains have to be registered contiguously and in order"""
        external_key = node_key(domain_name, kind, key)
        if external_key in self._registry:
            return self._registry[external_key]
        if self.frozen:
            raise GraphConstructionError("Universe is frozen; cannot register '" + external_key + "'")
        domain = self.domain_index(domain_name)
        if self._nodes and self._nodes[-1].domain > domain:
            raise GraphConstructionError("Domain '" + domain_name + "' registered out of order")
        node = NodeId(len(self._nodes), kind, domain)
        self._nodes.append(node)
        self._keys.append(external_key)
        self._registry[external_key] = node
        return node

    def freeze(self) -> None:
        """Prevents further node insertion"""
        self.frozen = True

    def copy(self) -> "GraphUniverse":
        """Returns a universe with the same nodes and a separate set of domain edges"""
        other = GraphUniverse(self.domain_names, self.target_domain)
        other.frozen = self.frozen
        other._keys = list(self._keys)
        other._nodes = list(self._nodes)
        other._registry = dict(self._registry)
        other._domain_edges = dict(self._domain_edges)
        return other

    @property
    def num_source_nodes(self) -> int:
        """Number of nodes in source domains (they precede the target nodes)"""
        if self.target_index is None:
            return len(self._nodes)
        return self.domain_range(self.target_index)[0]

    def lookup(self, external_key: str) -> NodeId:
        """Returns the node registered under an external key"""
        try:
            return self._registry[external_key]
        except KeyError:
            raise GraphConstructionError("Unknown node key '" + external_key + "'")

    def get(self, external_key: str):
        """Returns the node registered under an external key or None"""
        return self._registry.get(external_key)

    def node(self, index: int) -> NodeId:
        """Returns a node by index"""
        return self._nodes[index]

    def key(self, index: int) -> str:
        """Returns the external key of a node"""
        return self._keys[index]

    def keys(self) -> List[str]:
        """Returns the external keys of all nodes in index order"""
        return list(self._keys)

    def kinds(self) -> np.ndarray:
        """Returns a boolean array marking the item nodes"""
        return np.array([node.kind == ITEM for node in self._nodes], dtype=bool)

    def domains(self) -> np.ndarray:
        """Returns the domain identifier of every node"""
        return np.array([node.domain for node in self._nodes], dtype=np.int64)

    def domain_range(self, domain: int) -> Tuple[int, int]:
        """Returns the half-open index range [start, stop) of a domain"""
        indices = [node.index for node in self._nodes if node.domain == domain]
        if not indices:
            return len(self._nodes), len(self._nodes)
        return indices[0], indices[-1] + 1

    def domain_nodes(self, domain: int, kind=None) -> np.ndarray:
        """Returns the indices of the nodes of a domain, optionally restricted to one kind"""
        return np.array([node.index for node in self._nodes
                         if node.domain == domain and (kind is None or node.kind == kind)], dtype=np.int64)

    def set_domain_edges(self, domain: int, pairs: np.ndarray) -> None:
        """Stores the (user, item) training edges of a domain, in universe indices"""
        pairs = _as_pair_array(pairs)
        start, stop = self.domain_range(domain)
        if pairs.size and (pairs.min() < start or pairs.max() >= stop):
            raise GraphConstructionError("Edge endpoint outside of domain '" + self.domain_names[domain] + "'")
        self._domain_edges[domain] = pairs

    def domain_edges(self, domain: int) -> np.ndarray:
        """Returns the (user, item) training edges of a domain, in universe indices"""
        return self._domain_edges.get(domain, np.zeros((0, 2), dtype=np.int64))

    def domain_subgraph(self, domain: int) -> Graph:
        """Builds the interaction graph of one domain in local indices (domain start = 0)"""
        start, stop = self.domain_range(domain)
        return build_csr(self.domain_edges(domain) - start, stop - start)
