from typing import List, Tuple
import numpy as np
from . import utils
from .graph import NormalizedGraph


class PropagationError(utils.TextBridgeError):
    code = "PROPAGATION_ERROR"


class PropagationPlan:
    """Residual propagation H(l+1) = (1 - alpha) A_hat H(l) + alpha H(l), applied for a number of layers"""

    def __init__(self, graph: NormalizedGraph, alpha=0.5, layers=2):
        """Constructor"""
        if not isinstance(graph, NormalizedGraph):
            raise PropagationError("Propagation requires a symmetric-normalised graph")
        if not 0.0 <= alpha <= 1.0:
            raise PropagationError("alpha must lie in [0, 1], got " + str(alpha))
        if int(layers) < 1:
            raise PropagationError("At least one propagation layer is required, got " + str(layers))
        self.graph = graph
        self.alpha = float(alpha)
        self.layers = int(layers)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def apply_layer(self, h: np.ndarray) -> np.ndarray:
        """One application of (1 - alpha) A_hat + alpha I; exact identity for alpha = 1"""
        if self.alpha == 1.0:
            return h.copy()
        matrix = self.graph.matrix(h.dtype)
        propagated = np.asarray(matrix @ h)
        return (1.0 - self.alpha) * propagated + self.alpha * h


class LayerCache:
    """Layer inputs of one forward call, kept for the backward pass"""

    def __init__(self, plan: PropagationPlan, inputs: List[np.ndarray]):
        self.plan = plan
        self.inputs = inputs
        self.shape = inputs[0].shape

    @property
    def depth(self) -> int:
        return len(self.inputs)


def _check_rows(plan: PropagationPlan, h: np.ndarray, what: str) -> None:
    """Raises if a matrix does not have one row per graph node"""
    if h.ndim != 2 or h.shape[0] != plan.num_nodes:
        raise PropagationError(what + " has shape " + str(h.shape) + " but the graph has "
                               + str(plan.num_nodes) + " nodes")


def grec_forward(plan: PropagationPlan, h0: np.ndarray) -> Tuple[np.ndarray, LayerCache]:
    """Propagates an embedding matrix through all layers of a plan"""
    _check_rows(plan, h0, "Input embedding matrix")
    inputs = []
    h = h0
    for _ in range(plan.layers):
        inputs.append(h)
        h = plan.apply_layer(h)
    return h, LayerCache(plan, inputs)


def grec_backward(plan: PropagationPlan, cache: LayerCache, grad_hl: np.ndarray) -> np.ndarray:
    """Adjoint of grec_forward; the operator is self-adjoint because A_hat is symmetric"""
    if cache.plan is not plan or cache.depth != plan.layers:
        raise PropagationError("Layer cache does not belong to this propagation plan")
    if grad_hl.shape != cache.shape:
        raise PropagationError("Gradient shape " + str(grad_hl.shape) + " does not match forward shape "
                               + str(cache.shape))
    grad = grad_hl
    for _ in range(plan.layers):
        grad = plan.apply_layer(grad)
    return grad


def dense_operator(plan: PropagationPlan) -> np.ndarray:
    """Dense ((1 - alpha) A_hat + alpha I)^L; for oracles on small graphs"""
    step = (1.0 - plan.alpha) * plan.graph.densify() + plan.alpha * np.eye(plan.num_nodes)
    return np.linalg.matrix_power(step, plan.layers)


def _check_domain_tiling(domain_plans: List[Tuple[int, PropagationPlan]], num_nodes: int) -> None:
    """Checks that the domain plans cover every node of the global graph exactly once"""
    position = 0
    for offset, plan in sorted(domain_plans, key=lambda entry: entry[0]):
        if offset != position:
            raise PropagationError("Node " + str(position) + " of the global graph is missing from the "
                                   "domain subgraphs")
        position = offset + plan.num_nodes
    if position != num_nodes:
        raise PropagationError("Node " + str(position) + " of the global graph is missing from the domain subgraphs")


def hierarchical_pretrain_forward(domain_plans: List[Tuple[int, PropagationPlan]], global_plan: PropagationPlan,
                                  h_s: np.ndarray, h_global: np.ndarray):
    """Propagates the local table per domain subgraph and the global table on the global graph"""
    _check_domain_tiling(domain_plans, global_plan.num_nodes)
    _check_rows(global_plan, h_s, "Local embedding table")
    _check_rows(global_plan, h_global, "Global embedding table")

    h_s_out = np.empty_like(h_s)
    domain_caches = []
    for offset, plan in domain_plans:
        block, cache = grec_forward(plan, h_s[offset:offset + plan.num_nodes])
        h_s_out[offset:offset + plan.num_nodes] = block
        domain_caches.append(cache)
    h_global_out, global_cache = grec_forward(global_plan, h_global)
    return h_s_out, h_global_out, (domain_caches, global_cache)


def hierarchical_pretrain_backward(domain_plans: List[Tuple[int, PropagationPlan]], global_plan: PropagationPlan,
                                   caches, grad_s: np.ndarray, grad_global: np.ndarray):
    """Adjoint of hierarchical_pretrain_forward"""
    domain_caches, global_cache = caches
    grad_s_in = np.empty_like(grad_s)
    for (offset, plan), cache in zip(domain_plans, domain_caches):
        stop = offset + plan.num_nodes
        grad_s_in[offset:stop] = grec_backward(plan, cache, grad_s[offset:stop])
    grad_global_in = grec_backward(global_plan, global_cache, grad_global)
    return grad_s_in, grad_global_in


def finetune_forward(cross_plan: PropagationPlan, global_fine_plan: PropagationPlan, local_stack: np.ndarray,
                     global_stack: np.ndarray):
    """Propagates [H_t; H_s] on the cross-domain local graph and [H_t,global; H_s,global] on the
    enhanced global graph (target block first in both stacks)"""
    _check_rows(cross_plan, local_stack, "Stacked local table")
    _check_rows(global_fine_plan, global_stack, "Stacked global table")
    local_out, local_cache = grec_forward(cross_plan, local_stack)
    global_out, global_cache = grec_forward(global_fine_plan, global_stack)
    return local_out, global_out, (local_cache, global_cache)


def finetune_backward(cross_plan: PropagationPlan, global_fine_plan: PropagationPlan, caches,
                      grad_local: np.ndarray, grad_global: np.ndarray):
    """Adjoint of finetune_forward"""
    local_cache, global_cache = caches
    return (grec_backward(cross_plan, local_cache, grad_local),
            grec_backward(global_fine_plan, global_cache, grad_global))


class PretrainPropagation:
    """Pre-training propagation: local table per domain subgraph, global table on the global graph"""

    def __init__(self, domain_plans: List[Tuple[int, PropagationPlan]], global_plan: PropagationPlan):
        _check_domain_tiling(domain_plans, global_plan.num_nodes)
        self.domain_plans = domain_plans
        self.global_plan = global_plan

    @property
    def num_nodes(self) -> int:
        return self.global_plan.num_nodes

    def forward(self, local: np.ndarray, global_table: np.ndarray):
        return hierarchical_pretrain_forward(self.domain_plans, self.global_plan, local, global_table)

    def backward(self, caches, grad_local: np.ndarray, grad_global: np.ndarray):
        return hierarchical_pretrain_backward(self.domain_plans, self.global_plan, caches, grad_local, grad_global)


class FinetunePropagation:
    """Fine-tuning propagation on the cross-domain local graph and the enhanced global graph"""

    def __init__(self, cross_plan: PropagationPlan, global_fine_plan: PropagationPlan):
        if cross_plan.num_nodes != global_fine_plan.num_nodes:
            raise PropagationError("Cross-domain and global graphs differ in node count")
        self.cross_plan = cross_plan
        self.global_fine_plan = global_fine_plan

    @property
    def num_nodes(self) -> int:
        return self.cross_plan.num_nodes

    def forward(self, local: np.ndarray, global_table: np.ndarray):
        return finetune_forward(self.cross_plan, self.global_fine_plan, local, global_table)

    def backward(self, caches, grad_local: np.ndarray, grad_global: np.ndarray):
        return finetune_backward(self.cross_plan, self.global_fine_plan, caches, grad_local, grad_global)
