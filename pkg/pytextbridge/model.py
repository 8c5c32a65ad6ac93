import collections
from typing import Dict, List, Tuple
import numpy as np
import scipy.special
from . import utils

EPS_NORM = 1e-12

LOCAL_TABLE = "H_s"
GLOBAL_TABLE = "H_global"
TARGET_TABLE = "H_t"
TARGET_GLOBAL_TABLE = "H_t_global"
SOURCE_ADAPTER = "adapter_s"
GLOBAL_ADAPTER = "adapter_global"
TARGET_ADAPTER = "adapter_t"


class ModelError(utils.TextBridgeError):
    code = "MODEL_ERROR"


class Adapter:
    """Bottleneck map x -> W_up ReLU(W_down x) from text space (d_text) into ID space (d)"""

    def __init__(self, w_down: np.ndarray, w_up: np.ndarray, scope=""):
        if w_down.ndim != 2 or w_up.ndim != 2 or w_up.shape[1] != w_down.shape[0]:
            raise ModelError("Inconsistent adapter shapes " + str(w_down.shape) + " and " + str(w_up.shape))
        self.w_down = w_down
        self.w_up = w_up
        self.scope = scope

    @property
    def d_text(self) -> int:
        return self.w_down.shape[1]

    @property
    def hidden(self) -> int:
        return self.w_down.shape[0]

    @property
    def d(self) -> int:
        return self.w_up.shape[0]


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, dtype=np.float64) -> np.ndarray:
    """Draws a (fan_out, fan_in) matrix from U(-sqrt(6/(fan_in+fan_out)), +sqrt(...))"""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


def init_adapter(rng: np.random.Generator, d_text: int, hidden: int, d: int, scope="", dtype=np.float64) -> Adapter:
    """Creates a randomly initialised adapter"""
    return Adapter(glorot_uniform(rng, hidden, d_text, dtype), glorot_uniform(rng, d, hidden, dtype), scope)


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Normalises a vector (or every row of a matrix) to unit length; (near-)zero inputs map to zero"""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > EPS_NORM)


def l2_normalize_backward(x: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Applies the Jacobian (I - y y^T) / |x| of the row normalisation; zero rows get zero gradient"""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    valid = norms > EPS_NORM
    y = np.divide(x, norms, out=np.zeros_like(x), where=valid)
    projected = grad - y * np.sum(y * grad, axis=-1, keepdims=True)
    return np.divide(projected, norms, out=np.zeros_like(x), where=valid)


def _check_text_width(adapter: Adapter, x_text: np.ndarray) -> None:
    if x_text.shape[-1] != adapter.d_text:
        raise ModelError("Text vector length " + str(x_text.shape[-1]) + " does not match adapter input size "
                         + str(adapter.d_text))


def adapter_forward(adapter: Adapter, x_text: np.ndarray) -> np.ndarray:
    """W_up ReLU(W_down x) for a vector or for every row of a matrix"""
    _check_text_width(adapter, x_text)
    hidden = np.maximum(x_text @ adapter.w_down.T, 0.0)
    return hidden @ adapter.w_up.T


def fuse(h_id: np.ndarray, x_text: np.ndarray, adapter: Adapter) -> np.ndarray:
    """Sum of the normalised ID embedding and the normalised adapted text embedding"""
    return l2_normalize(h_id) + l2_normalize(adapter_forward(adapter, x_text))


def final_embed(h_fused_local: np.ndarray, h_fused_global: np.ndarray) -> np.ndarray:
    """Concatenates local and global fused embeddings (local block first)"""
    if h_fused_local.shape != h_fused_global.shape:
        raise ModelError("Local and global embeddings differ in shape")
    return np.concatenate([h_fused_local, h_fused_global], axis=-1)


def score(h_u: np.ndarray, h_v: np.ndarray) -> float:
    """Interaction probability sigmoid(h_u . h_v)"""
    if h_u.shape != h_v.shape:
        raise ModelError("Embeddings differ in length")
    return float(scipy.special.expit(np.dot(h_u.astype(np.float64), h_v.astype(np.float64))))


class ModelParams:
    """Named parameter tensors with a frozen/trainable partition"""

    def __init__(self, tensors: Dict[str, np.ndarray], frozen=None):
        self.tensors = collections.OrderedDict(tensors)
        self.frozen = set(frozen or [])
        unknown = self.frozen.difference(self.tensors)
        if unknown:
            raise ModelError("Cannot freeze unknown blocks " + ", ".join(sorted(unknown)))

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise ModelError("Unknown parameter block '" + name + "'")

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> List[str]:
        return list(self.tensors)

    def trainable(self) -> List[str]:
        """Names of all blocks receiving optimizer updates"""
        return [name for name in self.tensors if name not in self.frozen]

    def num_trainable(self) -> int:
        return int(sum(self.tensors[name].size for name in self.trainable()))

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def adapter(self, scope: str) -> Adapter:
        """Returns a view of an adapter's weights"""
        return Adapter(self[scope + ".W_down"], self[scope + ".W_up"], scope)

    def set_adapter(self, adapter: Adapter) -> None:
        """Stores the weights of an adapter under its scope"""
        self.tensors[adapter.scope + ".W_down"] = adapter.w_down
        self.tensors[adapter.scope + ".W_up"] = adapter.w_up

    def copy(self) -> "ModelParams":
        return ModelParams({name: tensor.copy() for name, tensor in self.tensors.items()}, self.frozen)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({name: tensor.astype(dtype) for name, tensor in self.tensors.items()}, self.frozen)


def adapter_blocks(scope: str) -> List[str]:
    """Names of the two weight blocks of an adapter"""
    return [scope + ".W_down", scope + ".W_up"]


def init_pretrain_params(rng: np.random.Generator, num_nodes: int, d_text: int, d: int, hidden: int,
                         dtype=np.float64) -> ModelParams:
    """Random initialisation of the pre-training model: ID tables ~ N(0, 0.01), Glorot-uniform adapters"""
    params = ModelParams({
        LOCAL_TABLE: rng.normal(0.0, 0.01, size=(num_nodes, d)).astype(dtype),
        GLOBAL_TABLE: rng.normal(0.0, 0.01, size=(num_nodes, d)).astype(dtype),
    })
    params.set_adapter(init_adapter(rng, d_text, hidden, d, SOURCE_ADAPTER, dtype))
    params.set_adapter(init_adapter(rng, d_text, hidden, d, GLOBAL_ADAPTER, dtype))
    return params


class ModelLayout:
    """How the parameter blocks are stacked into propagation rows, and which adapter serves which rows.
    Both paths use the same row order; text rows follow that order too."""

    def __init__(self, propagation, local_blocks: List[str], global_blocks: List[str],
                 local_adapters: List[Tuple[int, int, str]], global_adapters: List[Tuple[int, int, str]],
                 text: np.ndarray):
        self.propagation = propagation
        self.local_blocks = list(local_blocks)
        self.global_blocks = list(global_blocks)
        self.local_adapters = list(local_adapters)
        self.global_adapters = list(global_adapters)
        self.text = text
        self.num_rows = propagation.num_nodes
        if text.shape[0] != self.num_rows:
            raise ModelError("Text matrix has " + str(text.shape[0]) + " rows, the graphs "
                             + str(self.num_rows) + " nodes")
        for segments in (self.local_adapters, self.global_adapters):
            covered = sorted((start, stop) for start, stop, _ in segments)
            position = 0
            for start, stop in covered:
                if start != position:
                    raise ModelError("Adapter segments do not cover row " + str(position))
                position = stop
            if position != self.num_rows:
                raise ModelError("Adapter segments do not cover row " + str(position))


class ForwardCache:
    """Intermediate results of one forward pass"""

    def __init__(self, layout: ModelLayout, propagated_local, propagated_global, propagation_caches,
                 text_local, text_global):
        self.layout = layout
        self.propagated_local = propagated_local
        self.propagated_global = propagated_global
        self.propagation_caches = propagation_caches
        self.text_local = text_local
        self.text_global = text_global


def _stack(params: ModelParams, blocks: List[str], num_rows: int) -> np.ndarray:
    table = params[blocks[0]] if len(blocks) == 1 else np.concatenate([params[name] for name in blocks], axis=0)
    if table.shape[0] != num_rows:
        raise ModelError("Stacked table has " + str(table.shape[0]) + " rows, the graphs " + str(num_rows)
                         + " nodes")
    return table


def _adapter_path(params: ModelParams, segments, text: np.ndarray, d: int):
    """Adapter outputs of all rows, plus the pre-activations needed for the backward pass"""
    output = np.empty((text.shape[0], d), dtype=text.dtype)
    pre_activations = []
    for start, stop, scope in segments:
        adapter = params.adapter(scope)
        _check_text_width(adapter, text)
        pre = text[start:stop] @ adapter.w_down.T
        output[start:stop] = np.maximum(pre, 0.0) @ adapter.w_up.T
        pre_activations.append(pre)
    return output, pre_activations


def model_forward(params: ModelParams, layout: ModelLayout) -> Tuple[np.ndarray, ForwardCache]:
    """Propagation, adapters, fusion and concatenation for every row; returns the (rows, 2d) final embeddings"""
    local = _stack(params, layout.local_blocks, layout.num_rows)
    global_table = _stack(params, layout.global_blocks, layout.num_rows)
    propagated_local, propagated_global, caches = layout.propagation.forward(local, global_table)
    d = local.shape[1]
    text_local = _adapter_path(params, layout.local_adapters, layout.text, d)
    text_global = _adapter_path(params, layout.global_adapters, layout.text, d)
    fused_local = l2_normalize(propagated_local) + l2_normalize(text_local[0])
    fused_global = l2_normalize(propagated_global) + l2_normalize(text_global[0])
    cache = ForwardCache(layout, propagated_local, propagated_global, caches, text_local, text_global)
    return final_embed(fused_local, fused_global), cache


def _adapter_backward(params: ModelParams, segments, text: np.ndarray, path, grad_output: np.ndarray,
                      grads: Dict[str, np.ndarray]) -> None:
    output, pre_activations = path
    grad_out = l2_normalize_backward(output, grad_output)
    for (start, stop, scope), pre in zip(segments, pre_activations):
        adapter = params.adapter(scope)
        grad_rows = grad_out[start:stop]
        hidden = np.maximum(pre, 0.0)
        grads[scope + ".W_up"] += grad_rows.T @ hidden
        # ReLU subgradient is 0 at the kink
        grad_pre = (grad_rows @ adapter.w_up) * (pre > 0.0)
        grads[scope + ".W_down"] += grad_pre.T @ text[start:stop]


def _split_blocks(params: ModelParams, blocks: List[str], grad: np.ndarray, grads: Dict[str, np.ndarray]) -> None:
    position = 0
    for name in blocks:
        rows = params[name].shape[0]
        grads[name] += grad[position:position + rows]
        position += rows


def model_backward(params: ModelParams, cache: ForwardCache, layout: ModelLayout,
                   grad_final: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of all parameter blocks given the gradient w.r.t. the final embeddings; frozen blocks
    receive exact zeros"""
    if cache.layout is not layout:
        raise ModelError("Forward cache belongs to a different model layout")
    d = cache.propagated_local.shape[1]
    if grad_final.shape != (layout.num_rows, 2 * d):
        raise ModelError("Gradient shape " + str(grad_final.shape) + " does not match final embeddings")
    grads = {name: np.zeros_like(tensor) for name, tensor in params.tensors.items()}
    grad_local, grad_global = grad_final[:, :d], grad_final[:, d:]

    _adapter_backward(params, layout.local_adapters, layout.text, cache.text_local, grad_local, grads)
    _adapter_backward(params, layout.global_adapters, layout.text, cache.text_global, grad_global, grads)

    grad_prop_local = l2_normalize_backward(cache.propagated_local, grad_local)
    grad_prop_global = l2_normalize_backward(cache.propagated_global, grad_global)
    grad_in_local, grad_in_global = layout.propagation.backward(cache.propagation_caches, grad_prop_local,
                                                                grad_prop_global)
    _split_blocks(params, layout.local_blocks, grad_in_local, grads)
    _split_blocks(params, layout.global_blocks, grad_in_global, grads)

    for name in params.frozen:
        grads[name] = np.zeros_like(params[name])
    return grads
