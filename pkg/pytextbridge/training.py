import os
import time
import collections
from typing import List, Dict, Tuple
import numpy as np
from . import utils, semantic, evaluation
from .graph import Graph, GraphUniverse, merge_graphs, symmetric_normalize
from .propagation import PropagationPlan, PretrainPropagation, FinetunePropagation
from .model import ModelParams, ModelLayout, Adapter, model_forward, model_backward, init_pretrain_params, \
    init_adapter, LOCAL_TABLE, GLOBAL_TABLE, TARGET_TABLE, TARGET_GLOBAL_TABLE, SOURCE_ADAPTER, GLOBAL_ADAPTER, \
    TARGET_ADAPTER, adapter_blocks
from .optim import Adam, AdamState

BprTriple = collections.namedtuple("BprTriple", ["user", "pos_item", "neg_item", "domain"])
EarlyStopDecision = collections.namedtuple("EarlyStopDecision", ["stop", "best_epoch"])

PRETRAIN = "pretrain"
FINETUNE = "finetune"
ZEROSHOT = "zeroshot"

MAX_NEGATIVE_TRIES = 100


class TrainingError(utils.TextBridgeError):
    code = "TRAINING_ERROR"


class CheckpointMismatchError(TrainingError):
    code = "CHECKPOINT_MISMATCH"


class TrainConfig:
    """Hyperparameters of pre-training, fine-tuning and evaluation"""

    DEFAULTS = collections.OrderedDict([
        ("lr", 5e-3), ("batch_size", 1024), ("lambda_reg", 1e-5), ("eta_reg", 1e-5), ("alpha", 0.5),
        ("gamma", 0.99), ("finetune_gamma", None), ("layers", 2), ("d", 64), ("h", None), ("epochs", 40),
        ("finetune_epochs", None), ("patience", 5), ("seed", 42), ("k_cap", 20), ("n_train_neg", 1),
        ("n_eval_neg", 100), ("reg_scope", "batch"), ("freeze_target_global", False), ("adapter_t_init", "copy"),
        ("precision", "float32"), ("neighbor_backend", "exact"), ("workers", 1), ("hit_rate", False),
    ])
    LR_GRID = [1e-3, 5e-4, 1e-4, 5e-3]
    BATCH_GRID = [1024, 2048, 4096]
    # Fields fixed by pre-training; fine-tuning and evaluation take them from the checkpoint
    STRUCTURAL = ["alpha", "layers", "d", "h", "gamma", "k_cap", "precision", "neighbor_backend"]

    def __init__(self, **kwargs):
        unknown = set(kwargs).difference(self.DEFAULTS)
        if unknown:
            raise TrainingError("Unknown training parameter(s) " + ", ".join(sorted(unknown)), code="CONFIG_ERROR")
        for name, default in self.DEFAULTS.items():
            setattr(self, name, kwargs.get(name, default))
        if self.h is None:
            self.h = self.d
        self.validate()

    def validate(self) -> None:
        def fail(message):
            raise TrainingError(message, code="CONFIG_ERROR")
        if not self.lr > 0:
            fail("lr must be positive")
        if int(self.batch_size) < 1:
            fail("batch_size must be at least 1")
        if self.lambda_reg < 0 or self.eta_reg < 0:
            fail("Regularisation weights must not be negative")
        if not 0.0 <= self.alpha <= 1.0:
            fail("alpha must lie in [0, 1]")
        for name in ("gamma", "finetune_gamma"):
            value = getattr(self, name)
            if value is not None and not 0.0 < value < 1.0:
                fail(name + " must lie in (0, 1)")
        if not 1 <= int(self.layers) <= 4:
            fail("layers must lie in [1, 4]")
        if int(self.d) < 1 or int(self.h) < 1 or int(self.k_cap) < 1 or int(self.n_train_neg) < 1:
            fail("d, h, k_cap and n_train_neg must be positive")
        if int(self.epochs) < 0 or int(self.patience) < 1 or int(self.n_eval_neg) < 1:
            fail("epochs must not be negative; patience and n_eval_neg must be positive")
        if self.reg_scope not in ("batch", "full"):
            fail("reg_scope must be 'batch' or 'full'")
        if self.adapter_t_init not in ("copy", "random"):
            fail("adapter_t_init must be 'copy' or 'random'")
        if self.precision not in ("float32", "float64"):
            fail("precision must be 'float32' or 'float64'")
        if self.neighbor_backend not in ("exact", "faiss"):
            fail("neighbor_backend must be 'exact' or 'faiss'")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def as_dict(self) -> dict:
        return collections.OrderedDict((name, getattr(self, name)) for name in self.DEFAULTS)

    def replace(self, **kwargs) -> "TrainConfig":
        values = self.as_dict()
        values.update(kwargs)
        return TrainConfig(**values)

    def with_structure_of(self, other: dict) -> "TrainConfig":
        """Returns a copy taking the structural fields from another (checkpoint) configuration"""
        return self.replace(**{name: other[name] for name in self.STRUCTURAL if name in other})


def random_stream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible random stream for one purpose"""
    return np.random.default_rng([int(seed), int(utils.sha256_hex(name)[:8], 16)])


class Checkpoint:
    """All parameters, optimizer moments, configuration, graph fingerprints and metric history of a run"""

    def __init__(self, stage: str, params: ModelParams, optimizer: AdamState, config: dict, fingerprints: dict,
                 epoch: int, history: list, build_id="", config_hash="", optimizer_settings=None, extra=None):
        self.stage = stage
        self.params = params
        self.optimizer = optimizer
        self.config = dict(config)
        self.fingerprints = dict(fingerprints)
        self.epoch = epoch
        self.history = list(history)
        self.build_id = build_id
        self.config_hash = config_hash
        self.optimizer_settings = dict(optimizer_settings or {})
        self.extra = dict(extra or {})

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{k: v for k, v in self.config.items() if k in TrainConfig.DEFAULTS})


# Graph assembly

class PretrainGraphs:
    """Per-domain interaction subgraphs of the source domains and the semantic global graph over them"""

    def __init__(self, universe: GraphUniverse, domain_graphs: List[Tuple[int, int, Graph]],
                 edges: semantic.SemanticEdgeSet, global_graph: Graph):
        self.universe = universe
        self.domain_graphs = domain_graphs
        self.semantic_edges = edges
        self.global_graph = global_graph

    @property
    def num_nodes(self) -> int:
        return self.global_graph.num_nodes

    def fingerprints(self) -> dict:
        prints = {"domain:" + self.universe.domain_names[domain]: graph.fingerprint()
                  for domain, _, graph in self.domain_graphs}
        prints["global_pre"] = self.global_graph.fingerprint()
        prints["source_nodes"] = utils.sha256_hex(utils.canonical_json(self.universe.keys()[:self.num_nodes]))
        return prints


class FinetuneGraphs:
    """Cross-domain local graph and enhanced global graph over the stack [target nodes; source nodes]"""

    def __init__(self, pretrain_graphs: PretrainGraphs, target_graph: Graph, stack_of: np.ndarray,
                 src_tgt: semantic.SemanticEdgeSet, tgt_global: semantic.SemanticEdgeSet, cross_graph: Graph,
                 global_fine_graph: Graph):
        self.pretrain_graphs = pretrain_graphs
        self.target_graph = target_graph
        self.stack_of = stack_of
        self.src_tgt_edges = src_tgt
        self.tgt_global_edges = tgt_global
        self.cross_graph = cross_graph
        self.global_fine_graph = global_fine_graph

    @property
    def num_target(self) -> int:
        return self.target_graph.num_nodes

    def fingerprints(self) -> dict:
        prints = self.pretrain_graphs.fingerprints()
        prints.update({"target": self.target_graph.fingerprint(), "cross": self.cross_graph.fingerprint(),
                       "global_fine": self.global_fine_graph.fingerprint()})
        return prints


def _semantic(text_rows: np.ndarray, domains: np.ndarray, kinds: np.ndarray, mode: str, gamma: float,
              config: TrainConfig, target_domain=None, neighbors=None) -> semantic.SemanticEdgeSet:
    return semantic.semantic_edges(text_rows, domains, kinds, mode, gamma, config.k_cap, target_domain,
                                   config.neighbor_backend, config.workers, neighbors)


def build_pretrain_graphs(universe: GraphUniverse, text_rows: np.ndarray, config: TrainConfig,
                          neighbors=None) -> PretrainGraphs:
    """Builds the source subgraphs and the global pre-training graph (subgraphs plus cross-domain semantic edges)"""
    num_source = universe.num_source_nodes
    domain_graphs = []
    for domain in universe.source_indices:
        start, stop = universe.domain_range(domain)
        if stop > start:
            domain_graphs.append((domain, start, universe.domain_subgraph(domain)))
    if not domain_graphs:
        raise TrainingError("Pre-training needs at least one non-empty source domain")
    edges = _semantic(text_rows[:num_source], universe.domains()[:num_source], universe.kinds()[:num_source],
                      semantic.PRETRAIN_CROSS_DOMAIN, config.gamma, config, neighbors=neighbors)
    global_graph = merge_graphs([graph for _, _, graph in domain_graphs], edges,
                                offsets=[start for _, start, _ in domain_graphs])
    return PretrainGraphs(universe, domain_graphs, edges, global_graph)


def build_finetune_graphs(universe: GraphUniverse, text_rows: np.ndarray, pretrain_graphs: PretrainGraphs,
                          config: TrainConfig) -> FinetuneGraphs:
    """Builds the cross-domain local graph (target + source subgraphs + source-target semantic edges) and the
    enhanced global graph (target subgraph + global pre-training graph + target-involving semantic edges)"""
    target = universe.target_index
    if target is None:
        raise TrainingError("Fine-tuning needs a target domain")
    num_source = universe.num_source_nodes
    num_target = len(universe) - num_source
    if num_target == 0:
        raise TrainingError("The target domain has no nodes")
    stack_of = np.empty(len(universe), dtype=np.int64)
    stack_of[num_source:] = np.arange(num_target)
    stack_of[:num_source] = np.arange(num_source) + num_target

    gamma = config.finetune_gamma if config.finetune_gamma is not None else config.gamma
    domains, kinds = universe.domains(), universe.kinds()
    src_tgt = _semantic(text_rows, domains, kinds, semantic.FINETUNE_SRC_TGT, gamma, config, target).remap(stack_of)
    tgt_global = _semantic(text_rows, domains, kinds, semantic.FINETUNE_TGT_GLOBAL, gamma, config,
                           target).remap(stack_of)

    target_graph = universe.domain_subgraph(target)
    cross_graph = merge_graphs([target_graph] + [graph for _, _, graph in pretrain_graphs.domain_graphs], src_tgt,
                               offsets=[0] + [start + num_target for _, start, _ in pretrain_graphs.domain_graphs])
    global_fine_graph = merge_graphs([target_graph, pretrain_graphs.global_graph], tgt_global,
                                     offsets=[0, num_target])
    return FinetuneGraphs(pretrain_graphs, target_graph, stack_of, src_tgt, tgt_global, cross_graph,
                          global_fine_graph)


def _plan(graph: Graph, config: TrainConfig) -> PropagationPlan:
    return PropagationPlan(symmetric_normalize(graph), config.alpha, config.layers)


def pretrain_layout(graphs: PretrainGraphs, text_rows: np.ndarray, config: TrainConfig) -> ModelLayout:
    """Source nodes in universe order; Adapter_s on the local path, Adapter_global on the global path"""
    rows = graphs.num_nodes
    propagation = PretrainPropagation([(start, _plan(graph, config)) for _, start, graph in graphs.domain_graphs],
                                      _plan(graphs.global_graph, config))
    return ModelLayout(propagation, [LOCAL_TABLE], [GLOBAL_TABLE], [(0, rows, SOURCE_ADAPTER)],
                       [(0, rows, GLOBAL_ADAPTER)], np.ascontiguousarray(text_rows[:rows], dtype=config.dtype))


def finetune_layout(graphs: FinetuneGraphs, text_rows: np.ndarray, config: TrainConfig) -> ModelLayout:
    """Target block first; Adapter_t serves target rows on the local path, Adapter_s the source rows, and
    Adapter_global all rows of the global path"""
    rows = graphs.cross_graph.num_nodes
    num_target = graphs.num_target
    text = np.empty((rows, text_rows.shape[1]), dtype=config.dtype)
    text[graphs.stack_of] = text_rows
    propagation = FinetunePropagation(_plan(graphs.cross_graph, config), _plan(graphs.global_fine_graph, config))
    return ModelLayout(propagation, [TARGET_TABLE, LOCAL_TABLE], [TARGET_GLOBAL_TABLE, GLOBAL_TABLE],
                       [(0, num_target, TARGET_ADAPTER), (num_target, rows, SOURCE_ADAPTER)],
                       [(0, rows, GLOBAL_ADAPTER)], text)


# BPR sampling and objective

class DomainTrainData:
    """Training edges of one domain in layout rows, with the data needed for negative sampling"""

    def __init__(self, domain: int, edges: np.ndarray, items: np.ndarray, num_rows: int):
        self.domain = domain
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.items = np.asarray(items, dtype=np.int64)
        self.num_rows = num_rows
        self.positive_codes = np.unique(self.edges[:, 0] * num_rows + self.edges[:, 1])


def sample_negatives(users: np.ndarray, data: DomainTrainData, rng: np.random.Generator,
                     max_tries=MAX_NEGATIVE_TRIES) -> Tuple[np.ndarray, int]:
    """Uniform same-domain negatives, redrawn while they are training positives of their user;
    returns the negatives and the number accepted after max_tries draws"""
    negatives = data.items[rng.integers(0, data.items.size, size=users.size)]
    conflict = np.isin(users * data.num_rows + negatives, data.positive_codes)
    tries = 1
    while conflict.any() and tries < max_tries:
        redraw = np.flatnonzero(conflict)
        negatives[redraw] = data.items[rng.integers(0, data.items.size, size=redraw.size)]
        conflict[redraw] = np.isin(users[redraw] * data.num_rows + negatives[redraw], data.positive_codes)
        tries += 1
    return negatives, int(np.count_nonzero(conflict))


def sample_domain_batch(data: DomainTrainData, batch_size: int, rng: np.random.Generator, n_neg=1):
    """Draws batch_size positives uniformly from the training edges, each paired with n_neg negatives"""
    if data.edges.shape[0] < 1 or data.items.size < 2:
        raise TrainingError("Domain " + str(data.domain) + " needs at least one training edge and two items")
    picks = rng.integers(0, data.edges.shape[0], size=batch_size)
    users = np.repeat(data.edges[picks, 0], n_neg)
    positives = np.repeat(data.edges[picks, 1], n_neg)
    negatives, forced = sample_negatives(users, data, rng)
    return users, positives, negatives, forced


def sample_bpr_triples(train_edges: Dict[int, np.ndarray], items: Dict[int, np.ndarray], batch_size: int,
                       rng: np.random.Generator, num_nodes=None, n_neg=1, verbose=False) -> List[BprTriple]:
    """Samples batch_size (user, positive, negative) triples per domain"""
    printer = utils.VerbosePrinter(verbose)
    if num_nodes is None:
        num_nodes = 1 + max(int(max(e.max(initial=0), items[d].max(initial=0))) for d, e in train_edges.items())
    triples = []
    for domain in sorted(train_edges):
        data = DomainTrainData(domain, train_edges[domain], items[domain], num_nodes)
        users, positives, negatives, forced = sample_domain_batch(data, batch_size, rng, n_neg)
        if forced:
            printer.warn(str(forced) + " negative(s) in domain " + str(domain) + " accepted after "
                         + str(MAX_NEGATIVE_TRIES) + " draws")
        triples.extend(BprTriple(int(u), int(p), int(n), domain) for u, p, n in zip(users, positives, negatives))
    return triples


def bpr_loss(scores_pos: np.ndarray, scores_neg: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Mean of -log sigmoid(s+ - s-) and its gradient w.r.t. every positive and negative score"""
    if scores_pos.shape != scores_neg.shape:
        raise TrainingError("Positive and negative scores differ in length")
    batch = scores_pos.shape[0]
    diff = scores_pos - scores_neg
    loss = float(np.mean(np.logaddexp(0.0, -diff)))
    weight = np.exp(-np.logaddexp(0.0, diff)) / batch
    return loss, -weight, weight


class ObjectiveValue:
    """Loss of one step and its components"""

    def __init__(self, bpr: float, reg: float):
        self.bpr = bpr
        self.reg = reg

    @property
    def loss(self) -> float:
        return self.bpr + self.reg


def objective(params: ModelParams, layout: ModelLayout, batches, reg_weight: float, reg_scope="batch",
              reg_rows=None) -> Tuple[ObjectiveValue, Dict[str, np.ndarray]]:
    """Sum over domains of mean BPR plus the regularisation of final embeddings, and all gradients.
    'batches' holds one (users, positives, negatives) array triple per domain, in layout rows."""
    final, cache = model_forward(params, layout)
    grad = np.zeros_like(final)
    bpr_total = 0.0
    reg_total = 0.0
    for users, positives, negatives in batches:
        h_u, h_p, h_n = final[users], final[positives], final[negatives]
        loss, grad_pos, grad_neg = bpr_loss(np.einsum("ij,ij->i", h_u, h_p), np.einsum("ij,ij->i", h_u, h_n))
        bpr_total += loss
        np.add.at(grad, users, grad_pos[:, None] * h_p + grad_neg[:, None] * h_n)
        np.add.at(grad, positives, grad_pos[:, None] * h_u)
        np.add.at(grad, negatives, grad_neg[:, None] * h_u)
        if reg_scope == "batch" and reg_weight:
            scale = reg_weight / users.shape[0]
            reg_total += scale * float(np.sum(h_u * h_u) + np.sum(h_p * h_p) + np.sum(h_n * h_n))
            for rows, values in ((users, h_u), (positives, h_p), (negatives, h_n)):
                np.add.at(grad, rows, 2.0 * scale * values)
    if reg_scope == "full" and reg_weight:
        rows = np.arange(final.shape[0]) if reg_rows is None else reg_rows
        scale = reg_weight / rows.shape[0]
        reg_total += scale * float(np.sum(final[rows] * final[rows]))
        grad[rows] += 2.0 * scale * final[rows]
    return ObjectiveValue(bpr_total, reg_total), model_backward(params, cache, layout, grad)


def early_stop(history: List[float], patience: int) -> EarlyStopDecision:
    """Stops once the best value (strict improvements only) is `patience` epochs old"""
    if not history:
        raise TrainingError("Early stopping needs a non-empty history")
    best_epoch = 0
    for epoch, value in enumerate(history):
        if value > history[best_epoch]:
            best_epoch = epoch
    return EarlyStopDecision(len(history) - 1 - best_epoch >= patience, best_epoch)


# Training loops

class TrainingRun:
    """Shared epoch loop of pre-training and fine-tuning"""

    def __init__(self, stage: str, params: ModelParams, layout: ModelLayout, domain_data: List[DomainTrainData],
                 validation: List[evaluation.EvalInstance], row_of: np.ndarray, config: TrainConfig,
                 reg_weight: float, epochs: int, log=None, verbose=False, diagnostics_dir="", reg_rows=None):
        self.stage = stage
        self.params = params
        self.layout = layout
        self.domain_data = domain_data
        self.validation = validation
        self.row_of = row_of
        self.config = config
        self.reg_weight = reg_weight
        self.epochs = epochs
        self.log = log if log is not None else utils.JsonLinesLog()
        self.printer = utils.VerbosePrinter(verbose)
        self.diagnostics_dir = diagnostics_dir
        self.reg_rows = reg_rows
        self.optimizer = Adam(config.lr)
        self.rng = random_stream(config.seed, stage + "/triples")
        self.forced_negatives = 0

    def validation_auc(self):
        """AUC on the validation instances, or None without validation data"""
        if not self.validation:
            return None
        final, _ = model_forward(self.params, self.layout)
        view = evaluation.EmbeddingView(final, self.row_of)
        return evaluation.auc(self.validation, evaluation.score_instances(view, self.validation))

    def _dump(self, epoch: int, batches) -> str:
        """Writes the offending batch for inspection; returns the file name"""
        if not self.diagnostics_dir:
            return ""
        filename = os.path.join(self.diagnostics_dir, self.stage + "_diagnostics_epoch" + str(epoch) + ".npz")
        arrays = {}
        for position, (users, positives, negatives) in enumerate(batches):
            arrays.update({"users_" + str(position): users, "positives_" + str(position): positives,
                           "negatives_" + str(position): negatives})
        np.savez(filename, **arrays)
        return filename

    def run(self):
        """Trains for up to `epochs` epochs; returns (best parameters, optimizer state, best epoch, history)"""
        steps = max(1, int(np.ceil(max(data.edges.shape[0] for data in self.domain_data) / self.config.batch_size)))
        history = []
        best = (self.params.copy(), self.optimizer.state.copy(), -1)
        for epoch in range(self.epochs):
            started = time.time()
            bpr_sum, reg_sum = 0.0, 0.0
            for _ in range(steps):
                batches = []
                for data in self.domain_data:
                    users, positives, negatives, forced = sample_domain_batch(data, self.config.batch_size, self.rng,
                                                                              self.config.n_train_neg)
                    if forced:
                        self.forced_negatives += forced
                        self.printer.warn(str(forced) + " negative(s) accepted after " + str(MAX_NEGATIVE_TRIES)
                                          + " draws")
                    batches.append((users, positives, negatives))
                value, grads = objective(self.params, self.layout, batches, self.reg_weight, self.config.reg_scope,
                                         self.reg_rows)
                if not np.isfinite(value.loss):
                    dump = self._dump(epoch, batches)
                    raise TrainingError("Non-finite loss in epoch " + str(epoch) + " (bpr " + repr(value.bpr)
                                        + ", reg " + repr(value.reg) + ")"
                                        + ("; batch written to '" + dump + "'" if dump else ""), code="NON_FINITE_LOSS")
                self.optimizer.step(self.params, grads)
                bpr_sum += value.bpr
                reg_sum += value.reg

            val_auc = self.validation_auc()
            history.append(val_auc)
            self.log.write({"stage": self.stage, "epoch": epoch, "loss": (bpr_sum + reg_sum) / steps,
                            "bpr": bpr_sum / steps, "reg": reg_sum / steps, "val_auc": val_auc,
                            "wall_time": round(time.time() - started, 6)})
            self.printer.print("Epoch " + str(epoch) + ": loss " + format((bpr_sum + reg_sum) / steps, ".6f")
                               + (", validation AUC " + format(val_auc, ".4f") if val_auc is not None else ""))

            if val_auc is None:
                best = (self.params.copy(), self.optimizer.state.copy(), epoch)
                continue
            decision = early_stop(history, self.config.patience)
            if decision.best_epoch == epoch:
                best = (self.params.copy(), self.optimizer.state.copy(), epoch)
            if decision.stop:
                self.printer.print("Early stopping after epoch " + str(epoch) + ", best epoch "
                                   + str(decision.best_epoch))
                break
        params, state, best_epoch = best
        return params, state, best_epoch, history


def _domain_data(split, domains: List[int], row_of: np.ndarray, num_rows: int) -> List[DomainTrainData]:
    result = []
    for domain in domains:
        edges = split.domain_part("train", domain)[:, :2]
        result.append(DomainTrainData(domain, row_of[edges], row_of[split.domain_items(domain)], num_rows))
    return result


def _validation(split, domains: List[int], config: TrainConfig, stage: str) -> List[evaluation.EvalInstance]:
    """Validation instances, sampled once per run"""
    return evaluation.sample_eval_negatives(split, "valid", config.n_eval_neg,
                                            random_stream(config.seed, stage + "/validation"), domains)


def pretrain(split, text_rows: np.ndarray, config: TrainConfig, log=None, verbose=False, config_hash="",
             neighbors=None, diagnostics_dir="") -> Checkpoint:
    """Pre-trains on the source domains; returns the best-validation checkpoint"""
    printer = utils.VerbosePrinter(verbose)
    universe = split.universe
    graphs = build_pretrain_graphs(universe, text_rows, config, neighbors)
    printer.print("Global pre-training graph: " + str(graphs.num_nodes) + " nodes, "
                  + str(graphs.global_graph.num_edges) + " edges (" + str(len(graphs.semantic_edges))
                  + " semantic)")
    layout = pretrain_layout(graphs, text_rows, config)
    params = init_pretrain_params(random_stream(config.seed, "pretrain/init"), graphs.num_nodes,
                                  text_rows.shape[1], config.d, config.h, config.dtype)

    row_of = np.full(len(universe), -1, dtype=np.int64)
    row_of[:graphs.num_nodes] = np.arange(graphs.num_nodes)
    domains = [domain for domain, _, _ in graphs.domain_graphs]
    run = TrainingRun(PRETRAIN, params, layout, _domain_data(split, domains, row_of, graphs.num_nodes),
                      _validation(split, domains, config, PRETRAIN), row_of, config, config.lambda_reg,
                      int(config.epochs), log, verbose, diagnostics_dir)
    best_params, state, best_epoch, history = run.run()
    return Checkpoint(PRETRAIN, best_params, state, config.as_dict(), graphs.fingerprints(), best_epoch, history,
                      utils.build_id(), config_hash, run.optimizer.settings(),
                      {"semantic_edges": len(graphs.semantic_edges), "forced_negatives": run.forced_negatives})


def _check_fingerprints(expected: dict, actual: dict, names) -> None:
    for name in names:
        if expected.get(name) != actual.get(name):
            raise CheckpointMismatchError("Checkpoint does not match source graphs (fingerprint '" + name
                                          + "' differs)")


def finetune_params(pretrained: ModelParams, num_target: int, config: TrainConfig) -> ModelParams:
    """Pretrained blocks (frozen) plus zero target ID rows and the target adapter"""
    params = pretrained.astype(config.dtype)
    d = params[LOCAL_TABLE].shape[1]
    params.tensors[TARGET_TABLE] = np.zeros((num_target, d), dtype=config.dtype)
    params.tensors[TARGET_GLOBAL_TABLE] = np.zeros((num_target, d), dtype=config.dtype)
    source = params.adapter(SOURCE_ADAPTER)
    if config.adapter_t_init == "copy":
        adapter = Adapter(source.w_down.copy(), source.w_up.copy(), TARGET_ADAPTER)
    else:
        adapter = init_adapter(random_stream(config.seed, "finetune/adapter"), source.d_text, source.hidden,
                               source.d, TARGET_ADAPTER, config.dtype)
    params.set_adapter(adapter)
    frozen = [LOCAL_TABLE, GLOBAL_TABLE] + adapter_blocks(SOURCE_ADAPTER) + adapter_blocks(GLOBAL_ADAPTER)
    if config.freeze_target_global:
        frozen.append(TARGET_GLOBAL_TABLE)
    return ModelParams(params.tensors, frozen)


class FinetuneSetup:
    """Everything fine-tuning, training-free inference and evaluation need"""

    def __init__(self, config: TrainConfig, graphs: FinetuneGraphs, layout: ModelLayout, row_of: np.ndarray):
        self.config = config
        self.graphs = graphs
        self.layout = layout
        self.row_of = row_of


def prepare_finetune(checkpoint: Checkpoint, split, text_rows: np.ndarray, config: TrainConfig,
                     verbose=False) -> FinetuneSetup:
    """Rebuilds the source graphs (refusing checkpoints they do not match) and assembles the fine-tuning graphs"""
    printer = utils.VerbosePrinter(verbose)
    config = config.with_structure_of(checkpoint.config)
    universe = split.universe
    pretrain_graphs = build_pretrain_graphs(universe, text_rows, config)
    source_prints = pretrain_graphs.fingerprints()
    _check_fingerprints(checkpoint.fingerprints, source_prints, sorted(source_prints))
    graphs = build_finetune_graphs(universe, text_rows, pretrain_graphs, config)
    printer.print("Cross-domain graph: " + str(len(graphs.src_tgt_edges)) + " source-target semantic edges; "
                  "enhanced global graph: " + str(len(graphs.tgt_global_edges)) + " target semantic edges")
    layout = finetune_layout(graphs, text_rows, config)
    row_of = np.full(len(universe), -1, dtype=np.int64)
    row_of[universe.num_source_nodes:] = np.arange(graphs.num_target)
    return FinetuneSetup(config, graphs, layout, row_of)


def finetune(checkpoint: Checkpoint, split, text_rows: np.ndarray, config: TrainConfig, log=None, verbose=False,
             config_hash="", diagnostics_dir="", stage=FINETUNE) -> Checkpoint:
    """Trains the target blocks on target-domain triples with all source blocks frozen"""
    if checkpoint.stage != PRETRAIN:
        raise CheckpointMismatchError("Fine-tuning needs a pre-training checkpoint, got '" + checkpoint.stage + "'")
    setup = prepare_finetune(checkpoint, split, text_rows, config, verbose)
    config = setup.config
    epochs = int(config.finetune_epochs if config.finetune_epochs is not None else config.epochs)
    if stage == ZEROSHOT:
        epochs = 0
    params = finetune_params(checkpoint.params, setup.graphs.num_target, config)
    target = split.universe.target_index
    data = _domain_data(split, [target], setup.graphs.stack_of, setup.layout.num_rows)
    reg_rows = np.arange(setup.graphs.num_target)
    run = TrainingRun(stage, params, setup.layout, data, _validation(split, [target], config, FINETUNE),
                      setup.row_of, config, config.eta_reg, epochs, log, verbose, diagnostics_dir, reg_rows)
    best_params, state, best_epoch, history = run.run()
    config_dict = config.as_dict()
    config_dict["finetune_gamma"] = config.finetune_gamma if config.finetune_gamma is not None else config.gamma
    return Checkpoint(stage, best_params, state, config_dict, setup.graphs.fingerprints(), best_epoch, history,
                      utils.build_id(), config_hash, run.optimizer.settings(),
                      {"src_tgt_edges": len(setup.graphs.src_tgt_edges),
                       "tgt_global_edges": len(setup.graphs.tgt_global_edges),
                       "forced_negatives": run.forced_negatives})


def training_free_infer(checkpoint: Checkpoint, split, text_rows: np.ndarray, config: TrainConfig,
                        verbose=False) -> evaluation.EmbeddingView:
    """Final embeddings of the target nodes from the fine-tuning graphs without any optimization step"""
    if checkpoint.stage != PRETRAIN:
        raise CheckpointMismatchError("Training-free inference needs a pre-training checkpoint")
    setup = prepare_finetune(checkpoint, split, text_rows, config, verbose)
    params = finetune_params(checkpoint.params, setup.graphs.num_target, setup.config)
    final, _ = model_forward(params, setup.layout)
    return evaluation.EmbeddingView(final, setup.row_of)


def training_free_checkpoint(checkpoint: Checkpoint, split, text_rows: np.ndarray, config: TrainConfig,
                             verbose=False, config_hash="") -> Checkpoint:
    """Checkpoint of the training-free model (fine-tuning with zero optimization steps)"""
    return finetune(checkpoint, split, text_rows, config, verbose=verbose, config_hash=config_hash, stage=ZEROSHOT)


def embed_checkpoint(checkpoint: Checkpoint, split, text_rows: np.ndarray, verbose=False):
    """Final embeddings of a checkpoint, after checking it against the rebuilt graphs; returns the view and the
    domains it covers (source domains after pre-training, the target domain otherwise)"""
    config = checkpoint.train_config()
    universe = split.universe
    if checkpoint.stage == PRETRAIN:
        graphs = build_pretrain_graphs(universe, text_rows, config)
        prints = graphs.fingerprints()
        _check_fingerprints(checkpoint.fingerprints, prints, sorted(prints))
        layout = pretrain_layout(graphs, text_rows, config)
        row_of = np.full(len(universe), -1, dtype=np.int64)
        row_of[:graphs.num_nodes] = np.arange(graphs.num_nodes)
        domains = [domain for domain, _, _ in graphs.domain_graphs]
    else:
        pretrain_graphs = build_pretrain_graphs(universe, text_rows, config)
        graphs = build_finetune_graphs(universe, text_rows, pretrain_graphs, config)
        prints = graphs.fingerprints()
        _check_fingerprints(checkpoint.fingerprints, prints, sorted(prints))
        layout = finetune_layout(graphs, text_rows, config)
        row_of = np.full(len(universe), -1, dtype=np.int64)
        row_of[universe.num_source_nodes:] = np.arange(graphs.num_target)
        domains = [universe.target_index]
    final, _ = model_forward(checkpoint.params.astype(config.dtype), layout)
    return evaluation.EmbeddingView(final, row_of), domains
