import collections
from typing import List, Tuple, Dict
import numpy as np
import scipy.special
from . import utils

EvalInstance = collections.namedtuple("EvalInstance", ["user", "pos_item", "negatives", "domain"])

DEFAULT_KS = (10, 20)


class EvaluationError(utils.TextBridgeError):
    code = "EVALUATION_ERROR"


class EmbeddingView:
    """Final embeddings addressed by universe node index; row_of maps a node to its row (-1 if absent)"""

    def __init__(self, final: np.ndarray, row_of: np.ndarray):
        self.final = final
        self.row_of = np.asarray(row_of, dtype=np.int64)

    def rows(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        rows = self.row_of[nodes]
        if np.any(rows < 0):
            raise EvaluationError("Node " + str(int(nodes[rows < 0][0])) + " has no final embedding")
        return rows

    def vector(self, node: int) -> np.ndarray:
        return self.final[self.rows([node])[0]]

    def scores(self, users, items) -> np.ndarray:
        """sigmoid(h_u . h_v) for aligned arrays of users and items, computed in 64-bit"""
        u = self.final[self.rows(users)].astype(np.float64)
        v = self.final[self.rows(items)].astype(np.float64)
        return scipy.special.expit(np.einsum("ij,ij->i", u, v))


def sample_eval_negatives(split, part="test", n_neg=100, rng=None, domains=None, verbose=False) -> List[EvalInstance]:
    """Pairs every positive of a split part with up to n_neg distinct same-domain items the user never
    interacted with (in any part), drawn uniformly without replacement"""
    printer = utils.VerbosePrinter(verbose)
    rng = rng if rng is not None else np.random.default_rng(0)
    if domains is None:
        domains = range(len(split.universe.domain_names))
    instances = []
    skipped = 0
    clipped = 0
    for domain in domains:
        items = split.domain_items(domain)
        positives = split.positives(domain)
        for user, item, _ in split.domain_part(part, domain).tolist():
            known = np.fromiter(positives.get(user, ()), dtype=np.int64)
            candidates = np.setdiff1d(items, known)
            if candidates.size < 1:
                skipped += 1
                continue
            count = min(n_neg, candidates.size)
            if count < n_neg:
                clipped += 1
            negatives = rng.choice(candidates, size=count, replace=False)
            instances.append(EvalInstance(user, item, tuple(negatives.tolist()), domain))
    if skipped:
        printer.warn("Skipped " + str(skipped) + " instance(s) without candidate negatives")
    if clipped:
        printer.warn("Clipped the number of negatives of " + str(clipped) + " instance(s) to the available items")
    return instances


def score_instances(view: EmbeddingView, instances: List[EvalInstance]) -> List[Tuple[float, np.ndarray]]:
    """Scores the positive and all negatives of every instance"""
    if not instances:
        return []
    users, items, counts = [], [], []
    for instance in instances:
        pool = (instance.pos_item,) + tuple(instance.negatives)
        users.extend([instance.user] * len(pool))
        items.extend(pool)
        counts.append(len(pool))
    scores = view.scores(users, items)
    result = []
    for block in np.split(scores, np.cumsum(counts)[:-1]):
        result.append((float(block[0]), block[1:]))
    return result


def _check_finite(instance: EvalInstance, pos: float, negs: np.ndarray) -> None:
    if not np.isfinite(pos):
        raise EvaluationError("Non-finite score for pair (" + str(instance.user) + ", " + str(instance.pos_item) + ")")
    bad = np.flatnonzero(~np.isfinite(negs))
    if bad.size:
        raise EvaluationError("Non-finite score for pair (" + str(instance.user) + ", "
                              + str(instance.negatives[bad[0]]) + ")")


def auc(instances: List[EvalInstance], scores: List[Tuple[float, np.ndarray]]) -> float:
    """Mean over instances of (#negatives below the positive + 0.5 #ties) / #negatives"""
    if not instances:
        raise EvaluationError("No evaluation instances")
    total = 0.0
    for instance, (pos, negs) in zip(instances, scores):
        _check_finite(instance, pos, negs)
        negs = np.asarray(negs)
        total += (np.count_nonzero(negs < pos) + 0.5 * np.count_nonzero(negs == pos)) / negs.size
    return total / len(instances)


def rank_metrics(instances: List[EvalInstance], scores: List[Tuple[float, np.ndarray]], k: int,
                 hit_rate=False) -> Tuple[float, float]:
    """Recall@K and precision@K. Per user, all test positives and all sampled negatives form one pool ranked
    by score (ties by ascending item index); with hit_rate, every instance is ranked on its own instead."""
    if k < 1:
        raise EvaluationError("K must be at least 1")
    if not instances:
        raise EvaluationError("No evaluation instances")
    if hit_rate:
        hits = []
        for instance, (pos, negs) in zip(instances, scores):
            _check_finite(instance, pos, negs)
            negative_items = np.asarray(instance.negatives)
            rank = np.count_nonzero(negs > pos) + np.count_nonzero((negs == pos) & (negative_items < instance.pos_item))
            hits.append(1.0 if rank < k else 0.0)
        recall = float(np.mean(hits))
        return recall, recall / k

    pools = collections.OrderedDict()                               # type: Dict[int, Dict[int, float]]
    positives = {}
    for instance, (pos, negs) in zip(instances, scores):
        _check_finite(instance, pos, negs)
        pool = pools.setdefault(instance.user, {})
        pool[instance.pos_item] = pos
        positives.setdefault(instance.user, set()).add(instance.pos_item)
        for item, value in zip(instance.negatives, np.asarray(negs).tolist()):
            pool.setdefault(item, value)

    recalls, precisions = [], []
    for user, pool in pools.items():
        ranked = sorted(pool.items(), key=lambda entry: (-entry[1], entry[0]))[:k]
        hits = sum(1 for item, _ in ranked if item in positives[user])
        recalls.append(hits / len(positives[user]))
        precisions.append(hits / k)
    return float(np.mean(recalls)), float(np.mean(precisions))


class MetricsReport:
    """AUC, recall@K and precision@K per domain and averaged over domains"""

    def __init__(self, per_domain: Dict[str, dict], counts: Dict[str, dict], ks=DEFAULT_KS, config_hash="",
                 hit_rate=False):
        self.per_domain = per_domain
        self.counts = counts
        self.ks = tuple(ks)
        self.config_hash = config_hash
        self.hit_rate = hit_rate
        names = ["auc"] + ["recall@" + str(k) for k in self.ks] + ["precision@" + str(k) for k in self.ks]
        self.overall = {name: float(np.mean([values[name] for values in per_domain.values()])) for name in names} \
            if per_domain else {name: None for name in names}

    @property
    def auc(self) -> float:
        return self.overall["auc"]

    def recall(self, k: int) -> float:
        return self.overall["recall@" + str(k)]

    def precision(self, k: int) -> float:
        return self.overall["precision@" + str(k)]

    def as_dict(self) -> dict:
        data = dict(self.overall)
        data.update({"per_domain": self.per_domain, "counts": self.counts, "config_hash": self.config_hash,
                     "recall_mode": "hit_rate" if self.hit_rate else "per_user"})
        return data

    def csv_rows(self) -> List[list]:
        """Flat table with one row per domain and metric"""
        rows = [["domain", "metric", "value"]]
        for domain, values in self.per_domain.items():
            rows.extend([domain, name, values[name]] for name in sorted(values))
        rows.extend(["mean", name, value] for name, value in sorted(self.overall.items()))
        return rows


def evaluate(view: EmbeddingView, instances: List[EvalInstance], domain_names: List[str], ks=DEFAULT_KS,
             hit_rate=False, config_hash="") -> MetricsReport:
    """Scores the instances and computes all metrics per domain"""
    scores = score_instances(view, instances)
    grouped = collections.OrderedDict()
    for instance, score_pair in zip(instances, scores):
        grouped.setdefault(instance.domain, ([], []))
        grouped[instance.domain][0].append(instance)
        grouped[instance.domain][1].append(score_pair)
    if not grouped:
        raise EvaluationError("No evaluation instances", code="EMPTY_EVALUATION")

    per_domain = collections.OrderedDict()
    counts = collections.OrderedDict()
    for domain in sorted(grouped):
        domain_instances, domain_scores = grouped[domain]
        values = {"auc": auc(domain_instances, domain_scores)}
        for k in ks:
            recall, precision = rank_metrics(domain_instances, domain_scores, k, hit_rate)
            values["recall@" + str(k)] = recall
            values["precision@" + str(k)] = precision
        name = domain_names[domain]
        per_domain[name] = values
        counts[name] = {"instances": len(domain_instances), "users": len(set(i.user for i in domain_instances))}
    return MetricsReport(per_domain, counts, ks, config_hash, hit_rate)
