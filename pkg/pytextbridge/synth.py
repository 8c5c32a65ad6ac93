"""Synthetic multi-domain interaction data with text embeddings that share semantics across domains.

Every domain draws user and item factors as sqrt(rho) * common + sqrt(1 - rho) * own, where the common part is
shared by the users (items) with the same index in all domains. Interactions are the top density * U * I noisy
dot products; the target domain (the last one) is sparser by target_density_ratio. Text embeddings are a common
template vector plus five field-group components (identifiers, reviews, titles, descriptions, numeric fields),
each a noisy projection of the node's factors. Users and items are projected differently, so their text only
predicts interactions through a learned adapter, and every domain mixes a common projection with its own one
by the same rho. Masking a field group removes its component.
"""

import collections
from typing import List, Dict
import numpy as np
from . import utils
from .graph import USER, ITEM, node_key
from .io.interactions import InteractionRecord
from .io.embeddings import TextEmbeddingMatrix

NUM_FIELD_GROUPS = 5
FIELD_WEIGHTS = [0.1, 0.35, 0.25, 0.2, 0.1]
TOPIC_WORDS = ["classic", "modern", "cozy", "bold", "bright", "dark", "soft", "rugged", "playful", "elegant",
               "compact", "sturdy", "vintage", "sporty", "gentle", "festive", "outdoor", "family", "quiet", "loud",
               "warm", "cool", "handmade", "digital", "seasonal", "travel", "budget", "premium", "minimal", "lush",
               "rustic", "urban"]
BRANDS = ["Acme", "Northwind", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Stark"]


class SynthError(utils.TextBridgeError):
    code = "SYNTH_ERROR"


class SynthSpec:
    """Parameters of the synthetic generator"""

    DEFAULTS = collections.OrderedDict([
        ("n_domains", 3), ("users_per_domain", 300), ("items_per_domain", 300), ("latent_dim", 16), ("rho", 0.8),
        ("density", 0.02), ("target_density_ratio", 0.25), ("noise", 0.1), ("text_noise", 0.1), ("text_dim", 64),
        ("text_offset", 6.0), ("seed", 42), ("domain_names", None), ("start_time", 1500000000), ("time_span", 31536000),
    ])

    def __init__(self, **kwargs):
        unknown = set(kwargs).difference(self.DEFAULTS)
        if unknown:
            raise SynthError("Unknown synth parameter(s) " + ", ".join(sorted(unknown)), code="CONFIG_ERROR")
        for name, default in self.DEFAULTS.items():
            setattr(self, name, kwargs.get(name, default))
        if self.domain_names is None:
            self.domain_names = ["domain" + str(i) for i in range(self.n_domains)]
        self.domain_names = list(self.domain_names)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.density <= 1.0:
            raise SynthError("density must lie in (0, 1]", code="CONFIG_ERROR")
        if not 0.0 < self.target_density_ratio <= 1.0:
            raise SynthError("target_density_ratio must lie in (0, 1]", code="CONFIG_ERROR")
        if not 0.0 <= self.rho <= 1.0:
            raise SynthError("rho must lie in [0, 1]", code="CONFIG_ERROR")
        if self.n_domains < 1 or len(self.domain_names) != self.n_domains:
            raise SynthError("Expected " + str(self.n_domains) + " domain names", code="CONFIG_ERROR")
        if min(self.users_per_domain, self.items_per_domain, self.latent_dim, self.text_dim) < 1:
            raise SynthError("Sizes and dimensions must be positive", code="CONFIG_ERROR")
        if self.noise < 0 or self.text_noise < 0 or self.text_offset < 0:
            raise SynthError("Noise levels and text offset must not be negative", code="CONFIG_ERROR")

    def as_dict(self) -> dict:
        return collections.OrderedDict((name, getattr(self, name)) for name in self.DEFAULTS)

    @property
    def target_domain(self) -> str:
        return self.domain_names[-1]

    def domain_density(self, name: str) -> float:
        """Interaction density of a domain; the target domain is sparser by target_density_ratio"""
        return self.density * (self.target_density_ratio if name == self.target_domain else 1.0)

    def domain_count(self, name: str) -> int:
        return int(round(self.domain_density(name) * self.users_per_domain * self.items_per_domain))


class SynthData:
    """Output of the generator; text rows, components and factors follow the order of text.keys"""

    def __init__(self, spec: SynthSpec, records: List[InteractionRecord], text: TextEmbeddingMatrix,
                 template: np.ndarray, field_components: np.ndarray, factors: Dict[str, np.ndarray]):
        self.spec = spec
        self.records = records
        self.text = text
        self.template = template
        self.field_components = field_components
        self.factors = factors

    def manifest(self) -> dict:
        keys = [record.domain + "\t" + record.user_key + "\t" + record.item_key for record in self.records]
        return {"spec": self.spec.as_dict(), "records": len(self.records), "nodes": len(self.text),
                "key_checksum": utils.sha256_hex("\n".join(keys)), "text_checksum": utils.sha256_hex(
                    self.text.rows.astype("<f4").tobytes())}


def compose_text(template: np.ndarray, components: np.ndarray, masked=None) -> np.ndarray:
    """Sums the template and the field components per node in 64-bit and rounds to 32-bit; masked is an
    optional (groups, nodes) boolean array of components to leave out"""
    total = np.broadcast_to(template, components.shape[1:]).astype(np.float64)
    for group in range(components.shape[0]):
        if masked is None:
            total = total + components[group]
        else:
            total = total + np.where(masked[group][:, None], 0.0, components[group])
    return total.astype(np.float32)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)


def _words(factors: np.ndarray, count: int) -> List[List[str]]:
    """Topic words of the strongest factor directions"""
    result = []
    for row in factors:
        strongest = np.argsort(-np.abs(row), kind="stable")[:count]
        result.append([TOPIC_WORDS[(2 * int(dim) + int(row[dim] < 0)) % len(TOPIC_WORDS)] for dim in strongest])
    return result


def generate(spec: SynthSpec) -> SynthData:
    """Generates interactions, text embeddings and ground-truth factors, fully determined by spec.seed"""
    rng = np.random.default_rng(spec.seed)
    k = spec.latent_dim
    n_users, n_items = spec.users_per_domain, spec.items_per_domain
    for name in spec.domain_names:
        if spec.domain_count(name) < 1:
            raise SynthError("Density " + str(spec.domain_density(name)) + " yields no interactions in domain '"
                             + name + "'")

    common_users = rng.normal(size=(n_users, k))
    common_items = rng.normal(size=(n_items, k))
    # Text projections per node kind (users, items) and field group
    common_projections = rng.normal(size=(2, NUM_FIELD_GROUPS, spec.text_dim, k))
    template = _unit_rows(rng.normal(size=(1, spec.text_dim)))[0] * spec.text_offset
    shared, own = np.sqrt(spec.rho), np.sqrt(1.0 - spec.rho)

    records = []
    keys, factors = [], {}
    signals = [[] for _ in range(NUM_FIELD_GROUPS)]
    for name in spec.domain_names:
        count = spec.domain_count(name)
        users = shared * common_users + own * rng.normal(size=(n_users, k))
        items = shared * common_items + own * rng.normal(size=(n_items, k))
        projections = shared * common_projections + own * rng.normal(size=common_projections.shape)
        factors[name + "/users"] = users
        factors[name + "/items"] = items
        scores = users @ items.T / np.sqrt(k) + spec.noise * rng.normal(size=(n_users, n_items))
        chosen = np.argsort(-scores.ravel(), kind="stable")[:count]
        timestamps = spec.start_time + rng.integers(0, spec.time_span, size=count)

        item_words = _words(items, 2)
        popularity = np.bincount(chosen % n_items, minlength=n_items)
        sales_rank = np.empty(n_items, dtype=np.int64)
        sales_rank[np.argsort(-popularity, kind="stable")] = np.arange(1, n_items + 1)
        for position, cell in enumerate(chosen.tolist()):
            user, item = divmod(cell, n_items)
            shared_dim = int(np.argmax(users[user] * items[item]))
            records.append(InteractionRecord(
                "U" + format(user, "05d"), "I" + format(item, "05d"), int(timestamps[position]), name,
                "Really " + TOPIC_WORDS[(2 * shared_dim) % len(TOPIC_WORDS)] + " and "
                + item_words[item][0] + ", would buy again",
                {"title": " ".join(item_words[item]) + " item " + str(item),
                 "description": "A " + item_words[item][1] + " piece for every " + item_words[item][0] + " home",
                 "features": ", ".join(item_words[item]),
                 "brand": BRANDS[int(np.argmax(items[item])) % len(BRANDS)],
                 "price": format(5.0 + 10.0 * float(np.abs(items[item]).mean()), ".2f"),
                 "salesRank": str(int(sales_rank[item]))}))

        # Text rows only for nodes that interact at all
        active_users = np.unique(chosen // n_items)
        active_items = np.unique(chosen % n_items)
        keys.extend(node_key(name, USER, "U" + format(u, "05d")) for u in active_users.tolist())
        keys.extend(node_key(name, ITEM, "I" + format(i, "05d")) for i in active_items.tolist())
        for group in range(NUM_FIELD_GROUPS):
            signals[group].append(_unit_rows(users[active_users] @ projections[0, group].T))
            signals[group].append(_unit_rows(items[active_items] @ projections[1, group].T))

    components = np.empty((NUM_FIELD_GROUPS, len(keys), spec.text_dim))
    for group in range(NUM_FIELD_GROUPS):
        scale = np.sqrt(FIELD_WEIGHTS[group])
        signal = np.concatenate(signals[group], axis=0)
        noise = rng.normal(size=signal.shape) / np.sqrt(spec.text_dim)
        components[group] = scale * (signal + spec.text_noise * noise)
    text = TextEmbeddingMatrix(keys, compose_text(template, components), "synth:seed=" + str(spec.seed))
    return SynthData(spec, records, text, template, components, factors)


def write_factors(filename: str, data: SynthData) -> None:
    """Saves factors, template and field components (with their node keys) as .npz"""
    arrays = {"factors/" + name: values for name, values in data.factors.items()}
    arrays.update({"template": data.template, "field_components": data.field_components,
                   "keys": np.array(data.text.keys)})
    with open(filename, "wb") as f:
        np.savez(f, **arrays)


def read_field_components(filename: str):
    """Loads (keys, template, field components) saved by write_factors"""
    with np.load(filename) as archive:
        return [str(key) for key in archive["keys"]], archive["template"], archive["field_components"]


def align_components(keys: List[str], components: np.ndarray, universe) -> np.ndarray:
    """Reorders field components (groups, nodes, dim) into universe index order"""
    positions = {key: position for position, key in enumerate(keys)}
    missing = [key for key in universe.keys() if key not in positions]
    if missing:
        raise SynthError("No field components for node '" + missing[0] + "'")
    order = np.array([positions[key] for key in universe.keys()], dtype=np.int64)
    return components[:, order]


def mask_field_group(template: np.ndarray, components: np.ndarray, mask_type: int, rate: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Text rows with one field group removed for round(rate * n) uniformly chosen nodes"""
    if not 0 <= mask_type < NUM_FIELD_GROUPS:
        raise SynthError("Unknown mask type " + str(mask_type), code="CONFIG_ERROR")
    num_nodes = components.shape[1]
    masked = np.zeros(components.shape[:2], dtype=bool)
    chosen = rng.choice(num_nodes, size=int(round(rate * num_nodes)), replace=False)
    masked[mask_type, chosen] = True
    return compose_text(template, components, masked)
