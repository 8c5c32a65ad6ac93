"""Small data sets shared by the test modules"""

import numpy as np
from .. import synth, training, protocols
from ..graph import GraphUniverse, USER, ITEM
from ..io import interactions, provider


def small_spec(**kwargs) -> synth.SynthSpec:
    values = dict(n_domains=3, users_per_domain=20, items_per_domain=20, latent_dim=4, density=0.15, text_dim=8,
                  seed=7, target_density_ratio=1.0)
    values.update(kwargs)
    return synth.SynthSpec(**values)


def small_config(**kwargs) -> training.TrainConfig:
    values = dict(d=4, epochs=2, batch_size=32, n_eval_neg=5, k_cap=5, precision="float64", gamma=0.9, lr=0.01,
                  patience=50)
    values.update(kwargs)
    return training.TrainConfig(**values)


class SynthExperiment:
    """Synthetic data, its temporal split (last domain as target) and the text rows in universe order"""

    def __init__(self, spec: synth.SynthSpec):
        self.data = synth.generate(spec)
        self.split = interactions.temporal_split(self.data.records, (0.8, 0.1, 0.1), spec.domain_names,
                                                 spec.target_domain)
        self.text_rows = self.data.text.aligned(self.split.universe).rows.astype(np.float64)
        self.components = synth.align_components(self.data.text.keys, self.data.field_components,
                                                 self.split.universe)

    def protocol_data(self) -> protocols.ExperimentData:
        masker = protocols.ComponentMasker(self.data.template, self.components)
        return protocols.ExperimentData(self.split, self.text_rows, masker)


class SmallExperiment(SynthExperiment):
    """Three domains of 20 users and 20 items"""

    def __init__(self, **kwargs):
        super().__init__(small_spec(**kwargs))


def tiny_universe(num_domains=3, users=2, items=2, with_target=True) -> GraphUniverse:
    """Domains 'A', 'B', ... with a fixed set of users and items each; the last domain is the target"""
    names = [chr(ord("A") + position) for position in range(num_domains)]
    universe = GraphUniverse(names, names[-1] if with_target else None)
    for name in names:
        for position in range(users):
            universe.add_node(name, USER, "u" + str(position))
        for position in range(items):
            universe.add_node(name, ITEM, "i" + str(position))
    universe.freeze()
    return universe


def tiny_split(num_domains=3, users=3, items=6, with_target=True) -> interactions.SplitDataset:
    """Every user of every domain interacts with two items in training, one in validation and one in test"""
    universe = tiny_universe(num_domains, users, items, with_target)
    train, valid, test = [], [], []
    clock = 0
    for domain in range(num_domains):
        start, _ = universe.domain_range(domain)
        for user in range(users):
            picks = [start + users + (user + offset) % items for offset in range(items)]
            for part, item in zip([train, train, valid, test], picks):
                clock += 1
                part.append([start + user, item, clock])
    return interactions.SplitDataset(universe, train, valid, test)


def bookshop_records() -> list:
    return [interactions.InteractionRecord("alice", "book1", 10, "Books", "Great", {"title": "Dune", "price": "9.99"}),
            interactions.InteractionRecord("alice", "book2", 20, "Books", "Meh", {"brand": "Acme"}),
            interactions.InteractionRecord("bob", "book1", 15, "Books")]


class StubTransport:
    """Embeds a text as (length, number of spaces, first character code), optionally failing first"""

    def __init__(self, failures=0, dim=3):
        self.failures = failures
        self.dim = dim
        self.requests = []

    def post(self, inputs):
        self.requests.append(list(inputs))
        if self.failures > 0:
            self.failures -= 1
            raise provider.TransientProviderError("Provider returned HTTP 503")
        return [[float(len(text)), float(text.count(" ")), float(ord(text[0]))][:self.dim] for text in inputs]
