"""Robustness and transfer protocols: repeated pre-training/fine-tuning runs under varied settings, each
evaluated on the same target test instances"""

import collections
from typing import List
import numpy as np
from . import utils, training, evaluation, synth
from .training import TrainConfig, random_stream
from .io import prompts as prompt_io
from .io.provider import fetch_embeddings

GAMMA_SWEEP = "gamma-sweep"
MASKING = "masking"
COLD_START = "cold-start"
TRANSFER = "transfer"
PROTOCOLS = [GAMMA_SWEEP, MASKING, COLD_START, TRANSFER]

DEFAULT_SETTINGS = {"seeds": [42], "gammas": [0.9, 0.95, 0.99, 0.995], "mask_rates": [0.1, 0.2, 0.5],
                    "mask_types": list(prompt_io.MASK_TYPES), "cold_start_fraction": 0.05}


class ProtocolError(utils.TextBridgeError):
    code = "PROTOCOL_ERROR"


class ComponentMasker:
    """Masks field groups of synthetic text embeddings by dropping their components"""

    def __init__(self, template: np.ndarray, components: np.ndarray):
        self.template = template
        self.components = components

    def __call__(self, mask_type: int, rate: float, rng: np.random.Generator) -> np.ndarray:
        return synth.mask_field_group(self.template, self.components, mask_type, rate, rng)


class PromptMasker:
    """Masks fields of the interaction records before prompt building and re-embeds the prompts"""

    def __init__(self, records, history, universe, provider, k_recent=10, truncation_quantile=0.95, templates=None,
                 cache_file="", transport=None, verbose=False):
        self.records = records
        self.history = history
        self.universe = universe
        self.provider = provider
        self.k_recent = k_recent
        self.truncation_quantile = truncation_quantile
        self.templates = templates
        self.cache_file = cache_file
        self.transport = transport
        self.verbose = verbose

    def __call__(self, mask_type: int, rate: float, rng: np.random.Generator) -> np.ndarray:
        keys = self.universe.keys()
        masked = prompt_io.mask_nodes(keys, mask_type, rate, rng)
        prompt_set = prompt_io.build_prompts(self.records, self.k_recent, self.truncation_quantile, self.history,
                                             self.templates, masked)
        matrix = fetch_embeddings(self.provider, prompt_set, self.cache_file, self.transport, self.verbose)
        return matrix.aligned(self.universe).rows


class ExperimentData:
    """Split, universe-aligned text rows and, if masking is possible, a masker"""

    def __init__(self, split, text_rows: np.ndarray, masker=None):
        self.split = split
        self.text_rows = text_rows
        self.masker = masker


class ProtocolTable:
    """Result rows of one protocol; every row carries its settings, the overall metrics and the full report"""

    def __init__(self, name: str, rows: List[dict]):
        self.name = name
        self.rows = rows

    def reports(self) -> List[dict]:
        return [row["report"] for row in self.rows]


def sample_test_instances(split, domains, config: TrainConfig, verbose=False) -> List[evaluation.EvalInstance]:
    """Test instances of the given domains, drawn from a stream fixed by the seed"""
    return evaluation.sample_eval_negatives(split, "test", config.n_eval_neg,
                                            random_stream(config.seed, "evaluation/test"), domains, verbose)


def evaluate_view(view: evaluation.EmbeddingView, split, domains, config: TrainConfig, ks=evaluation.DEFAULT_KS,
                  config_hash="", instances=None, verbose=False) -> evaluation.MetricsReport:
    """Evaluates final embeddings on the test part of the given domains"""
    if instances is None:
        instances = sample_test_instances(split, domains, config, verbose)
    return evaluation.evaluate(view, instances, split.universe.domain_names, ks, config.hit_rate, config_hash)


def transfer_view(pretrained: training.Checkpoint, split, text_rows: np.ndarray, config: TrainConfig,
                  stage=training.FINETUNE, verbose=False) -> evaluation.EmbeddingView:
    """Target embeddings after fine-tuning, or without any training step for the zero-shot stage"""
    if stage == training.ZEROSHOT:
        return training.training_free_infer(pretrained, split, text_rows, config, verbose)
    checkpoint = training.finetune(pretrained, split, text_rows, config, verbose=verbose)
    view, _ = training.embed_checkpoint(checkpoint, split, text_rows, verbose)
    return view


def scratch_view(split, text_rows: np.ndarray, config: TrainConfig, verbose=False):
    """Trains the same model on the target domain alone; returns the view and the target-only split"""
    target = split.universe.target_index
    start, stop = split.universe.domain_range(target)
    single = split.single_domain(target)
    epochs = config.finetune_epochs if config.finetune_epochs is not None else config.epochs
    checkpoint = training.pretrain(single, text_rows[start:stop], config.replace(epochs=epochs), verbose=verbose)
    view, _ = training.embed_checkpoint(checkpoint, single, text_rows[start:stop], verbose)
    return view, single


def _shift(instances: List[evaluation.EvalInstance], offset: int, domain: int) -> List[evaluation.EvalInstance]:
    return [evaluation.EvalInstance(i.user - offset, i.pos_item - offset, tuple(n - offset for n in i.negatives),
                                    domain) for i in instances]


def _row(report: evaluation.MetricsReport, **settings) -> dict:
    row = collections.OrderedDict(settings)
    row.update(report.overall)
    row["report"] = report.as_dict()
    return row


class ProtocolRunner:
    """Runs the protocols over one data set"""

    def __init__(self, data: ExperimentData, config: TrainConfig, settings=None, ks=evaluation.DEFAULT_KS,
                 config_hash="", verbose=False):
        self.data = data
        self.config = config
        self.settings = dict(DEFAULT_SETTINGS)
        self.settings.update(settings or {})
        self.ks = tuple(ks)
        self.config_hash = config_hash
        self.printer = utils.VerbosePrinter(verbose)
        self.verbose = verbose
        self.target = data.split.universe.target_index
        if self.target is None:
            raise ProtocolError("Protocols need a target domain")

    def _evaluate(self, view, instances, split=None) -> evaluation.MetricsReport:
        split = split if split is not None else self.data.split
        return evaluate_view(view, split, [self.target], self.config, self.ks, self.config_hash, instances)

    def _transfer_run(self, config: TrainConfig, text_rows: np.ndarray, instances, stage=training.FINETUNE):
        """Pre-trains and transfers; returns the report and the pre-training checkpoint"""
        pretrained = training.pretrain(self.data.split, text_rows, config, verbose=self.verbose,
                                       config_hash=self.config_hash)
        view = transfer_view(pretrained, self.data.split, text_rows, config, stage, self.verbose)
        return self._evaluate(view, instances), pretrained

    def _seeds(self):
        for seed in self.settings["seeds"]:
            config = self.config.replace(seed=int(seed))
            yield int(seed), config, sample_test_instances(self.data.split, [self.target], config, self.verbose)

    def gamma_sweep(self) -> List[dict]:
        """Semantic-edge construction and training per gamma"""
        rows = []
        for seed, config, instances in self._seeds():
            for gamma in sorted(self.settings["gammas"]):
                self.printer.print("gamma-sweep: seed " + str(seed) + ", gamma " + str(gamma))
                run_config = config.replace(gamma=gamma, finetune_gamma=None)
                pretrained = training.pretrain(self.data.split, self.data.text_rows, run_config,
                                               verbose=self.verbose, config_hash=self.config_hash)
                finetuned = training.finetune(pretrained, self.data.split, self.data.text_rows, run_config,
                                              verbose=self.verbose)
                view, _ = training.embed_checkpoint(finetuned, self.data.split, self.data.text_rows)
                rows.append(_row(self._evaluate(view, instances), seed=seed, gamma=gamma,
                                 pretrain_edges=pretrained.extra["semantic_edges"],
                                 src_tgt_edges=finetuned.extra["src_tgt_edges"],
                                 tgt_global_edges=finetuned.extra["tgt_global_edges"]))
        return rows

    def masking(self) -> List[dict]:
        """Baseline, then every mask type at every rate; masks apply to the text before ingestion"""
        if self.data.masker is None:
            raise ProtocolError("Masking needs synthetic field components or an embedding provider")
        rows = []
        for seed, config, instances in self._seeds():
            report, _ = self._transfer_run(config, self.data.text_rows, instances)
            rows.append(_row(report, seed=seed, mask_type=None, rate=0.0))
            for mask_type in self.settings["mask_types"]:
                for rate in self.settings["mask_rates"]:
                    self.printer.print("masking: seed " + str(seed) + ", type " + str(mask_type) + ", rate "
                                       + str(rate))
                    rng = random_stream(seed, "masking/" + str(mask_type) + "/" + repr(float(rate)))
                    text_rows = self.data.masker(int(mask_type), float(rate), rng)
                    report, _ = self._transfer_run(config, text_rows, instances)
                    rows.append(_row(report, seed=seed, mask_type=int(mask_type), rate=float(rate)))
        return rows

    def cold_start(self) -> List[dict]:
        """Fine-tuning on the full target training data and on a uniform fraction of it; source pre-training is
        shared"""
        fraction = self.settings["cold_start_fraction"]
        rows = []
        for seed, config, instances in self._seeds():
            full, pretrained = self._transfer_run(config, self.data.text_rows, instances)
            rows.append(_row(full, seed=seed, fraction=1.0,
                             train_edges=int(self.data.split.domain_part("train", self.target).shape[0])))
            cold = self.data.split.subsample_train(self.target, fraction, random_stream(seed, "cold-start"))
            view = transfer_view(pretrained, cold, self.data.text_rows, config, training.FINETUNE, self.verbose)
            rows.append(_row(self._evaluate(view, instances, cold), seed=seed, fraction=fraction,
                             train_edges=int(cold.domain_part("train", self.target).shape[0])))
        return rows

    def transfer(self) -> List[dict]:
        """Fine-tuning, training-free inference, training-free inference on shuffled target text and
        target-only training from scratch"""
        rows = []
        start, _ = self.data.split.universe.domain_range(self.target)
        for seed, config, instances in self._seeds():
            report, pretrained = self._transfer_run(config, self.data.text_rows, instances)
            rows.append(_row(report, seed=seed, arm="finetune"))
            view = transfer_view(pretrained, self.data.split, self.data.text_rows, config, training.ZEROSHOT)
            rows.append(_row(self._evaluate(view, instances), seed=seed, arm="zeroshot"))

            shuffled = self.data.text_rows.copy()
            permutation = random_stream(seed, "transfer/shuffle").permutation(shuffled.shape[0] - start)
            shuffled[start:] = self.data.text_rows[start:][permutation]
            view = transfer_view(pretrained, self.data.split, shuffled, config, training.ZEROSHOT)
            rows.append(_row(self._evaluate(view, instances), seed=seed, arm="zeroshot-shuffled"))

            view, single = scratch_view(self.data.split, self.data.text_rows, config, self.verbose)
            report = evaluate_view(view, single, [0], config, self.ks, self.config_hash, _shift(instances, start, 0))
            rows.append(_row(report, seed=seed, arm="scratch"))
        return rows


def run_protocol(name: str, data: ExperimentData, config: TrainConfig, settings=None, ks=evaluation.DEFAULT_KS,
                 config_hash="", verbose=False) -> ProtocolTable:
    """Runs a named protocol and returns its result table"""
    if name not in PROTOCOLS:
        raise ProtocolError("Unknown protocol '" + name + "' (expected one of " + ", ".join(PROTOCOLS) + ")",
                            code="UNKNOWN_PROTOCOL")
    runner = ProtocolRunner(data, config, settings, ks, config_hash, verbose)
    actions = {GAMMA_SWEEP: runner.gamma_sweep, MASKING: runner.masking, COLD_START: runner.cold_start,
               TRANSFER: runner.transfer}
    return ProtocolTable(name, actions[name]())
