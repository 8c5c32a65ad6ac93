from typing import List, Dict, Set
import pkg_resources
import numpy as np
from . import iobase
from .interactions import InteractionRecord
from .. import utils
from ..graph import USER, ITEM, node_key

# Field groups addressed by the masking protocol
MASK_IDENTIFIERS = 0
MASK_REVIEWS = 1
MASK_TITLES = 2
MASK_DESCRIPTIONS = 3
MASK_NUMERIC = 4
MASK_TYPES = [MASK_IDENTIFIERS, MASK_REVIEWS, MASK_TITLES, MASK_DESCRIPTIONS, MASK_NUMERIC]
MASK_FIELDS = {
    MASK_IDENTIFIERS: ["key", "user_key", "item_key"],
    MASK_REVIEWS: ["review"],
    MASK_TITLES: ["title"],
    MASK_DESCRIPTIONS: ["description", "features"],
    MASK_NUMERIC: ["brand", "price", "salesRank"],
}


def default_template_file() -> str:
    """Returns the name of the packaged prompt template file"""
    return pkg_resources.resource_filename("pytextbridge", "data/promptTemplates.yml")


def load_templates(filename="") -> dict:
    """Reads a prompt template file (default: the packaged one)"""
    templates = utils.parse_yaml(filename or default_template_file())
    for section in (USER, ITEM):
        if section not in templates:
            raise iobase.InputFileError("Prompt template file lacks section '" + section + "'")
    return templates


class PromptSet:
    """One prompt per node key, all truncated at a common length cap"""

    def __init__(self, keys: List[str], prompts: List[str], truncation_quantile: float, k_recent: int,
                 length_cap: int, template_version=None):
        self.keys = list(keys)
        self.prompts = list(prompts)
        self.truncation_quantile = truncation_quantile
        self.k_recent = k_recent
        self.length_cap = length_cap
        self.template_version = template_version

    def __len__(self) -> int:
        return len(self.keys)

    def prompt(self, key: str) -> str:
        return self.prompts[self.keys.index(key)]

    def as_dict(self) -> dict:
        return {"truncation_quantile": self.truncation_quantile, "k_recent": self.k_recent,
                "length_cap": self.length_cap, "template_version": self.template_version,
                "prompts": [{"key": key, "prompt": prompt} for key, prompt in zip(self.keys, self.prompts)]}

    @staticmethod
    def from_dict(data: dict) -> "PromptSet":
        entries = data.get("prompts", [])
        return PromptSet([entry["key"] for entry in entries], [entry["prompt"] for entry in entries],
                         data.get("truncation_quantile"), data.get("k_recent"), data.get("length_cap"),
                         data.get("template_version"))


def write_prompts(filename: str, prompts: PromptSet, provenance=None) -> None:
    """Writes prompts as canonical JSON, with optional provenance fields (config hash, build id)"""
    document = prompts.as_dict()
    document.update(provenance or {})
    utils.write_json(filename, document)


def read_prompts(filename: str) -> PromptSet:
    try:
        return PromptSet.from_dict(utils.read_json(filename))
    except FileNotFoundError as e:
        raise iobase.InputFileError(str(e), code="MISSING_INPUT")


def _render(template: str, fields: dict, masked: Set[int]) -> str:
    """Fills a template, blanking every field of a masked group"""
    values = dict(fields)
    for group in masked:
        for field in MASK_FIELDS[group]:
            values[field] = ""
    return template.format(**values)


def _item_metadata(records: List[InteractionRecord]) -> Dict[str, dict]:
    """Collects the first non-empty value of every metadata field per item node"""
    metadata = {}
    for record in records:
        entry = metadata.setdefault(node_key(record.domain, ITEM, record.item_key), {})
        for field, value in record.item_meta.items():
            if value and field not in entry:
                entry[field] = value
    return metadata


def _meta_fields(meta: dict) -> dict:
    return {field: meta.get(field, "") for field in ["title", "description", "features", "brand", "price",
                                                     "salesRank"]}


def build_prompts(records: List[InteractionRecord], k_recent=10, truncation_quantile=0.95, history=None,
                  templates=None, masked=None) -> PromptSet:
    """Builds one prompt per user and item. Histories come from 'history' (default: all records), the k most
    recent first; nodes without history get a metadata-only prompt. Prompts are cut at the given quantile of
    the raw prompt lengths."""
    if not records:
        raise iobase.InputFileError("Cannot build prompts without interaction records", code="EMPTY_INPUT")
    if not 0.0 < truncation_quantile <= 1.0:
        raise utils.TextBridgeError("truncation_quantile must lie in (0, 1]", code="CONFIG_ERROR")
    if k_recent < 0:
        raise utils.TextBridgeError("k_recent must not be negative", code="CONFIG_ERROR")
    templates = templates if templates is not None else load_templates()
    masked = masked or {}
    history = records if history is None else history
    metadata = _item_metadata(records)
    separator = templates.get("separator", " ")

    # Histories, most recent first (stable for equal timestamps)
    user_history = {}
    item_history = {}
    for record in sorted(history, key=lambda r: -r.timestamp):
        user_history.setdefault(node_key(record.domain, USER, record.user_key), []).append(record)
        item_history.setdefault(node_key(record.domain, ITEM, record.item_key), []).append(record)

    nodes = []
    for record in records:
        nodes.append((node_key(record.domain, USER, record.user_key), USER, record.domain, record.user_key))
        nodes.append((node_key(record.domain, ITEM, record.item_key), ITEM, record.domain, record.item_key))
    nodes = sorted(set(nodes))

    keys, raw = [], []
    for external_key, kind, domain, key in nodes:
        template = templates[kind]
        node_mask = masked.get(external_key, set())
        if kind == USER:
            parts = [_render(template["header"], {"key": key, "domain": domain}, node_mask)]
            entries = user_history.get(external_key, [])[:k_recent]
            fields = [dict(_meta_fields(metadata.get(node_key(r.domain, ITEM, r.item_key), {})),
                           item_key=r.item_key, review=r.review_text or "") for r in entries]
        else:
            fields_self = dict(_meta_fields(metadata.get(external_key, {})), key=key, domain=domain)
            parts = [_render(template[name], fields_self, node_mask) for name in ("header", "details", "numeric")]
            entries = item_history.get(external_key, [])[:k_recent]
            fields = [{"user_key": r.user_key, "review": r.review_text or ""} for r in entries]
        if fields:
            parts.append(template["history_intro"])
            parts.extend(_render(template["history_entry"], entry, node_mask) for entry in fields)
        else:
            parts.append(template["empty"])
        keys.append(external_key)
        raw.append(separator.join(parts))

    lengths = np.array([len(prompt) for prompt in raw], dtype=np.int64)
    length_cap = int(np.quantile(lengths, truncation_quantile, method="lower"))
    prompts = [prompt[:length_cap] for prompt in raw]
    return PromptSet(keys, prompts, truncation_quantile, k_recent, length_cap, templates.get("version"))


def mask_nodes(keys: List[str], mask_type: int, rate: float, rng: np.random.Generator) -> Dict[str, Set[int]]:
    """Selects round(rate * n) nodes uniformly and marks the field group of a mask type for them"""
    if mask_type not in MASK_TYPES:
        raise utils.TextBridgeError("Unknown mask type " + str(mask_type), code="CONFIG_ERROR")
    count = int(round(rate * len(keys)))
    if count == 0:
        return {}
    chosen = rng.choice(len(keys), size=count, replace=False)
    return {keys[position]: {mask_type} for position in sorted(chosen.tolist())}
