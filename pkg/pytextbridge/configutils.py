import os
import copy
import pkg_resources
from . import utils
from .training import TrainConfig
from .synth import SynthSpec
from .io.provider import ProviderSettings

SECTIONS = ["paths", "data", "prompts", "provider", "training", "evaluation", "synth", "protocols"]
SECRET_FIELDS = [("provider", "token")]
# Left out of the config hash
UNHASHED_FIELDS = SECRET_FIELDS + [("paths", "output_dir")]

# Default file names in the output directory
DEFAULT_FILES = {
    "interactions": "interactions.tsv",
    "embeddings": "text_embeddings.tbge",
    "prompts": "prompts.json",
    "cache": "embedding_cache.tbge",
    "factors": "synth_factors.npz",
}


class ConfigError(utils.TextBridgeError):
    code = "CONFIG_ERROR"


def default_configuration_file() -> str:
    """Returns the name of the default configuration file"""
    return pkg_resources.resource_filename("pytextbridge", "data/defaultExperiment.yml")


def merge_dicts(base: dict, update: dict) -> dict:
    """Recursively merges 'update' over a copy of 'base'"""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_dicts(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def get_experiment_parameters(filename: str, overrides=None) -> dict:
    """Reads the experiment configuration from a file (over the packaged defaults) or the environment,
    then applies command line overrides"""
    defaults = utils.parse_yaml(default_configuration_file())
    if filename:
        try:
            parameters = merge_dicts(defaults, utils.parse_yaml(filename))
        except FileNotFoundError as error:
            raise ConfigError(str(error), code="MISSING_INPUT")
        except Exception as error:
            raise ConfigError("Cannot parse configuration file '" + filename + "': " + str(error))
    else:
        parameters = get_experiment_parameters_from_env(defaults)
    parameters.setdefault("provider", {})["token"] = os.getenv("TBG_EMBED_TOKEN", "")
    return apply_overrides(parameters, overrides or {})


def get_experiment_parameters_from_env(defaults: dict) -> dict:
    """Reads paths and provider endpoint from environment variables"""
    parameters = copy.deepcopy(defaults)
    parameters["paths"]["output_dir"] = os.getenv("TBG_OUTPUT_DIR", parameters["paths"]["output_dir"])
    parameters["provider"]["url"] = os.getenv("TBG_EMBED_URL", parameters["provider"]["url"])
    return parameters


def apply_overrides(parameters: dict, overrides: dict) -> dict:
    """Applies the command line overrides; the seed drives both training and the synthetic generator"""
    parameters = copy.deepcopy(parameters)
    for name, value in overrides.items():
        if value is None:
            continue
        if name == "seed":
            parameters["training"]["seed"] = value
            parameters["synth"]["seed"] = value
        elif name in ("gamma", "lr", "layers", "epochs"):
            parameters["training"][name] = value
        elif name == "output_dir":
            parameters["paths"]["output_dir"] = value
        else:
            raise ConfigError("Unknown override '" + name + "'")
    return parameters


def config_hash(parameters: dict) -> str:
    """SHA-256 of the canonical JSON of the configuration without secrets and output directory"""
    public = copy.deepcopy(parameters)
    for section, field in UNHASHED_FIELDS:
        public.get(section, {}).pop(field, None)
    return utils.sha256_hex(utils.canonical_json(public))


class ExperimentConfig:
    """Validated experiment configuration"""

    def __init__(self, parameters: dict):
        unknown = set(parameters).difference(SECTIONS)
        if unknown:
            raise ConfigError("Unknown configuration section(s) " + ", ".join(sorted(unknown)))
        self.parameters = parameters
        self.paths = dict(parameters["paths"])
        self.data = dict(parameters["data"])
        self.prompts = dict(parameters["prompts"])
        self.evaluation = dict(parameters["evaluation"])
        self.protocols = dict(parameters["protocols"])
        try:
            self.training = TrainConfig(**parameters["training"])
            self.synth = SynthSpec(**parameters["synth"])
            self.provider = ProviderSettings(**parameters["provider"])
        except (utils.TextBridgeError, TypeError) as error:
            raise ConfigError(str(error))
        self.hash = config_hash(parameters)
        self.validate()

    def validate(self) -> None:
        if not self.paths.get("output_dir"):
            raise ConfigError("paths.output_dir must be set")
        fractions = self.data.get("split", [])
        if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError("data.split must be three non-negative fractions summing to 1")
        if not self.evaluation.get("ks") or min(self.evaluation["ks"]) < 1:
            raise ConfigError("evaluation.ks must list positive cut-offs")
        for gamma in self.protocols.get("gammas", []):
            if not 0.0 < gamma < 1.0:
                raise ConfigError("protocols.gammas must lie in (0, 1)")
        for rate in self.protocols.get("mask_rates", []):
            if not 0.0 <= rate <= 1.0:
                raise ConfigError("protocols.mask_rates must lie in [0, 1]")
        if not 0.0 < self.protocols.get("cold_start_fraction", 0.05) <= 1.0:
            raise ConfigError("protocols.cold_start_fraction must lie in (0, 1]")

    @property
    def output_dir(self) -> str:
        return self.paths["output_dir"]

    def output_file(self, name: str) -> str:
        """Path of an artifact in the output directory"""
        return os.path.join(self.output_dir, name)

    def path(self, name: str) -> str:
        """Configured path of an input, relative to the output directory, or its default artifact there"""
        value = self.paths.get(name) or ""
        if not value:
            return self.output_file(DEFAULT_FILES[name]) if name in DEFAULT_FILES else ""
        return value if os.path.isabs(value) else os.path.join(self.output_dir, value)

    @property
    def target_domain(self):
        return self.data.get("target_domain") or None

    @property
    def domain_names(self):
        return list(self.data.get("domains") or []) or None

    @property
    def delimiter(self) -> str:
        return self.data.get("delimiter", "\t")

    @property
    def split_fractions(self) -> tuple:
        return tuple(self.data["split"])


def get_experiment_config(filename: str, overrides=None) -> ExperimentConfig:
    """Resolves and validates the experiment configuration"""
    return ExperimentConfig(get_experiment_parameters(filename, overrides))
