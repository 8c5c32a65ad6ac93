import os
from . import utils, configutils, synth, semantic, training, protocols
from .io import interactions, embeddings, prompts, provider, checkpoint, reports


class MissingCheckpointError(utils.TextBridgeError):
    code = "MISSING_CHECKPOINT"


def run_command_with_arguments(command: str, arguments, config: configutils.ExperimentConfig) -> None:
    """Runs a specified sub-command with the supplied arguments"""
    prepare_output(config)

    # Run the command
    if command == "synth":
        # Generate a synthetic multi-domain data set
        run_synth_command(arguments, config)
    elif command == "prompts":
        # Build one prompt per user and item
        run_prompts_command(arguments, config)
    elif command == "embed":
        # Turn prompts into text embeddings through the provider
        run_embed_command(arguments, config)
    elif command == "edges":
        # Search text neighbors and summarise the semantic edges
        run_edges_command(arguments, config)
    elif command == "pretrain":
        # Pre-train on the source domains
        run_pretrain_command(arguments, config)
    elif command == "finetune":
        # Fine-tune the target blocks of a pre-trained model
        run_finetune_command(arguments, config, training.FINETUNE)
    elif command == "zeroshot":
        # Transfer a pre-trained model without any training step
        run_finetune_command(arguments, config, training.ZEROSHOT)
    elif command == "eval":
        # Evaluate a checkpoint on the test split
        run_eval_command(arguments, config)
    elif command == "protocol":
        # Run a robustness or transfer protocol
        run_protocol_command(arguments, config)
    else:
        print("Functionality '" + command + "' is not yet implemented.")


def prepare_output(config: configutils.ExperimentConfig) -> None:
    """Creates the output directory if necessary"""
    os.makedirs(config.output_dir, exist_ok=True)


def domain_layout(records, config: configutils.ExperimentConfig):
    """Returns the domain names (target last) and the target domain"""
    names = config.domain_names or sorted(set(record.domain for record in records))
    if not names:
        raise configutils.ConfigError("No domains configured or found in the interaction log")
    target = config.target_domain or names[-1]
    if target not in names:
        raise configutils.ConfigError("Target domain '" + target + "' is not among the domains")
    return [name for name in names if name != target] + [target], target


def load_records(config: configutils.ExperimentConfig, verbose=False):
    """Reads the interaction log; returns the records of the configured domains, the domains and the target"""
    records = interactions.parse_interactions(config.path("interactions"), config.delimiter, verbose)
    names, target = domain_layout(records, config)
    known = set(names)
    return [record for record in records if record.domain in known], names, target


def load_split(config: configutils.ExperimentConfig, verbose=False):
    """Reads and splits the interaction log; returns the records and the split"""
    records, names, target = load_records(config, verbose)
    split = interactions.temporal_split(records, config.split_fractions, names, target, verbose=verbose)
    return records, split


def load_text_rows(config: configutils.ExperimentConfig, split):
    """Reads the text embeddings in universe order"""
    return embeddings.read_embedding_matrix(config.path("embeddings"), split.universe).rows


def load_experiment(config: configutils.ExperimentConfig, verbose=False) -> protocols.ExperimentData:
    """Split, text rows and a masker (synthetic field components if present, otherwise the provider)"""
    records, split = load_split(config, verbose)
    text_rows = load_text_rows(config, split)
    masker = None
    factors_file = config.path("factors")
    if os.path.exists(factors_file):
        keys, template, components = synth.read_field_components(factors_file)
        masker = protocols.ComponentMasker(template, synth.align_components(keys, components, split.universe))
    elif config.provider.url:
        history = interactions.split_records(records, config.split_fractions)[0]
        masker = protocols.PromptMasker(records, history, split.universe, config.provider,
                                        config.prompts["k_recent"], config.prompts["truncation_quantile"],
                                        prompts.load_templates(config.paths.get("templates", "")),
                                        config.path("cache"), verbose=verbose)
    return protocols.ExperimentData(split, text_rows, masker)


def provenance(config: configutils.ExperimentConfig) -> dict:
    """Config hash and build id recorded in every artifact"""
    return {"config_hash": config.hash, "build_id": utils.build_id()}


def checkpoint_file(requested: str, candidates: list) -> str:
    """Returns the requested checkpoint, or the first existing default one"""
    if requested:
        if not os.path.exists(requested):
            raise MissingCheckpointError("Checkpoint '" + requested + "' does not exist")
        return requested
    for candidate in candidates:
        if os.path.exists(candidate):
            return candidate
    raise MissingCheckpointError("No checkpoint found (looked for " + ", ".join(candidates) + ")")


def run_synth_command(arguments, config: configutils.ExperimentConfig) -> None:
    """Generates interactions, text embeddings and ground-truth factors"""
    printer = utils.VerbosePrinter(arguments.verbose)
    data = synth.generate(config.synth)
    interactions.write_interactions(config.path("interactions"), data.records, config.delimiter)
    embeddings.write_embedding_matrix(config.path("embeddings"), data.text)
    synth.write_factors(config.path("factors"), data)
    manifest = data.manifest()
    manifest.update(provenance(config))
    utils.write_json(config.output_file("synth_manifest.json"), manifest)
    printer.print("Generated " + str(len(data.records)) + " interactions and " + str(len(data.text))
                  + " text embeddings")
    print("Synthetic data written to " + config.output_dir)


def run_prompts_command(arguments, config: configutils.ExperimentConfig) -> None:
    """Builds prompts; histories only use training interactions"""
    records, _, _ = load_records(config, arguments.verbose)
    history = interactions.split_records(records, config.split_fractions)[0]
    templates = prompts.load_templates(config.paths.get("templates", ""))
    prompt_set = prompts.build_prompts(records, config.prompts["k_recent"], config.prompts["truncation_quantile"],
                                       history, templates)
    prompts.write_prompts(config.path("prompts"), prompt_set, provenance(config))
    print("Prompts written to " + config.path("prompts"))


def run_embed_command(arguments, config: configutils.ExperimentConfig) -> None:
    """Fetches text embeddings for all prompts"""
    prompt_set = prompts.read_prompts(config.path("prompts"))
    matrix = provider.fetch_embeddings(config.provider, prompt_set, config.path("cache"), verbose=arguments.verbose)
    embeddings.write_embedding_matrix(config.path("embeddings"), matrix)
    print("Text embeddings written to " + config.path("embeddings"))


def run_edges_command(arguments, config: configutils.ExperimentConfig) -> None:
    """Writes the pre-training neighbor lists and a summary of similarities and edge counts per mode"""
    _, split = load_split(config, arguments.verbose)
    text_rows = load_text_rows(config, split)
    universe = split.universe
    settings = config.training
    domains, kinds = universe.domains(), universe.kinds()
    target = universe.target_index
    gammas = sorted(set([settings.gamma] + list(config.protocols.get("gammas", []))))
    modes = [semantic.PRETRAIN_CROSS_DOMAIN] + ([semantic.FINETUNE_SRC_TGT, semantic.FINETUNE_TGT_GLOBAL]
                                                if target is not None else [])
    summary = {"k_cap": settings.k_cap, "gamma": settings.gamma, "modes": {}}
    summary.update(provenance(config))
    for mode in modes:
        neighbors = semantic.search_neighbors(text_rows, domains, kinds, mode, settings.k_cap, target,
                                              settings.neighbor_backend, settings.workers)
        counts = {repr(gamma): len(semantic.semantic_edges(text_rows, domains, kinds, mode, gamma, settings.k_cap,
                                                           target, neighbors=neighbors)) for gamma in gammas}
        summary["modes"][mode] = {"users": semantic.similarity_quantiles(neighbors[0]),
                                  "items": semantic.similarity_quantiles(neighbors[1]), "edges": counts}
        if mode == semantic.PRETRAIN_CROSS_DOMAIN:
            embeddings.write_neighbor_cache(config.output_file("neighbors_users.tbgn"), neighbors[0])
            embeddings.write_neighbor_cache(config.output_file("neighbors_items.tbgn"), neighbors[1])
    utils.write_json(config.output_file("edges_summary.json"), summary)
    print("Edge summary written to " + config.output_file("edges_summary.json"))


def pretrain_neighbors(arguments, config: configutils.ExperimentConfig):
    """Cached pre-training neighbor lists, if requested and searched with the configured k"""
    if not getattr(arguments, "use_neighbor_cache", False):
        return None
    printer = utils.VerbosePrinter(arguments.verbose)
    cached = [embeddings.read_neighbor_cache(config.output_file(name))
              for name in ("neighbors_users.tbgn", "neighbors_items.tbgn")]
    if any(lists.k != config.training.k_cap for lists in cached if len(lists)):
        printer.warn("Neighbor cache was built with a different k; searching again")
        return None
    return cached[0], cached[1]


def run_pretrain_command(arguments, config: configutils.ExperimentConfig) -> None:
    """Pre-trains and writes the best checkpoint"""
    _, split = load_split(config, arguments.verbose)
    text_rows = load_text_rows(config, split)
    log = utils.JsonLinesLog(config.output_file("pretrain_log.jsonl"))
    result = training.pretrain(split, text_rows, config.training, log, arguments.verbose, config.hash,
                               pretrain_neighbors(arguments, config), config.output_dir)
    filename = config.output_file("pretrain.tbgc")
    checkpoint.write_checkpoint(filename, result)
    print("Checkpoint written to " + filename)


def run_finetune_command(arguments, config: configutils.ExperimentConfig, stage: str) -> None:
    """Fine-tunes a pre-trained checkpoint, or transfers it without training for the zero-shot stage"""
    source = checkpoint_file(arguments.checkpoint, [config.output_file("pretrain.tbgc")])
    pretrained = checkpoint.read_checkpoint(source)
    _, split = load_split(config, arguments.verbose)
    text_rows = load_text_rows(config, split)
    if stage == training.ZEROSHOT:
        result = training.training_free_checkpoint(pretrained, split, text_rows, config.training, arguments.verbose,
                                                   config.hash)
    else:
        log = utils.JsonLinesLog(config.output_file("finetune_log.jsonl"))
        result = training.finetune(pretrained, split, text_rows, config.training, log, arguments.verbose,
                                   config.hash, config.output_dir)
    filename = config.output_file(stage + ".tbgc")
    checkpoint.write_checkpoint(filename, result)
    print("Checkpoint written to " + filename)


def run_eval_command(arguments, config: configutils.ExperimentConfig) -> None:
    """Evaluates a checkpoint on the test split of the domains it covers"""
    source = checkpoint_file(arguments.checkpoint or config.path("checkpoint"),
                             [config.output_file("finetune.tbgc"), config.output_file("zeroshot.tbgc")])
    model = checkpoint.read_checkpoint(source)
    _, split = load_split(config, arguments.verbose)
    text_rows = load_text_rows(config, split)
    view, domains = training.embed_checkpoint(model, split, text_rows, arguments.verbose)
    settings = config.training.with_structure_of(model.config)
    report = protocols.evaluate_view(view, split, domains, settings, config.evaluation["ks"], config.hash,
                                     verbose=arguments.verbose)
    reports.write_metrics(config.output_file("metrics.json"), config.output_file("metrics.csv"), report,
                          utils.build_id(), model.stage)
    print("AUC " + format(report.auc, ".4f") + "; metrics written to " + config.output_file("metrics.json"))


def run_protocol_command(arguments, config: configutils.ExperimentConfig) -> None:
    """Runs a protocol and writes its result table"""
    data = load_experiment(config, arguments.verbose)
    table = protocols.run_protocol(arguments.name, data, config.training, config.protocols,
                                   config.evaluation["ks"], config.hash, arguments.verbose)
    stem = config.output_file("protocol_" + arguments.name)
    reports.write_protocol_table(stem + ".json", stem + ".csv", table.name, table.rows, config.hash,
                                 utils.build_id())
    print("Protocol results written to " + stem + ".json")
