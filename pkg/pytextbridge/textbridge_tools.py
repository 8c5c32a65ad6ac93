import sys
import os
import argparse
import time
from . import utils, tasks, configutils, protocols


def main():
    """Main routine of the textbridge-tools package"""
    sys.exit(run(sys.argv))


def run(input_arguments: list) -> int:
    """Parses the arguments and runs the command; returns the exit status"""

    # Parse the supplied command line arguments (usage errors exit with status 2)
    arguments = parse_arguments(input_arguments)
    if not getattr(arguments, "command", None):
        print("A command is required; type '" + os.path.basename(input_arguments[0]) + " -h' for help",
              file=sys.stderr)
        return 2

    start_time = time.time()
    try:
        config = configutils.get_experiment_config(arguments.config, overrides(arguments))
        tasks.run_command_with_arguments(arguments.command, arguments, config)
    except utils.TextBridgeError as error:
        print(utils.canonical_json(error.as_dict()), file=sys.stderr)
        return 1
    except FileNotFoundError as error:
        print(utils.canonical_json(utils.TextBridgeError(str(error), "MISSING_INPUT").as_dict()), file=sys.stderr)
        return 1

    # Print run time
    if arguments.verbose:
        print("Runtime: {0:.2f} s".format(time.time()-start_time))
    return 0


def overrides(arguments: argparse.Namespace) -> dict:
    """Collects the configuration overrides given on the command line"""
    return {name: getattr(arguments, name, None) for name in ["seed", "gamma", "lr", "layers", "epochs",
                                                              "output_dir"]}


def general_commands() -> dict:
    """Lists the available sub-commands of the 'textbridge' command with corresponding descriptions"""
    return {
        "synth": "generate a synthetic multi-domain data set with text embeddings",
        "prompts": "build one text prompt per user and item from an interaction log",
        "embed": "turn prompts into text embeddings through an embedding provider",
        "edges": "search text neighbors and summarise the semantic edges per construction mode",
        "pretrain": "pre-train on the source domains",
        "finetune": "fine-tune a pre-trained model on the target domain",
        "zeroshot": "transfer a pre-trained model to the target domain without training",
        "eval": "evaluate a checkpoint on the test split",
        "protocol": "run a robustness or transfer protocol"
    }


def parse_arguments(input_arguments: list) -> argparse.Namespace:
    """Defines the formal arguments of the 'textbridge' command and parses the actual arguments accordingly"""

    # Create a parser and add global formal arguments
    program_name = os.path.basename(input_arguments[0])
    parser = argparse.ArgumentParser(description="Text-bridged graph pre-training and transfer for recommendation",
                                     epilog="For detailed usage information type '" + program_name + " <command> -h'",
                                     prog=program_name, allow_abbrev=False)
    parser.add_argument("-v", "--version", help="show the version of the software and exit",
                        action='version', version=utils.software_version())

    # Add subparsers for all sub-commands
    subparsers = parser.add_subparsers(dest="command")

    for command, description in general_commands().items():
        # Create subparser and add general and specific formal arguments
        sub = subparsers.add_parser(command, description=description, help=description, allow_abbrev=False)
        add_general_arguments(sub)
        add_arguments_by_command(command, sub)

    # Parse the actual arguments
    return parser.parse_args(input_arguments[1:])


def add_general_arguments(parser: argparse.ArgumentParser):
    """Defines general formal arguments (available to all sub-commands)"""
    parser.add_argument("-V", "--verbose", action="store_true", help="verbose mode")
    parser.add_argument("-c", "--config", default="", help="YAML/JSON file with the experiment configuration")
    parser.add_argument("-o", "--output_dir", default=None, help="directory for all artifacts (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    parser.add_argument("--gamma", type=float, default=None, help="semantic edge threshold (overrides config)")
    parser.add_argument("--lr", type=float, default=None, help="learning rate (overrides config)")
    parser.add_argument("--layers", type=int, default=None, help="number of propagation layers (overrides config)")
    parser.add_argument("--epochs", type=int, default=None, help="maximum number of epochs (overrides config)")


def add_arguments_by_command(command: str, parser: argparse.ArgumentParser):
    """Defines formal arguments for a specified sub-command"""
    if command in ["synth", "prompts", "embed", "edges"]:
        pass
    elif command == "pretrain":
        add_pretrain_arguments(parser)
    elif command in ["finetune", "zeroshot", "eval"]:
        add_checkpoint_arguments(parser)
    elif command == "protocol":
        add_protocol_arguments(parser)
    else:
        print("Command '" + parser.prog + "' is not available.")


def add_pretrain_arguments(parser: argparse.ArgumentParser):
    """Defines formal arguments for the 'textbridge pretrain' sub-command"""
    parser.add_argument("--use_neighbor_cache", action="store_true",
                        help="reuse the neighbor lists written by 'textbridge edges' (default: search again)")


def add_checkpoint_arguments(parser: argparse.ArgumentParser):
    """Defines formal arguments for sub-commands reading a checkpoint"""
    parser.add_argument("-k", "--checkpoint", default="", help="checkpoint file (default: from the output directory)")


def add_protocol_arguments(parser: argparse.ArgumentParser):
    """Defines formal arguments for the 'textbridge protocol' sub-command"""
    parser.add_argument("name", choices=protocols.PROTOCOLS, help="protocol to run")
