import io
import unittest
from contextlib import redirect_stderr
from .. import textbridge_tools, protocols


class TestCommands(unittest.TestCase):
    """Tests if all implemented commands are available through the entry point"""

    def test_general_commands(self):
        commands = textbridge_tools.general_commands()
        self.assertEqual(len(commands), 9)
        for command in ["synth", "prompts", "embed", "edges", "pretrain", "finetune", "zeroshot", "eval",
                        "protocol"]:
            self.assertIn(command, commands)


class TestArguments(unittest.TestCase):
    """Tests if the supplied command line arguments are correctly parsed"""

    def test_general_args(self):
        # Tests the arguments available to every command
        args = ["textbridge", "synth", "-V", "-c", "experiment.yml", "-o", "runs", "--seed", "7", "--gamma", "0.95",
                "--lr", "0.001", "--layers", "3", "--epochs", "12"]
        parsed_args = vars(textbridge_tools.parse_arguments(args))
        self.assertEqual(parsed_args["command"], "synth")
        self.assertTrue(parsed_args["verbose"])
        self.assertEqual(parsed_args["config"], "experiment.yml")
        self.assertEqual(parsed_args["output_dir"], "runs")
        self.assertEqual(parsed_args["seed"], 7)
        self.assertEqual(parsed_args["gamma"], 0.95)
        self.assertEqual(parsed_args["lr"], 0.001)
        self.assertEqual(parsed_args["layers"], 3)
        self.assertEqual(parsed_args["epochs"], 12)

        args = ["textbridge", "edges"]
        parsed_args = vars(textbridge_tools.parse_arguments(args))
        self.assertFalse(parsed_args["verbose"])
        self.assertEqual(parsed_args["config"], "")
        self.assertIsNone(parsed_args["seed"])
        self.assertNotIn("checkpoint", parsed_args)

    def test_overrides(self):
        # Only values given on the command line override the configuration
        parsed_args = textbridge_tools.parse_arguments(["textbridge", "pretrain", "--gamma", "0.9"])
        overrides = textbridge_tools.overrides(parsed_args)
        self.assertEqual(overrides["gamma"], 0.9)
        self.assertEqual(sorted(name for name, value in overrides.items() if value is not None), ["gamma"])

    def test_pretrain_args(self):
        # Tests the neighbor cache switch
        parsed_args = vars(textbridge_tools.parse_arguments(["textbridge", "pretrain", "--use_neighbor_cache"]))
        self.assertTrue(parsed_args["use_neighbor_cache"])
        parsed_args = vars(textbridge_tools.parse_arguments(["textbridge", "pretrain"]))
        self.assertFalse(parsed_args["use_neighbor_cache"])

    def test_checkpoint_args(self):
        # Tests the checkpoint argument of the commands reading a checkpoint
        for command in ["finetune", "zeroshot", "eval"]:
            parsed_args = vars(textbridge_tools.parse_arguments(["textbridge", command, "-k", "model.tbgc"]))
            self.assertEqual(parsed_args["checkpoint"], "model.tbgc")
            parsed_args = vars(textbridge_tools.parse_arguments(["textbridge", command]))
            self.assertEqual(parsed_args["checkpoint"], "")

    def test_protocol_args(self):
        # Tests the protocol name, which has to be a known protocol
        for name in protocols.PROTOCOLS:
            parsed_args = vars(textbridge_tools.parse_arguments(["textbridge", "protocol", name]))
            self.assertEqual(parsed_args["name"], name)
        with redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as context:
                textbridge_tools.parse_arguments(["textbridge", "protocol", "ablation"])
        self.assertEqual(context.exception.code, 2)

    def test_usage_errors(self):
        # Unknown options and abbreviations are usage errors
        with redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit) as context:
                textbridge_tools.parse_arguments(["textbridge", "synth", "--colour", "red"])
            self.assertEqual(context.exception.code, 2)
            with self.assertRaises(SystemExit):
                textbridge_tools.parse_arguments(["textbridge", "pretrain", "--use_neighbor"])
            with self.assertRaises(SystemExit):
                textbridge_tools.parse_arguments(["textbridge", "train"])


if __name__ == '__main__':
    unittest.main(verbosity=2)
