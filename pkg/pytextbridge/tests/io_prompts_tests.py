import os
import unittest
import tempfile
import numpy as np
from .. import utils
from ..io import iobase, prompts
from .fixtures import bookshop_records


class TestPrompts(unittest.TestCase):
    """Tests the construction of user and item prompts"""

    def test_build_prompts(self):
        # Builds one prompt per node, with the most recent history first
        prompt_set = prompts.build_prompts(bookshop_records(), k_recent=1, truncation_quantile=1.0)
        self.assertEqual(prompt_set.keys, ["Books/i/book1", "Books/i/book2", "Books/u/alice", "Books/u/bob"])
        self.assertEqual(prompt_set.template_version, 1)
        alice = prompt_set.prompt("Books/u/alice")
        self.assertTrue(alice.startswith("User alice from the Books domain."))
        self.assertIn("[book2]", alice)
        self.assertNotIn("[book1]", alice)
        book1 = prompt_set.prompt("Books/i/book1")
        self.assertIn("Title: Dune.", book1)
        self.assertIn("Price: 9.99.", book1)
        self.assertIn("[bob]", book1)
        self.assertNotIn("[alice]", book1)
        self.assertEqual(prompt_set.length_cap, max(len(p) for p in prompt_set.prompts))

    def test_history_source(self):
        # Nodes without history get the metadata-only prompt
        prompt_set = prompts.build_prompts(bookshop_records(), history=[])
        self.assertIn("No purchase history is available.", prompt_set.prompt("Books/u/bob"))
        self.assertIn("No buyers are known.", prompt_set.prompt("Books/i/book2"))
        self.assertIn("Brand: Acme.", prompt_set.prompt("Books/i/book2"))

    def test_truncation(self):
        # All prompts are cut at the lower quantile of the raw lengths
        prompt_set = prompts.build_prompts(bookshop_records(), truncation_quantile=0.5)
        full = prompts.build_prompts(bookshop_records(), truncation_quantile=1.0)
        lengths = sorted(len(p) for p in full.prompts)
        self.assertEqual(prompt_set.length_cap, lengths[1])
        for short, long in zip(prompt_set.prompts, full.prompts):
            self.assertEqual(short, long[:prompt_set.length_cap])

    def test_masking(self):
        # Masked field groups are blanked for the selected nodes only
        masked = {"Books/u/alice": {prompts.MASK_IDENTIFIERS}, "Books/i/book1": {prompts.MASK_TITLES}}
        prompt_set = prompts.build_prompts(bookshop_records(), truncation_quantile=1.0, masked=masked)
        alice = prompt_set.prompt("Books/u/alice")
        self.assertTrue(alice.startswith("User  from the Books domain."))
        self.assertNotIn("[book2]", alice)
        self.assertIn("Review: Meh", alice)
        self.assertIn("Title: .", prompt_set.prompt("Books/i/book1"))
        self.assertIn("[book1] Dune.", prompt_set.prompt("Books/u/bob"))

    def test_errors(self):
        # Empty logs and invalid settings are rejected
        with self.assertRaises(iobase.InputFileError) as context:
            prompts.build_prompts([])
        self.assertEqual(context.exception.code, "EMPTY_INPUT")
        for settings in [{"truncation_quantile": 0.0}, {"truncation_quantile": 1.5}, {"k_recent": -1}]:
            with self.assertRaises(utils.TextBridgeError) as context:
                prompts.build_prompts(bookshop_records(), **settings)
            self.assertEqual(context.exception.code, "CONFIG_ERROR")

    def test_mask_nodes(self):
        # Selects round(rate * n) distinct nodes
        keys = ["k" + str(n) for n in range(10)]
        selected = prompts.mask_nodes(keys, prompts.MASK_REVIEWS, 0.25, np.random.default_rng(0))
        self.assertEqual(len(selected), 2)
        self.assertTrue(all(groups == {prompts.MASK_REVIEWS} for groups in selected.values()))
        self.assertEqual(selected, prompts.mask_nodes(keys, prompts.MASK_REVIEWS, 0.25, np.random.default_rng(0)))
        self.assertEqual(prompts.mask_nodes(keys, prompts.MASK_TITLES, 0.0, np.random.default_rng(0)), {})
        self.assertEqual(len(prompts.mask_nodes(keys, prompts.MASK_TITLES, 1.0, np.random.default_rng(0))), 10)
        with self.assertRaises(utils.TextBridgeError):
            prompts.mask_nodes(keys, 9, 0.5, np.random.default_rng(0))


class TestPromptFiles(unittest.TestCase):
    """Tests prompt files and template loading"""

    def setUp(self):
        self.filename = tempfile.mkstemp()[1]

    def tearDown(self):
        if os.path.exists(self.filename):
            os.remove(self.filename)

    def test_write_and_read(self):
        # Prompts and settings survive a file round trip; provenance is stored alongside
        prompt_set = prompts.build_prompts(bookshop_records())
        prompts.write_prompts(self.filename, prompt_set, {"config_hash": "abc", "build_id": "v1"})
        loaded = prompts.read_prompts(self.filename)
        self.assertEqual(loaded.keys, prompt_set.keys)
        self.assertEqual(loaded.prompts, prompt_set.prompts)
        self.assertEqual((loaded.length_cap, loaded.k_recent), (prompt_set.length_cap, prompt_set.k_recent))
        self.assertEqual(utils.read_json(self.filename)["config_hash"], "abc")
        os.remove(self.filename)
        with self.assertRaises(iobase.InputFileError):
            prompts.read_prompts(self.filename)

    def test_templates(self):
        # Loads the packaged templates and rejects files without both sections
        templates = prompts.load_templates()
        self.assertIn("history_entry", templates["user"])
        self.assertTrue(os.path.exists(prompts.default_template_file()))
        utils.dump_yaml(self.filename, {"user": templates["user"]})
        with self.assertRaises(iobase.InputFileError):
            prompts.load_templates(self.filename)


if __name__ == '__main__':
    unittest.main(verbosity=2)
