import os
import unittest
import tempfile
import numpy as np
from .. import utils, model, optim, training, evaluation
from ..io import iobase, checkpoint, reports


def sample_checkpoint(dtype=np.float32) -> training.Checkpoint:
    rng = np.random.default_rng(6)
    params = model.init_pretrain_params(rng, 7, 5, 4, 3, dtype)
    adam = optim.Adam(0.01)
    adam.step(params, {name: rng.normal(size=params[name].shape).astype(dtype) for name in params.names()})
    config = training.TrainConfig(d=4, h=3, precision=np.dtype(dtype).name).as_dict()
    return training.Checkpoint(training.PRETRAIN, params, adam.state, config, {"global_pre": "f00d"}, 3,
                               [{"epoch": 0, "loss": 0.5}], "v1.0", "abc", adam.settings(), {"edges": 12})


class TestCheckpointFile(unittest.TestCase):
    """Tests the binary checkpoint format"""

    def setUp(self):
        self.filename = tempfile.mkstemp(suffix=".tbgc")[1]

    def tearDown(self):
        if os.path.exists(self.filename):
            os.remove(self.filename)

    def test_write_and_read(self):
        # Parameters, moments and metadata survive a file round trip in their training precision
        for dtype in [np.float32, np.float64]:
            original = sample_checkpoint(dtype)
            checkpoint.write_checkpoint(self.filename, original)
            loaded = checkpoint.read_checkpoint(self.filename)
            self.assertEqual(loaded.stage, training.PRETRAIN)
            self.assertEqual(loaded.params.names(), original.params.names())
            self.assertEqual(loaded.params.dtype, dtype)
            for name in original.params.names():
                self.assertTrue(np.array_equal(loaded.params[name], original.params[name]))
                self.assertTrue(np.array_equal(loaded.optimizer.m[name], original.optimizer.m[name]))
                self.assertTrue(np.array_equal(loaded.optimizer.v[name], original.optimizer.v[name]))
            self.assertEqual(loaded.optimizer.step, 1)
            self.assertEqual(loaded.fingerprints, {"global_pre": "f00d"})
            self.assertEqual((loaded.epoch, loaded.build_id, loaded.config_hash), (3, "v1.0", "abc"))
            self.assertEqual(loaded.history, [{"epoch": 0, "loss": 0.5}])
            self.assertEqual(loaded.extra, {"edges": 12})
            self.assertEqual(loaded.train_config().d, 4)

    def test_frozen_blocks(self):
        # The frozen set is part of the checkpoint
        original = sample_checkpoint()
        original.params = model.ModelParams(original.params.tensors, [model.LOCAL_TABLE])
        checkpoint.write_checkpoint(self.filename, original)
        self.assertEqual(checkpoint.read_checkpoint(self.filename).params.frozen, {model.LOCAL_TABLE})

    def test_deterministic_bytes(self):
        # Equal checkpoints serialise to equal bytes
        self.assertEqual(checkpoint.checkpoint_bytes(sample_checkpoint()),
                         checkpoint.checkpoint_bytes(sample_checkpoint()))

    def test_corruption(self):
        # Flipped bytes, truncation and wrong file types are rejected
        content = checkpoint.checkpoint_bytes(sample_checkpoint())
        corrupted = bytearray(content)
        corrupted[len(content) // 2] ^= 0x10
        with open(self.filename, "wb") as f:
            f.write(bytes(corrupted))
        with self.assertRaises(iobase.FormatError):
            checkpoint.read_checkpoint(self.filename)
        with open(self.filename, "wb") as f:
            f.write(content[:-20])
        with self.assertRaises(iobase.FormatError):
            checkpoint.read_checkpoint(self.filename)
        with open(self.filename, "wb") as f:
            f.write(b"TBGE" + content[4:])
        with self.assertRaises(iobase.FormatError):
            checkpoint.read_checkpoint(self.filename)
        os.remove(self.filename)
        with self.assertRaises(iobase.InputFileError):
            checkpoint.read_checkpoint(self.filename)


class TestReports(unittest.TestCase):
    """Tests the metrics and protocol result files"""

    def setUp(self):
        self.json_file = tempfile.mkstemp(suffix=".json")[1]
        self.csv_file = tempfile.mkstemp(suffix=".csv")[1]
        values = {"auc": 0.75, "recall@10": 0.5, "precision@10": 0.05}
        self.report = evaluation.MetricsReport({"Books": values}, {"Books": {"instances": 4, "users": 2}}, (10,),
                                               "abc")

    def tearDown(self):
        os.remove(self.json_file)
        os.remove(self.csv_file)

    def test_write_metrics(self):
        # Writes the report with provenance as JSON and as a flat table
        reports.write_metrics(self.json_file, self.csv_file, self.report, "v1.0", "finetune")
        document = utils.read_json(self.json_file)
        self.assertEqual(document["auc"], 0.75)
        self.assertEqual(document["per_domain"]["Books"]["recall@10"], 0.5)
        self.assertEqual((document["build_id"], document["stage"], document["config_hash"]),
                         ("v1.0", "finetune", "abc"))
        self.assertTrue(document["created"].endswith("Z"))
        lines = utils.read_text(self.csv_file).splitlines()
        self.assertEqual(lines[0], "domain,metric,value")
        self.assertIn("Books,auc,0.75", lines)
        self.assertIn("mean,precision@10,0.05", lines)
        self.assertEqual(len(lines), 7)

    def test_protocol_table(self):
        # Nested metric dictionaries stay in the JSON document only
        rows = [{"gamma": 0.9, "auc": 0.7, "metrics": {"auc": 0.7}}, {"gamma": 0.99, "auc": 0.72, "edges": 3}]
        reports.write_protocol_table(self.json_file, self.csv_file, "gamma_sweep", rows, "abc", "v1.0")
        document = utils.read_json(self.json_file)
        self.assertEqual(document["protocol"], "gamma_sweep")
        self.assertEqual(document["results"], rows)
        self.assertEqual(utils.read_text(self.csv_file).splitlines(),
                         ["gamma,auc,edges", "0.9,0.7,", "0.99,0.72,3"])


if __name__ == '__main__':
    unittest.main(verbosity=2)
