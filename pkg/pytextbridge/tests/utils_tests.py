import sys
import os
import io
import json
import unittest
import unittest.mock
import tempfile
from contextlib import redirect_stdout
from .. import utils


class TestUtils(unittest.TestCase):
    """Class for testing utilities"""

    modules_dir = os.path.dirname(os.path.abspath(utils.__file__))
    data_dir = os.path.join(modules_dir, 'tests', 'data')

    def test_write_and_read(self):
        # open_file_write() and open_file_read() should do the right thing whether gzipped or not
        directory = tempfile.mkdtemp()
        for filename in [os.path.join(directory, 'utils.tmp'), os.path.join(directory, 'utils.tmp.gz')]:
            # Test write
            f = utils.open_file_write(filename)
            for i in range(3):
                print(i, file=f)
            utils.close(f)
            # Test read
            counter = 0
            f = utils.open_file_read(filename)
            for line in f:
                self.assertEqual(counter, int(line.strip()))
                counter += 1
            utils.close(f)
            self.assertEqual(counter, 3)
            os.unlink(filename)
        os.rmdir(directory)
        # Test streams stdin/stdout
        f = utils.open_file_read('')
        self.assertEqual(sys.stdin, f)
        f = utils.open_file_write('')
        self.assertEqual(sys.stdout, f)

    def test_raise_exception(self):
        # Opening non-existent files or writing into non-existent directories fails
        with self.assertRaises(FileNotFoundError):
            utils.open_file_read('this_file_is_not_here_so_throw_error')
        with self.assertRaises(FileNotFoundError):
            utils.read_bytes('this_file_is_not_here_so_throw_error')
        with self.assertRaises(FileNotFoundError):
            utils.open_file_write(os.path.join('not_a_directory', 'this_file_is_not_here_so_throw_error'))
        with self.assertRaises(FileNotFoundError):
            utils.atomic_write_text(os.path.join('not_a_directory', 'this_file_is_not_here_so_throw_error'), "x")

    def test_atomic_write(self):
        # Writes text and bytes without leaving temporary files behind
        directory = tempfile.mkdtemp()
        filename = os.path.join(directory, "artifact.txt")
        utils.atomic_write_text(filename, "first")
        utils.atomic_write_text(filename, "second")
        self.assertEqual(utils.read_text(filename), "second")
        utils.atomic_write_bytes(filename, b"\x00\x01")
        self.assertEqual(utils.read_bytes(filename), b"\x00\x01")
        self.assertEqual(os.listdir(directory), ["artifact.txt"])
        os.remove(filename)
        os.rmdir(directory)

    def test_write_csv(self):
        # checks that data are correctly written into a CSV file
        data = [["domain", "metric", "value"], ["Books", "auc", 0.75], ["Books", "count", 12], ["mean", "hit", True],
                ["mean", "missing", None]]
        filename = tempfile.mkstemp()[1]
        utils.write_csv(filename, ",", data)
        self.assertEqual(utils.read_text(filename), "domain,metric,value\nBooks,auc,0.75\nBooks,count,12\n"
                                                    "mean,hit,t\nmean,missing,\n")
        os.remove(filename)
        self.assertFalse(os.path.exists(os.path.abspath(filename)))

    def test_yaml(self):
        # checks if a yaml file is parsed correctly and written back
        filename = os.path.join(self.data_dir, "experiment_example.yml")
        content = utils.parse_yaml(filename)
        self.assertEqual(content["data"]["domains"], ["Movies", "Books"])
        self.assertEqual(content["data"]["target_domain"], "Books")
        self.assertEqual(content["training"]["gamma"], 0.95)
        self.assertEqual(content["evaluation"]["ks"], [5, 10, 20])
        copy = tempfile.mkstemp(suffix=".yml")[1]
        utils.dump_yaml(copy, content)
        self.assertEqual(utils.parse_yaml(copy), content)
        utils.atomic_write_text(copy, "")
        self.assertEqual(utils.parse_yaml(copy), {})
        os.remove(copy)

    def test_json(self):
        # Canonical JSON sorts keys, is compact and rejects non-finite numbers
        self.assertEqual(utils.canonical_json({"b": 1, "a": [1.5, None], "c": "Grüße"}),
                         '{"a":[1.5,null],"b":1,"c":"Grüße"}')
        with self.assertRaises(ValueError):
            utils.canonical_json({"auc": float("nan")})
        filename = tempfile.mkstemp(suffix=".json")[1]
        utils.write_json(filename, {"z": 0, "a": {"y": 1}})
        self.assertEqual(utils.read_text(filename), '{"a":{"y":1},"z":0}\n')
        self.assertEqual(utils.read_json(filename), {"z": 0, "a": {"y": 1}})
        os.remove(filename)

    def test_json_lines_log(self):
        # Every record becomes one line; a log without file only collects records
        filename = tempfile.mkstemp(suffix=".jsonl")[1]
        log = utils.JsonLinesLog(filename)
        log.write({"epoch": 0, "loss": 0.5})
        log.write({"epoch": 1, "loss": 0.25})
        lines = utils.read_text(filename).splitlines()
        self.assertEqual([json.loads(line)["epoch"] for line in lines], [0, 1])
        os.remove(filename)
        memory = utils.JsonLinesLog()
        memory.write({"epoch": 0})
        self.assertEqual(memory.records, [{"epoch": 0}])

    def test_sha256(self):
        # Strings are hashed as UTF-8
        self.assertEqual(utils.sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
        self.assertEqual(utils.sha256_hex("abc"), utils.sha256_hex(b"abc"))

    def test_list_to_string(self):
        # checks if a list is correctly concatenated
        self.assertEqual(utils.list_to_string(["a", 1, 0.1, False, None], ";"), "a;1;0.1;f;")

    def test_errors(self):
        # Errors carry a machine-readable code
        error = utils.TextBridgeError("Something failed")
        self.assertEqual(error.code, "RUNTIME_ERROR")
        self.assertEqual(error.as_dict(), {"error": {"code": "RUNTIME_ERROR", "message": "Something failed"}})
        self.assertEqual(utils.TextBridgeError("Bad value", "CONFIG_ERROR").code, "CONFIG_ERROR")

    def test_verbose_printer(self):
        # Messages are printed in verbose mode only; warnings are always counted
        for verbose in [True, False]:
            output = io.StringIO()
            printer = utils.VerbosePrinter(verbose)
            with redirect_stdout(output):
                printer.print("message")
                printer.print(["a", "b"])
                printer.warn("careful")
            self.assertEqual(output.getvalue(), "message\na;b\nWARNING: careful\n" if verbose else "")
            self.assertEqual(printer.warnings, 1)

    @unittest.mock.patch('subprocess.run')
    def test_build_id(self, mock_run):
        # Uses git describe when available, the package version otherwise
        self.assertIs(mock_run, utils.subprocess.run)
        mock_run.return_value = unittest.mock.Mock(returncode=0, stdout=b"v0.1.0-3-gabcdef\n")
        self.assertEqual(utils.build_id(), "v0.1.0-3-gabcdef")
        mock_run.side_effect = OSError("git not installed")
        self.assertEqual(utils.build_id(), "v" + utils.software_version())

    def test_timestamp(self):
        # Timestamps are UTC ISO strings without fractional seconds
        timestamp = utils.current_timestamp()
        self.assertTrue(timestamp.endswith("Z"))
        self.assertEqual(len(timestamp), 20)


if __name__ == '__main__':
    unittest.main(verbosity=2)
