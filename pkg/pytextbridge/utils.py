import sys
import os
import gzip
import json
import hashlib
import tempfile
import datetime
import subprocess
import pkg_resources
import yaml


class TextBridgeError(Exception):
    """Base class of all errors raised by the textbridge tools; carries a machine-readable code"""
    code = "RUNTIME_ERROR"

    def __init__(self, message: str, code=None):
        super().__init__(message)
        if code:
            self.code = code

    def as_dict(self) -> dict:
        """Returns the error as a JSON-serialisable dictionary"""
        return {"error": {"code": self.code, "message": str(self)}}


class VerbosePrinter:
    """Class printing messages if verbose argument is set"""

    def __init__(self, verbose: bool, separator=";"):
        """Constructor"""
        self.verbose = verbose
        self.separator = separator
        self.warnings = 0

    def print(self, message):
        """Prints a message if set to verbose. If the message is a list, the method prints all elements,
        separated by the set separator"""
        if self.verbose:
            if isinstance(message, list):
                print(*message, sep=self.separator)
            else:
                print(message)

    def warn(self, message: str) -> None:
        """Counts a warning and prints it if set to verbose"""
        self.warnings += 1
        self.print("WARNING: " + message)


class JsonLinesLog:
    """Appends one JSON object per line to a log file; a log without file name only collects the records"""

    def __init__(self, filename=""):
        self.filename = filename
        self.records = []
        if self.filename:
            open_file_write(self.filename).close()

    def write(self, record: dict) -> None:
        """Adds a record to the log"""
        self.records.append(record)
        if self.filename:
            with open(self.filename, "a") as f:
                f.write(canonical_json(record) + "\n")


def open_file_read(filename: str):
    """Function opening a (potentially gzipped) text file for read access"""
    if not filename:
        # Read from stdin
        f = sys.stdin
    else:
        # Check if file exists
        filepath = os.path.abspath(filename)
        if not os.path.exists(filepath):
            raise FileNotFoundError("File '" + filepath + "' does not exist.")
        # Open file for reading
        if filename.endswith(".gz"):
            f = gzip.open(filename, "rt", encoding="utf-8", newline="")
        else:
            f = open(filename, "r", encoding="utf-8", newline="")
    return f


def open_file_write(filename: str):
    """Function opening a (potentially gzipped) text file for write access"""
    if not filename:
        # Write to stdout
        f = sys.stdout
    else:
        # Check if path exists
        filepath = os.path.abspath(os.path.dirname(filename))
        if not os.path.exists(filepath):
            raise FileNotFoundError("Directory '" + filepath + "' does not exist.")
        # Open file for writing
        if filename.endswith(".gz"):
            f = gzip.open(filename, "wt", encoding="utf-8")
        else:
            f = open(filename, "w", encoding="utf-8")
    return f


def close(file):
    """Function closing a text file"""
    if file not in [sys.stdin, sys.stdout, sys.stderr]:
        file.close()


def read_text(filename: str) -> str:
    """Function reading text from a file"""
    file = open_file_read(filename)
    content = file.read()
    close(file)
    return content


def read_bytes(filename: str) -> bytes:
    """Function reading the content of a binary file"""
    filepath = os.path.abspath(filename)
    if not os.path.exists(filepath):
        raise FileNotFoundError("File '" + filepath + "' does not exist.")
    with open(filepath, "rb") as f:
        return f.read()


def atomic_write_bytes(filename: str, content: bytes) -> None:
    """Writes a file via a temporary file in the same directory, which is then renamed"""
    directory = os.path.abspath(os.path.dirname(filename) or ".")
    if not os.path.exists(directory):
        raise FileNotFoundError("Directory '" + directory + "' does not exist.")
    handle, tmp_name = tempfile.mkstemp(dir=directory, prefix="." + os.path.basename(filename), suffix=".tmp")
    try:
        with os.fdopen(handle, "wb") as f:
            f.write(content)
        os.replace(tmp_name, filename)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise


def atomic_write_text(filename: str, content: str) -> None:
    """Writes a text file atomically"""
    atomic_write_bytes(filename, content.encode("utf-8"))


def write_csv(filename: str, delimiter: str, content: list) -> None:
    """Function writing data arranged in a table into a CSV file (atomically)"""
    lines = [list_to_string(row, delimiter) + "\n" for row in content]
    atomic_write_text(filename, "".join(lines))


def parse_yaml(filename: str) -> dict:
    """Function parsing a YAML (or JSON) file into nested Python objects"""
    stream = open_file_read(filename)
    try:
        data = yaml.safe_load(stream)
    finally:
        close(stream)
    return data if data is not None else {}


def dump_yaml(filename: str, data: dict) -> None:
    """Function dumping data into a YAML file"""
    atomic_write_text(filename, yaml.safe_dump(data, default_flow_style=False, sort_keys=True))


def canonical_json(data) -> str:
    """Serialises data as canonical JSON (sorted keys, compact separators)"""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_json(filename: str, data) -> None:
    """Writes data as canonical JSON into a file (atomically)"""
    atomic_write_text(filename, canonical_json(data) + "\n")


def read_json(filename: str):
    """Reads a JSON file"""
    return json.loads(read_text(filename))


def sha256_hex(content) -> str:
    """Returns the hexadecimal SHA-256 digest of a string or bytes"""
    if isinstance(content, str):
        content = content.encode("utf-8")
    return hashlib.sha256(content).hexdigest()


def list_to_string(the_list: list, delimiter: str) -> str:
    """Function concatenating all elements of a list"""
    the_string = []
    for element in the_list:
        if isinstance(element, bool):
            the_string.append("t" if element else "f")
        elif isinstance(element, str):
            the_string.append(element)
        elif element is None:
            the_string.append("")
        elif isinstance(element, float):
            the_string.append(repr(element))
        else:
            the_string.append(str(element))
    return delimiter.join(the_string)


def current_timestamp() -> str:
    """Function returning the current UTC time in ISO format"""
    return datetime.datetime.utcnow().replace(microsecond=0).isoformat() + "Z"


def software_version() -> str:
    """Returns the version of the installed distribution"""
    try:
        return str(pkg_resources.get_distribution("textbridge-tools").version)
    except pkg_resources.DistributionNotFound:
        return "0.0.0"


def build_id() -> str:
    """Returns a git-describe-style identifier of the running code"""
    try:
        source_dir = os.path.dirname(os.path.abspath(__file__))
        result = subprocess.run(["git", "describe", "--always", "--tags", "--dirty"], cwd=source_dir,
                                stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, timeout=5)
        described = result.stdout.decode("utf-8").strip()
        if result.returncode == 0 and described:
            return described
    except (OSError, subprocess.SubprocessError):
        pass
    return "v" + software_version()
