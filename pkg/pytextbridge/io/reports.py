from typing import List
from .. import utils
from ..evaluation import MetricsReport


def report_document(report: MetricsReport, build_id="", stage="") -> dict:
    """Metrics plus provenance; the timestamp is the only field that varies between identical runs"""
    document = report.as_dict()
    document.update({"build_id": build_id, "stage": stage, "created": utils.current_timestamp()})
    return document


def write_metrics(json_file: str, csv_file: str, report: MetricsReport, build_id="", stage="") -> None:
    """Writes a metrics report as canonical JSON and as flat CSV"""
    utils.write_json(json_file, report_document(report, build_id, stage))
    utils.write_csv(csv_file, ",", report.csv_rows())


def write_protocol_table(json_file: str, csv_file: str, name: str, rows: List[dict], config_hash="",
                         build_id="") -> None:
    """Writes the results of a robustness protocol: one entry per setting with its metrics"""
    document = {"protocol": name, "config_hash": config_hash, "build_id": build_id,
                "created": utils.current_timestamp(), "results": rows}
    utils.write_json(json_file, document)
    columns = []
    for row in rows:
        for key in row:
            if key not in columns and not isinstance(row[key], dict):
                columns.append(key)
    table = [columns] + [[row.get(column) for column in columns] for row in rows]
    utils.write_csv(csv_file, ",", table)
