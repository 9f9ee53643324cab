import csv
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List

from src.utils.logger import close_json_log, setup_json_log, setup_logger

logger = setup_logger()


class ResultWriter:
    def __init__(self, filename, results_dir="results"):
        """Initialize ResultWriter with output filename"""
        self.results_dir = Path(results_dir)
        self.results_dir.mkdir(parents=True, exist_ok=True)
        self.filepath = self.results_dir / filename

    def write_results(self, rows: List[Dict[str, Any]], fieldnames: List[str] = None):
        """Write flat result rows to a CSV file."""
        if fieldnames is None:
            fieldnames = list(rows[0].keys()) if rows else ["name", "metric", "value"]
        with open(self.filepath, "w", newline="") as csvfile:
            writer = csv.DictWriter(csvfile, fieldnames=fieldnames + ["timestamp"])
            writer.writeheader()
            timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
            for row in rows:
                writer.writerow({**row, "timestamp": timestamp})
        logger.info(f"Wrote {len(rows)} rows to {self.filepath}")
        return self.filepath

    def write_organized_results(self, organized_results: Dict[str, List[Dict[str, Any]]], title="Evaluation Results"):
        """Write results organized by section to a CSV file"""
        fieldnames = ["name", "metric", "value"]

        with open(self.filepath, "w", newline="") as csvfile:
            writer = csv.writer(csvfile)

            writer.writerow([title])
            writer.writerow([])

            for section_name, section_results in organized_results.items():
                if not section_results:
                    continue

                writer.writerow([section_name])
                writer.writerow(fieldnames)
                for result in section_results:
                    writer.writerow([result.get(f, "") for f in fieldnames])

                # Add a blank row between sections
                writer.writerow([])

            all_results = [r for rows in organized_results.values() for r in rows]
            values = [r["value"] for r in all_results if isinstance(r.get("value"), (int, float))]

            writer.writerow(["Summary"])
            writer.writerow(["Sections", "Rows", "Mean value"])
            mean = round(sum(values) / len(values), 4) if values else ""
            writer.writerow([len(organized_results), len(all_results), mean])
        logger.info(f"Wrote organized results to {self.filepath}")
        return self.filepath

    def write_records(self, records: Iterable[Dict[str, Any]], filename: str):
        """One JSON object per line through a JSON log handler."""
        path = self.results_dir / filename
        json_log = setup_json_log(path, f"records.{Path(filename).stem}")
        count = 0
        try:
            for record in records:
                json_log.info("record", extra=_jsonable(record))
                count += 1
        finally:
            close_json_log(json_log)
        logger.info(f"Wrote {count} records to {path}")
        return path

    def write_text(self, text: str, filename: str):
        path = self.results_dir / filename
        path.write_text(text + "\n")
        return path


def _jsonable(record: Dict[str, Any]) -> Dict[str, Any]:
    # round-trip drops numpy scalar types
    return json.loads(json.dumps(record, default=lambda o: o.item() if hasattr(o, "item") else str(o)))


def write_eval_report(report, results_dir, name: str = "eval"):
    """Table, organized CSV and JSON-lines records of an EvalReport."""
    writer = ResultWriter(f"{name}.csv", results_dir)
    sections: Dict[str, List[Dict[str, Any]]] = {}
    for row in report.summary_rows():
        sections.setdefault(row["metric"], []).append(row)
    writer.write_organized_results(sections, title=f"{name} report")
    writer.write_records(report.iter_records(), f"{name}.jsonl")
    writer.write_text(report.to_table(), f"{name}.txt")
    return writer.results_dir


def write_matrix_report(report, results_dir, name: str = "matrix"):
    """One JSON record per (condition, seed, metric), plus CSV and table."""
    writer = ResultWriter(f"{name}.csv", results_dir)
    sections: Dict[str, List[Dict[str, Any]]] = {}
    for row in report.rows:
        sections.setdefault(row["metric"], []).append(
            {"name": f"{row['condition']} seed {row['seed']}", "metric": row["metric"], "value": row["value"]}
        )
    writer.write_organized_results(sections, title=f"{name} report")
    writer.write_records(report.rows, f"{name}.jsonl")
    writer.write_text(report.to_table(), f"{name}.txt")
    return writer.results_dir
