"""
LDSeg - Reporter Node
Writes the evaluation metrics as CSV and renders the summary PNG.
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Dict

import pandas as pd

from src.dataio.formats import atomic_write
from src.dataio.outputs import OutputDir
from src.evaluation.metrics import MetricReport
from src.evaluation.report import render_summary
from src.nodes.common import failure, has_failed, output_dir
from src.state import ExperimentState

logger = logging.getLogger("LDSeg.Graph")

REPORT_SUBDIR = "report"


def metrics_frame(reports: Dict[str, MetricReport]) -> pd.DataFrame:
    rows = []
    for name, report in reports.items():
        row = {"config": name, "dsc": report.combined_dsc, "iou": report.combined_iou, "samples": report.samples}
        row.update({f"dsc_c{c}": v for c, v in sorted(report.dsc.items())})
        row.update({f"iou_c{c}": v for c, v in sorted(report.iou.items())})
        rows.append(row)
    return pd.DataFrame(rows)


def write_report(reports: Dict[str, MetricReport], out: OutputDir) -> Path:
    """metrics.csv plus summary_<timestamp>.png under `out`; returns the PNG path."""
    csv_path = out.claim("metrics.csv")
    atomic_write(csv_path, metrics_frame(reports).to_csv(index=False).encode("utf-8"))
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    image_path = out.claim(f"summary_{timestamp}.png")
    notes = [f"{name}: {report.summary()}" for name, report in reports.items() if "sigma" in name]
    return render_summary(reports, image_path, notes=notes)


def reporter_node(state: ExperimentState) -> dict:
    """
    Reporter Node:
    - Takes the MetricReports of the evaluator.
    - Writes metrics.csv and the visual summary PNG.
    """
    if has_failed(state):
        return {"logs": ["⏭️ reporter skipped after an earlier failure"]}
    logger.info("🖼️ Generating summary report...")
    try:
        reports = {name: MetricReport.model_validate(r) for name, r in (state.get("metrics") or {}).items()}
        out = output_dir(state, "report", REPORT_SUBDIR)
        image_path = write_report(reports, out)
    except Exception as e:
        return failure("reporter", e)
    return {
        "current_step": "done",
        "report_image_path": str(image_path),
        "produced_files": [str(p) for p in out.produced],
        "logs": [f"🖼️ Summary report: {image_path.name}"],
    }
