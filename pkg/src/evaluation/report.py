"""
LDSeg - Visual Reports
PNG renderings with Pillow: benchmark line charts, the experiment summary
table and greyscale previews of maps (uncertainty SD, probabilities).
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image, ImageDraw, ImageFont

from src.dataio.formats import PathLike
from src.evaluation.metrics import MetricReport

logger = logging.getLogger("LDSeg.Report")

# Layout Config
WIDTH = 620
HEADER_HEIGHT = 50
SECTION_HEADER_HEIGHT = 30
ROW_HEIGHT = 28
PADDING = 15
CHART_HEIGHT = 360
COL1_WIDTH = 220

# Colors
BG_COLOR = "#f5f5f5"
TABLE_HEADER_BG = "#2c3e50"
TABLE_HEADER_TEXT = "white"
BORDER_COLOR = "#bdc3c7"
TEXT_COLOR = "#2c3e50"
GOOD_COLOR = "#27ae60"
BAD_COLOR = "#e74c3c"
SERIES_COLORS = ["#002060", "#e46c0a", "#27ae60", "#8e44ad", "#c0392b", "#16a085"]


# ============ Helpers ============

def load_font(size, bold=False):
    """Load a TrueType font, fallback to default."""
    for font_name in ("DejaVuSans-Bold.ttf" if bold else "DejaVuSans.ttf", "arialbd.ttf" if bold else "arial.ttf"):
        try:
            return ImageFont.truetype(font_name, size)
        except OSError:
            continue
    return ImageFont.load_default()


def _text_width(d: ImageDraw.ImageDraw, text: str, font) -> float:
    return d.textbbox((0, 0), text, font=font)[2]


def _save(img: Image.Image, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)
    return path


# ============ Previews ============

def save_preview(values, path: PathLike, vmax: Optional[float] = None) -> Path:
    """
    Greyscale PNG of a 2-D map scaled to [0, vmax] (vmax defaults to the map
    maximum); an all-zero map renders black.
    """
    values = np.asarray(values, dtype=np.float64)
    top = float(values.max()) if vmax is None else float(vmax)
    scaled = np.zeros_like(values) if top <= 0 else np.clip(values / top, 0.0, 1.0)
    return _save(Image.fromarray(np.round(scaled * 255).astype(np.uint8)), path)


def save_label_preview(labels, path: PathLike, num_classes: int) -> Path:
    """Label map spread over the grey range (class C-1 -> white)."""
    labels = np.asarray(labels, dtype=np.float64)
    return save_preview(labels, path, vmax=max(num_classes - 1, 1))


# ============ Charts ============

def render_line_chart(
    frame: pd.DataFrame,
    x: str,
    y: str,
    series: str,
    title: str,
    path: PathLike,
    log_x: bool = False,
) -> Path:
    """One polyline per value of `series`, y against x, with min/max axis labels."""
    img = Image.new("RGB", (WIDTH, HEADER_HEIGHT + CHART_HEIGHT + 2 * PADDING), color=BG_COLOR)
    d = ImageDraw.Draw(img)
    font_title = load_font(16, bold=True)
    font_normal = load_font(11)
    d.text((PADDING, PADDING), title, font=font_title, fill=TEXT_COLOR)

    left, top = PADDING + 50, HEADER_HEIGHT + PADDING
    right, bottom = WIDTH - PADDING - 130, HEADER_HEIGHT + CHART_HEIGHT - PADDING
    d.rectangle([left, top, right, bottom], outline=BORDER_COLOR, fill="white")

    data = frame[[x, y, series]].dropna()
    if data.empty:
        d.text((left + 10, top + 10), "sin datos", font=font_normal, fill=TEXT_COLOR)
        return _save(img, path)

    xs = np.log10(data[x].astype(float).clip(lower=1e-12)) if log_x else data[x].astype(float)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(data[y].min()), float(data[y].max())
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def to_px(xv: float, yv: float) -> Tuple[float, float]:
        return (
            left + (xv - x_lo) / x_span * (right - left),
            bottom - (yv - y_lo) / y_span * (bottom - top),
        )

    for i, (name, group) in enumerate(data.groupby(series, sort=True)):
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        group = group.sort_values(x)
        gx = np.log10(group[x].astype(float).clip(lower=1e-12)) if log_x else group[x].astype(float)
        points = [to_px(a, b) for a, b in zip(gx, group[y].astype(float))]
        if len(points) > 1:
            d.line(points, fill=color, width=2)
        for px, py in points:
            d.ellipse([px - 3, py - 3, px + 3, py + 3], fill=color)
        d.text((right + 10, top + 16 * i), str(name), font=font_normal, fill=color)

    d.text((PADDING, top - 6), f"{y_hi:.3g}", font=font_normal, fill=TEXT_COLOR)
    d.text((PADDING, bottom - 6), f"{y_lo:.3g}", font=font_normal, fill=TEXT_COLOR)
    x_lo_label = f"{10 ** x_lo:.3g}" if log_x else f"{x_lo:.3g}"
    x_hi_label = f"{10 ** x_hi:.3g}" if log_x else f"{x_hi:.3g}"
    d.text((left, bottom + 4), x_lo_label, font=font_normal, fill=TEXT_COLOR)
    d.text((right - _text_width(d, x_hi_label, font_normal), bottom + 4), x_hi_label, font=font_normal, fill=TEXT_COLOR)
    d.text(((left + right) / 2 - 20, bottom + 4), f"{x} vs {y}", font=font_normal, fill=TEXT_COLOR)
    return _save(img, path)


# ============ Summary Table ============

def render_summary(
    reports: Dict[str, MetricReport],
    path: PathLike,
    title: str = "LDSeg - Resumen de Evaluacion",
    notes: Sequence[str] = (),
    threshold: float = 0.85,
) -> Path:
    """Table of combined DSC/IoU per evaluated configuration; DSC below `threshold` in red."""
    rows: List[Tuple[str, MetricReport]] = list(reports.items())
    height = PADDING + HEADER_HEIGHT + SECTION_HEADER_HEIGHT + len(rows) * ROW_HEIGHT + 18 * len(notes) + 2 * PADDING
    img = Image.new("RGB", (WIDTH, height), color=BG_COLOR)
    d = ImageDraw.Draw(img)
    font_title = load_font(18, bold=True)
    font_header = load_font(14, bold=True)
    font_normal = load_font(12)

    y = PADDING
    d.text((PADDING, y + 5), title, font=font_title, fill=TEXT_COLOR)
    y += HEADER_HEIGHT

    col2_x = PADDING + COL1_WIDTH
    col3_x = col2_x + 120
    col4_x = col3_x + 120
    d.rectangle([PADDING, y, WIDTH - PADDING, y + SECTION_HEADER_HEIGHT], fill=TABLE_HEADER_BG)
    for x, label in ((PADDING + 10, "Modelo"), (col2_x + 10, "DSC"), (col3_x + 10, "IoU"), (col4_x + 10, "Muestras")):
        d.text((x, y + 7), label, font=font_header, fill=TABLE_HEADER_TEXT)
    y += SECTION_HEADER_HEIGHT

    for i, (name, report) in enumerate(rows):
        d.rectangle([PADDING, y, WIDTH - PADDING, y + ROW_HEIGHT], fill="white" if i % 2 == 0 else "#ecf0f1")
        d.line([(PADDING, y + ROW_HEIGHT), (WIDTH - PADDING, y + ROW_HEIGHT)], fill=BORDER_COLOR)
        d.text((PADDING + 10, y + 6), name, font=font_normal, fill=TEXT_COLOR)
        color = GOOD_COLOR if report.combined_dsc >= threshold else BAD_COLOR
        d.text((col2_x + 10, y + 6), f"{report.combined_dsc:.4f}", font=font_normal, fill=color)
        d.text((col3_x + 10, y + 6), f"{report.combined_iou:.4f}", font=font_normal, fill=TEXT_COLOR)
        d.text((col4_x + 10, y + 6), str(report.samples), font=font_normal, fill=TEXT_COLOR)
        y += ROW_HEIGHT

    y += 8
    for note in notes:
        d.text((PADDING + 10, y), note, font=font_normal, fill=TEXT_COLOR)
        y += 18
    d.rectangle([PADDING, PADDING + HEADER_HEIGHT, WIDTH - PADDING, y], outline=BORDER_COLOR, width=1)
    path = _save(img, path)
    logger.info(f"🖼️ Summary report saved to: {path}")
    return path
