# LDSeg Evaluation Package
from src.evaluation.metrics import MetricReport, dsc, evaluate, iou
from src.evaluation.bench import (
    BenchRecord,
    bench_noise,
    bench_size,
    bench_steps,
    minimal_steps,
    read_records,
    size_ratio,
    summarize,
    time_call,
    write_records,
)
from src.evaluation.report import render_line_chart, render_summary, save_label_preview, save_preview

__all__ = [
    'MetricReport', 'dsc', 'evaluate', 'iou',
    'BenchRecord', 'bench_noise', 'bench_size', 'bench_steps', 'minimal_steps', 'read_records',
    'size_ratio', 'summarize', 'time_call', 'write_records',
    'render_line_chart', 'render_summary', 'save_label_preview', 'save_preview',
]
