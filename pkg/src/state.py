"""
LDSeg - State Definition
Defines the state schema for the LangGraph experiment workflow.
"""

from operator import add
from typing import Annotated, Dict, List, Literal, Optional, TypedDict


class ExperimentState(TypedDict):
    """
    State schema for the LDSeg experiment workflow.

    This state is passed between nodes and persisted via MemorySaver.
    Nodes that run in parallel (train_ae, train_baseline) only write their
    own keys and the reducer lists.
    """

    # ========== Control Flow ==========
    current_step: Literal["init", "data", "train", "evaluate", "done", "error"]
    """Current step in the workflow (written by sequential nodes only)."""

    # ========== Run Settings ==========
    config: dict
    """RunConfig dumped to JSON-compatible types."""

    out_dir: str
    """Root directory of every artifact of the run."""

    force: bool
    """Overwrite existing outputs."""

    # ========== Artifacts ==========
    manifest_path: Optional[str]
    """Dataset manifest written by gen_data."""

    autoencoder_path: Optional[str]
    denoiser_path: Optional[str]
    baseline_path: Optional[str]

    metrics: Optional[Dict[str, dict]]
    """MetricReport dumps keyed by evaluated configuration."""

    report_image_path: Optional[str]
    """Path to the generated summary PNG."""

    # ========== Error Tracking ==========
    errors: Annotated[List[dict], add]
    """Failures of any node ({node, message, exit_code}); a non-empty list routes to the error node."""

    exit_code: int
    """CLI exit code of the first failure (0 when none), set by the error node."""

    produced_files: Annotated[List[str], add]
    """Every file written by the workflow."""

    logs: Annotated[List[str], add]
    """Execution logs for debugging."""


def create_initial_state(config: dict, out_dir: str, force: bool = False) -> ExperimentState:
    """Create initial state with default values."""
    return ExperimentState(
        # Control
        current_step="init",
        # Settings
        config=config,
        out_dir=out_dir,
        force=force,
        # Artifacts
        manifest_path=None,
        autoencoder_path=None,
        denoiser_path=None,
        baseline_path=None,
        metrics=None,
        report_image_path=None,
        # Errors
        errors=[],
        exit_code=0,
        produced_files=[],
        logs=[],
    )
