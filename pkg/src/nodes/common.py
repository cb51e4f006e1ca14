"""
LDSeg - Node Helpers
Shared conversions between graph state and the run configuration, and the
failure update every node returns instead of raising.
"""

import logging
from pathlib import Path

from src.config import RunConfig
from src.dataio.outputs import OutputDir
from src.errors import LDSegError
from src.state import ExperimentState

logger = logging.getLogger("LDSeg.Graph")


def run_config(state: ExperimentState) -> RunConfig:
    return RunConfig.model_validate(state["config"])


def output_dir(state: ExperimentState, command: str, sub: str = "") -> OutputDir:
    root = Path(state["out_dir"]) / sub if sub else Path(state["out_dir"])
    return OutputDir(root, command, force=state.get("force", False))


def has_failed(state: ExperimentState) -> bool:
    return bool(state.get("errors"))


def failure(node: str, err: Exception) -> dict:
    """State update recording a failed node."""
    exit_code = err.exit_code if isinstance(err, LDSegError) else 1
    if isinstance(err, LDSegError):
        logger.error(f"❌ {node} failed: {err}")
    else:
        logger.critical(f"❌ {node} crashed: {err}", exc_info=True)
    return {
        "errors": [{"node": node, "message": str(err), "exit_code": exit_code}],
        "logs": [f"❌ {node}: {err}"],
    }
