"""
LDSeg - Data Node
Synthetic dataset generation into the run directory.
"""

import logging
from pathlib import Path

from src.config import RunConfig
from src.dataio.dataset import MANIFEST_NAME, DatasetManifest
from src.dataio.outputs import OutputDir
from src.dataio.synthetic import generate_dataset
from src.nodes.common import failure, output_dir, run_config
from src.state import ExperimentState

logger = logging.getLogger("LDSeg.Graph")

DATA_SUBDIR = "data"


def generate_data(cfg: RunConfig, out: OutputDir) -> DatasetManifest:
    """
    Write the [data] section's dataset under `out`.

    Raises:
        OutputExistsError: a manifest already exists there (without force)
        DimensionError / RangeError: invalid size or sample count
    """
    manifest_path = out.claim(MANIFEST_NAME)
    manifest = generate_dataset(
        cfg.data.n,
        cfg.data.size,
        cfg.data.seed,
        out.root,
        depth=cfg.model.depth,
        test_fraction=cfg.data.test_fraction,
    )
    for entry in manifest.entries:
        out.claim(entry.image, overwrite=True)
        out.claim(entry.mask, overwrite=True)
    logger.info(f"📦 Manifest: {manifest_path}")
    return manifest


def data_node(state: ExperimentState) -> dict:
    """
    Data Node:
    - Generates the synthetic dataset under <out>/data.
    - Records the manifest path for the training nodes.
    """
    logger.info("🎨 Generating synthetic dataset...")
    try:
        out = output_dir(state, "gen-data", DATA_SUBDIR)
        generate_data(run_config(state), out)
    except Exception as e:
        return failure("gen_data", e)
    return {
        "current_step": "data",
        "manifest_path": str(Path(out.root) / MANIFEST_NAME),
        "produced_files": [str(p) for p in out.produced],
        "logs": [f"✅ Dataset: {len(out.produced) - 1} files"],
    }
