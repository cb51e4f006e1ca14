"""
LDSeg - Output Directories
Every command writes under one --out directory. Existing files are never
overwritten unless forced, and each command appends the files it produced
to outputs.json in that directory.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import List

from src.dataio.formats import PathLike, atomic_write
from src.errors import OutputExistsError

logger = logging.getLogger("LDSeg.DataIO")

OUTPUT_INDEX = "outputs.json"


class OutputDir:
    """Collision-checked file paths under an output directory."""

    def __init__(self, root: PathLike, command: str, force: bool = False):
        self.root = Path(root)
        self.command = command
        self.force = force
        self.produced: List[Path] = []

    def claim(self, relative: str, overwrite: bool = False) -> Path:
        """
        Path for a new output file.

        Raises:
            OutputExistsError: the file exists and neither force nor overwrite is set
        """
        path = self.root / relative
        if path.exists() and not (self.force or overwrite):
            raise OutputExistsError(f"{path} already exists (use --force to overwrite)")
        path.parent.mkdir(parents=True, exist_ok=True)
        if path not in self.produced:
            self.produced.append(path)
        return path

    def write_index(self) -> Path:
        """Append this command's files to outputs.json."""
        index_path = self.root / OUTPUT_INDEX
        entries = []
        if index_path.is_file():
            try:
                entries = json.loads(index_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                logger.warning(f"⚠️ Unreadable {index_path}, starting a new index")
        entries.append({
            "command": self.command,
            "time": datetime.now().isoformat(timespec="seconds"),
            "files": [str(p.relative_to(self.root)) for p in self.produced if p.exists()],
        })
        return atomic_write(index_path, json.dumps(entries, indent=2).encode("utf-8"))
