"""Report records: JSON lines, CSV tables and provenance"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO, Union

import numpy as np
import pandas as pd

from .config import RunConfig

logger = logging.getLogger(__name__)


def jsonable(value: Any) -> Any:
    """Convert numpy scalars and arrays to plain JSON values; non-finite floats become None"""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(jsonable(value), sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON of the parsed configuration"""
    return hashlib.sha256(canonical_json(config.to_dict()).encode()).hexdigest()


def git_describe(cwd: Optional[Path] = None) -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always"],
            capture_output=True,
            text=True,
            check=True,
            cwd=cwd or Path(__file__).resolve().parent,
        )
    except (OSError, subprocess.CalledProcessError) as e:
        logger.debug("git describe unavailable: %s", e)
        return "unknown"
    return result.stdout.strip() or "unknown"


def provenance(seed: int) -> Dict[str, Any]:
    return {
        "seed": int(seed),
        "git_describe": git_describe(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


@dataclass
class Report:
    """Records of one command run, traceable to (config hash, seed)"""

    command: str
    config_hash: str
    provenance: Dict[str, Any]
    records: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, record: Dict[str, Any]) -> None:
        self.records.append(record)

    def lines(self) -> List[str]:
        return [
            canonical_json(
                {
                    "command": self.command,
                    "config_hash": self.config_hash,
                    "record": record,
                    "provenance": self.provenance,
                }
            )
            for record in self.records
        ]

    def write(self, stream: TextIO) -> None:
        for line in self.lines():
            stream.write(line + "\n")

    def append_to(self, path: Union[str, Path]) -> None:
        """Append the records to a JSON-lines file"""
        with open(path, "a") as f:
            self.write(f)
        logger.info("appended %d %s records to %s", len(self.records), self.command, path)


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info("wrote %d rows to %s", len(frame), path)
