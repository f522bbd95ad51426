import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from tsprop.utils.logger import get_logger
from tsprop.version import __version__

logger = get_logger(__name__)


def manifest_path(out_path: str) -> str:
    return f"{out_path}.manifest.json"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    """
    Provenance of one result file.

    Identical command, config_hash, seeds and inputs reproduce the output
    bit for bit; started/finished are informational.
    """
    command: str
    config_hash: str
    seeds: List[int]
    artifact_version: str = __version__
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    inputs: Dict[str, Any] = field(default_factory=dict)
    extra: Dict[str, Any] = field(default_factory=dict)

    def finish(self) -> "RunManifest":
        self.finished = _now()
        return self

    def write(self, out_path: str) -> str:
        path = manifest_path(out_path)
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
        logger.info("Wrote manifest %s", path)
        return path

    @classmethod
    def read(cls, out_path: str) -> "RunManifest":
        with open(manifest_path(out_path), "r") as f:
            return cls(**json.load(f))
