import hashlib
from dataclasses import dataclass, replace
from typing import Iterator, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from tsprop.exceptions import DomainError, InputError, SupportError
from tsprop.utils.logger import get_logger
from tsprop.utils.validators import check_array

logger = get_logger(__name__)


class LoggedRecord(BaseModel):
    """One JSON-Lines record: {"x": [...], "a": int, "r": float, "p0": float}."""
    model_config = ConfigDict(extra="forbid")

    x: List[float]
    a: int = Field(ge=0)
    r: float
    p0: float = Field(ge=0.0, le=1.0)
    pt: Optional[float] = Field(default=None, ge=0.0, le=1.0)


@dataclass(frozen=True)
class LoggedDataset:
    """
    Logged bandit feedback in columnar form.

    Attributes:
        contexts: (m, d) context vectors.
        actions: (m,) logged action indices.
        rewards: (m,) observed rewards.
        p0: (m,) logging propensities of the logged actions, all > 0.
        pt: optional (m,) target propensities stamped onto the records.
    """
    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    p0: np.ndarray
    pt: Optional[np.ndarray] = None

    def __post_init__(self):
        contexts = check_array(self.contexts, "contexts", expected_dim=2)
        rewards = check_array(self.rewards, "rewards", expected_dim=1)
        p0 = check_array(self.p0, "p0", expected_dim=1)
        actions = np.asarray(self.actions)
        if actions.ndim != 1 or not np.issubdtype(actions.dtype, np.integer):
            raise DomainError("`actions` must be a 1D integer array.")
        m = contexts.shape[0]
        if m < 1:
            raise DomainError("A LoggedDataset needs at least one record.")
        if not (actions.shape[0] == rewards.shape[0] == p0.shape[0] == m):
            raise DomainError(
                f"Column lengths differ: contexts {m}, actions {actions.shape[0]}, "
                f"rewards {rewards.shape[0]}, p0 {p0.shape[0]}."
            )
        if np.any(actions < 0):
            raise DomainError("Action indices must be non-negative.")
        if np.any(p0 <= 0):
            bad = int(np.flatnonzero(p0 <= 0)[0])
            raise SupportError(f"Record {bad} has logging propensity {p0[bad]!r}; common support requires p0 > 0.")
        if np.any(p0 > 1):
            raise DomainError("Logging propensities must not exceed 1.")
        columns = {"contexts": contexts, "actions": actions.astype(np.int64), "rewards": rewards, "p0": p0}
        if self.pt is not None:
            pt = check_array(self.pt, "pt", expected_dim=1)
            if pt.shape[0] != m:
                raise DomainError(f"`pt` has {pt.shape[0]} entries for {m} records.")
            columns["pt"] = pt
        for name, arr in columns.items():
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.contexts.shape[0]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    @classmethod
    def from_records(cls, records: List[LoggedRecord]) -> "LoggedDataset":
        if not records:
            raise InputError("No records to build a dataset from.")
        dims = {len(rec.x) for rec in records}
        if len(dims) != 1:
            raise InputError(f"Context vectors have inconsistent lengths {sorted(dims)}.")
        has_pt = [rec.pt is not None for rec in records]
        if any(has_pt) and not all(has_pt):
            raise InputError("Either every record or none carries `pt`.")
        return cls(
            contexts=np.array([rec.x for rec in records], dtype=float),
            actions=np.array([rec.a for rec in records], dtype=np.int64),
            rewards=np.array([rec.r for rec in records], dtype=float),
            p0=np.array([rec.p0 for rec in records], dtype=float),
            pt=np.array([rec.pt for rec in records], dtype=float) if all(has_pt) else None,
        )

    def records(self) -> Iterator[LoggedRecord]:
        for i in range(len(self)):
            yield LoggedRecord(
                x=self.contexts[i].tolist(),
                a=int(self.actions[i]),
                r=float(self.rewards[i]),
                p0=float(self.p0[i]),
                pt=None if self.pt is None else float(self.pt[i]),
            )

    def with_target(self, pt: np.ndarray) -> "LoggedDataset":
        """Copy with target propensities stamped on."""
        return replace(self, pt=pt)

    def head(self, size: int) -> "LoggedDataset":
        size = min(int(size), len(self))
        return LoggedDataset(
            self.contexts[:size], self.actions[:size], self.rewards[:size], self.p0[:size],
            None if self.pt is None else self.pt[:size],
        )

    def fingerprint(self) -> str:
        """sha256 over the column bytes; equal datasets share a fingerprint."""
        h = hashlib.sha256()
        for arr in (self.contexts, self.actions, self.rewards, self.p0):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def to_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for rec in self.records():
                f.write(rec.model_dump_json(exclude_none=True))
                f.write("\n")
        logger.info("Wrote %d records to %s", len(self), path)

    @classmethod
    def from_jsonl(cls, path: str) -> "LoggedDataset":
        """
        Read a JSON-Lines dataset.

        Raises:
            InputError: unreadable file, malformed line or empty dataset.
            SupportError: a record with p0 = 0.
        """
        records = []
        try:
            with open(path, "r", encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    if not line.strip():
                        continue
                    try:
                        records.append(LoggedRecord.model_validate_json(line))
                    except ValidationError as e:
                        raise InputError(f"{path}:{lineno}: invalid record: {e}") from e
        except OSError as e:
            raise InputError(f"Cannot read dataset '{path}': {e}") from e
        if not records:
            raise InputError(f"Dataset '{path}' contains no records.")
        return cls.from_records(records)
