"""Logged sessions and their CSV form.

Dataset directory layout (one per split)::

    sessions.csv   session_id,user_id,position,item_id,feedback
    histories.csv  user_id,seq_no,item_id      (seq_no 0 = oldest)

UTF-8, LF line endings, header row, decimal integers only.
"""
from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import pandas as pd
from pydantic import BaseModel, ValidationError, field_validator, model_validator

from app.core.config import MAX_HISTORY
from app.core.errors import DataIntegrityError, DataParseError, InvalidArgumentError
from app.services.permcore import MAX_OUTPUT_LENGTH, ItemSequence

SESSION_COLUMNS = ["session_id", "user_id", "position", "item_id", "feedback"]
HISTORY_COLUMNS = ["user_id", "seq_no", "item_id"]
FIELD_COUNT_ERROR = re.compile(r"Expected \d+ fields in line (\d+), saw (\d+)")


@dataclass(frozen=True)
class Session:
    session_id: int
    user_id: int
    history: tuple[int, ...]
    displayed: ItemSequence
    feedback: tuple[int, ...]

    def __post_init__(self):
        if len(self.feedback) != self.displayed.l_o:
            raise InvalidArgumentError(f"session {self.session_id}: {len(self.feedback)} labels for {self.displayed.l_o} items")
        if any(y not in (0, 1) for y in self.feedback):
            raise InvalidArgumentError(f"session {self.session_id}: labels must be 0 or 1")
        if len(self.history) > MAX_HISTORY:
            object.__setattr__(self, "history", tuple(self.history[-MAX_HISTORY:]))

    @property
    def l_o(self) -> int:
        return self.displayed.l_o


class RerankRequest(BaseModel):
    """Single-session input for debug reranking."""

    items: list[int]
    history: list[int] = []
    candidates: list[int] | None = None
    session_id: int | None = None

    @field_validator("items")
    @classmethod
    def _items(cls, v: list[int]) -> list[int]:
        if not 1 <= len(v) <= MAX_OUTPUT_LENGTH:
            raise ValueError(f"items must hold 1..{MAX_OUTPUT_LENGTH} ids")
        if len(set(v)) != len(v):
            raise ValueError("items must be distinct")
        return v

    @model_validator(mode="after")
    def _pool(self):
        if self.candidates is not None:
            if len(set(self.candidates)) != len(self.candidates):
                raise ValueError("candidates must be distinct")
            if self.candidates[: len(self.items)] != self.items:
                raise ValueError("candidates must start with the items in order")
        self.history = self.history[-MAX_HISTORY:]
        return self

    def to_sequence(self) -> ItemSequence:
        return ItemSequence.from_items(self.items, self.candidates or self.items)


def load_session_json(path: str | Path) -> RerankRequest:
    path = Path(path)
    try:
        return RerankRequest.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise DataParseError(f"session file not found: {path}")
    except json.JSONDecodeError as e:
        raise DataParseError(f"{path} is not valid JSON: {e.msg}", e.lineno)
    except ValidationError as e:
        raise DataParseError(f"{path}: {e}")


def _resolve(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    base = path if path.is_dir() else path.parent
    sessions = path if path.is_file() else base / "sessions.csv"
    return sessions, base / "histories.csv"


def _decode(path: Path) -> str:
    raw = path.read_bytes()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line = raw[: e.start].count(b"\n") + 1
        raise DataParseError(f"{path.name}: invalid UTF-8 byte at offset {e.start}", line=line)


def _read_int_table(path: Path, columns: list[str]) -> pd.DataFrame:
    if not path.exists():
        raise DataParseError(f"missing file {path}")
    text = _decode(path)
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise DataParseError(f"{path.name}: empty file, expected header {columns}", line=1)
    except pd.errors.ParserError as e:
        found = FIELD_COUNT_ERROR.search(str(e))
        if found is None:
            raise DataParseError(f"{path.name}: {e}")
        line, fields = int(found.group(1)), int(found.group(2))
        raise DataParseError(f"{path.name}: {fields} fields, expected {len(columns)}", line=line, column=f"field {fields}")
    if list(df.columns) != columns:
        raise DataParseError(f"{path.name}: header {list(df.columns)} != {columns}", line=1)
    for col in columns:
        values = df[col].fillna("")
        ok = values.str.fullmatch(r"-?\d+").astype(bool)
        if not ok.all():
            first = int((~ok).to_numpy().nonzero()[0][0])
            raise DataParseError(f"{path.name}: {values.iloc[first]!r} is not a decimal integer", line=first + 2, column=col)
        df[col] = df[col].astype("int64")
    return df


def _load_histories(path: Path) -> dict[int, tuple[int, ...]]:
    if not path.exists():
        return {}
    df = _read_int_table(path, HISTORY_COLUMNS)
    dup = df.duplicated(["user_id", "seq_no"])
    if dup.any():
        line = int(dup.to_numpy().nonzero()[0][0]) + 2
        raise DataIntegrityError("duplicate (user_id, seq_no)", line)
    out = {}
    for user_id, group in df.sort_values(["user_id", "seq_no"]).groupby("user_id", sort=False):
        out[int(user_id)] = tuple(int(i) for i in group["item_id"])[-MAX_HISTORY:]
    return out


def load_sessions_csv(path: str | Path) -> list[Session]:
    sessions_path, histories_path = _resolve(path)
    df = _read_int_table(sessions_path, SESSION_COLUMNS)
    df["line"] = df.index + 2

    bad = ~df["feedback"].isin([0, 1])
    if bad.any():
        row = df[bad].iloc[0]
        raise DataIntegrityError(f"feedback {row['feedback']} outside {{0, 1}} (session {row['session_id']})", int(row["line"]))
    dup = df.duplicated(["session_id", "position"])
    if dup.any():
        row = df[dup].iloc[0]
        raise DataIntegrityError(f"duplicate (session_id, position) = ({row['session_id']}, {row['position']})", int(row["line"]))

    histories = _load_histories(histories_path)
    sessions = []
    l_o = None
    for session_id, group in df.groupby("session_id", sort=False):
        group = group.sort_values("position")
        line = int(group["line"].min())
        if list(group["position"]) != list(range(len(group))):
            raise DataIntegrityError(f"session {session_id}: positions must be 0..{len(group) - 1}", line)
        if group["user_id"].nunique() != 1:
            raise DataIntegrityError(f"session {session_id}: more than one user_id", line)
        if l_o is None:
            l_o = len(group)
        elif len(group) != l_o:
            raise DataIntegrityError(f"session {session_id}: list length {len(group)} differs from {l_o}", line)
        if l_o > MAX_OUTPUT_LENGTH:
            raise DataIntegrityError(f"list length {l_o} exceeds {MAX_OUTPUT_LENGTH}", line)
        items = [int(i) for i in group["item_id"]]
        if len(set(items)) != len(items):
            raise DataIntegrityError(f"session {session_id}: repeated item in displayed list", line)
        user_id = int(group["user_id"].iloc[0])
        sessions.append(
            Session(
                session_id=int(session_id),
                user_id=user_id,
                history=histories.get(user_id, ()),
                displayed=ItemSequence.from_items(items),
                feedback=tuple(int(y) for y in group["feedback"]),
            )
        )
    return sessions


def write_sessions_csv(directory: str | Path, sessions: Iterable[Session]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    session_rows = []
    histories: dict[int, tuple[int, ...]] = {}
    for s in sessions:
        for k, (item, y) in enumerate(zip(s.displayed.items, s.feedback)):
            session_rows.append((s.session_id, s.user_id, k, item, y))
        histories.setdefault(s.user_id, s.history)
    history_rows = [(u, n, item) for u in sorted(histories) for n, item in enumerate(histories[u])]

    pd.DataFrame(session_rows, columns=SESSION_COLUMNS).to_csv(
        directory / "sessions.csv", index=False, lineterminator="\n", encoding="utf-8"
    )
    pd.DataFrame(history_rows, columns=HISTORY_COLUMNS).to_csv(
        directory / "histories.csv", index=False, lineterminator="\n", encoding="utf-8"
    )


def load_dataset(data_dir: str | Path) -> tuple[list[Session], list[Session]]:
    data_dir = Path(data_dir)
    return load_sessions_csv(data_dir / "train"), load_sessions_csv(data_dir / "test")
