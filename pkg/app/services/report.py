"""Artifacts written by the CLI: CSV tables, JSON documents, text summaries."""
import json
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def write_csv(path: str | Path, rows: Iterable[dict | Sequence], columns: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=columns).to_csv(path, index=False, lineterminator="\n")
    return path


def write_config_echo(out_dir: str | Path, run_config) -> Path:
    return write_json(Path(out_dir) / "config.echo.json", run_config.model_dump(mode="json"))


def write_tv_curve(path: str | Path, curve: list[tuple[int, float]]) -> Path:
    return write_csv(path, curve, ["t", "tv_distance"])


def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def build_report(title: str, sections: dict[str, dict]) -> str:
    lines = [title]
    for name, values in sections.items():
        lines.append("")
        lines.append(f"{name}:")
        for key, value in values.items():
            lines.append(f"- {key}: {_fmt(value)}")
    return "\n".join(lines)
