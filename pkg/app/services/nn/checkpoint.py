from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.errors import CheckpointError
from app.services.nn.denoiser import ModelParams
from app.services.nn.encoder import Vocabulary
from app.services.nn.evaluator import EvaluatorParams

FORMAT_VERSION = 1


class ArrayBlob(BaseModel):
    shape: list[int]
    data: str


class CheckpointDocument(BaseModel):
    format_version: int
    op: str
    spec: dict
    hyperparameters: dict
    vocab: list[int]
    arrays: dict[str, ArrayBlob]
    seed: int
    step: int


def _encode(a: np.ndarray) -> ArrayBlob:
    raw = np.ascontiguousarray(a, dtype="<f4").tobytes()
    return ArrayBlob(shape=list(a.shape), data=base64.b64encode(raw).decode("ascii"))


def _decode(blob: ArrayBlob) -> np.ndarray:
    flat = np.frombuffer(base64.b64decode(blob.data), dtype="<f4")
    return flat.astype(np.float64).reshape(blob.shape)


def save_checkpoint(
    path: str | Path,
    denoiser: ModelParams,
    evaluator: EvaluatorParams,
    op: str,
    spec: dict,
    hyperparameters: dict,
    seed: int,
    step: int,
) -> None:
    arrays = {f"denoiser.{k}": _encode(v) for k, v in denoiser.arrays.items()}
    arrays.update({f"evaluator.{k}": _encode(v) for k, v in evaluator.arrays.items()})
    doc = CheckpointDocument(
        format_version=FORMAT_VERSION,
        op=op,
        spec=spec,
        hyperparameters={**hyperparameters, "tau": denoiser.tau},
        vocab=list(denoiser.vocab.item_ids),
        arrays=arrays,
        seed=seed,
        step=step,
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(doc.model_dump_json(), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, EvaluatorParams, CheckpointDocument]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {e}")
    if raw.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format_version {raw.get('format_version')!r}, expected {FORMAT_VERSION}")
    try:
        doc = CheckpointDocument.model_validate(raw)
    except ValidationError as e:
        raise CheckpointError(f"checkpoint {path} is malformed: {e}")

    vocab = Vocabulary(tuple(doc.vocab))
    den, ev = {}, {}
    for name, blob in doc.arrays.items():
        owner, _, key = name.partition(".")
        (den if owner == "denoiser" else ev)[key] = _decode(blob)
    tau = float(doc.hyperparameters["tau"])
    return ModelParams(vocab, tau, den), EvaluatorParams(vocab, ev), doc
