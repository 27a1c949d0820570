"""One function per CLI subcommand; each returns a JSON-able summary."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from app.core.config import RunConfig
from app.core.errors import ConfigError, InvalidArgumentError
from app.services import engine
from app.services.cache import get_transition
from app.services.chain import stationary_gap
from app.services.data import Session, load_session_json, load_sessions_csv, write_sessions_csv
from app.services.forward import NoiseSchedule
from app.services.metrics import mean_metrics, paired_bootstrap, session_metrics
from app.services.nn.checkpoint import load_checkpoint, save_checkpoint
from app.services.nn.denoiser import ModelParams, init_denoiser_params, warm_start_encoder
from app.services.nn.encoder import Vocabulary
from app.services.nn.evaluator import EvaluatorParams, init_evaluator_params
from app.services.nn.optim import make_optimizer
from app.services.permcore import ItemSequence, SequenceSpec
from app.services.report import build_report, write_config_echo, write_csv, write_json, write_tv_curve
from app.services.session_log import close_run_log, log_run_event, open_run_log
from app.services.synthetic import generate_synthetic

logger = logging.getLogger(__name__)

Reranker = Callable[[Session], Sequence[int]]


def start_run(cfg: RunConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config_echo(out_dir, cfg)
    open_run_log(out_dir)
    return out_dir


def gen_data(cfg: RunConfig) -> dict:
    out = start_run(cfg, cfg.paths.out_dir)
    train, test = generate_synthetic(cfg.world, cfg.sequence.l_o, cfg.seed)
    write_sessions_csv(out / "train", train)
    write_sessions_csv(out / "test", test)
    summary = {"out": str(out), "train_sessions": len(train), "test_sessions": len(test), "l_o": cfg.sequence.l_o}
    log_run_event("gen-data", "dataset written", payload=cfg.world.model_dump(), response=summary)
    close_run_log()
    return summary


def _split_dir(data_dir: str | Path, split: str) -> Path:
    data_dir = Path(data_dir)
    return data_dir / split if (data_dir / split).is_dir() else data_dir


def _data_length(sessions: list[Session], cfg: RunConfig) -> int:
    if not sessions:
        raise InvalidArgumentError("dataset holds no sessions")
    l_o = sessions[0].l_o
    if l_o != cfg.sequence.l_o:
        logger.warning("Dataset list length %d overrides configured l_o=%d", l_o, cfg.sequence.l_o)
    return l_o


def map_sessions(fn: Callable[[Session], object], sessions: Sequence[Session], threads: int) -> list:
    if threads <= 1:
        return [fn(s) for s in sessions]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, sessions))


def dcdr_reranker(den: ModelParams, ev: EvaluatorParams, inference, op: str) -> Reranker:
    def _run(session: Session) -> Sequence[int]:
        return engine.rerank(den, ev, session.displayed, session.history, inference, op).sequence.items

    return _run


def greedy_reranker(ev: EvaluatorParams) -> Reranker:
    return lambda session: engine.greedy_rerank(ev, session.displayed, session.history).items


def logged_order(session: Session) -> Sequence[int]:
    return session.displayed.items


def score_reranker(fn: Reranker, sessions: Sequence[Session], threads: int) -> list[dict]:
    outputs = map_sessions(fn, sessions, threads)
    return [session_metrics(items, s) for items, s in zip(outputs, sessions)]


def _hyperparameters(cfg: RunConfig) -> dict:
    return {
        "dim": cfg.model.dim,
        "hidden": cfg.model.hidden,
        "init_scale": cfg.model.init_scale,
        "beta": cfg.noise.beta,
        "steps": cfg.noise.steps,
        "learning_rate": cfg.train.learning_rate,
        "optimizer": cfg.train.optimizer,
        "batch_size": cfg.train.batch_size,
    }


def fit(cfg: RunConfig, train: list[Session], test: list[Session], out: Path) -> dict:
    """Evaluator first, then the denoiser; checkpoints and metrics.csv into ``out``."""
    l_o = _data_length(train, cfg)
    spec = SequenceSpec(l_s=l_o, l_o=l_o)
    op = cfg.train.op
    rng = np.random.default_rng(cfg.seed)
    vocab = Vocabulary.build(item for s in train for item in (*s.displayed.items, *s.history))
    den = init_denoiser_params(vocab, cfg.model.dim, cfg.model.tau, rng, cfg.model.init_scale)
    ev = init_evaluator_params(vocab, cfg.model.dim, cfg.model.hidden, rng, cfg.model.init_scale)

    ev_opt = make_optimizer(cfg.train.optimizer, cfg.train.learning_rate, cfg.train.adam_betas)
    for epoch in range(1, (cfg.train.evaluator_epochs or cfg.train.epochs) + 1):
        loss = engine.train_evaluator_epoch(ev, train, ev_opt, rng, cfg.train.batch_size)
        logger.info("Evaluator epoch %d: bce=%.5f", epoch, loss)
        log_run_event("train-evaluator", f"epoch {epoch}", response={"bce": loss})
    if cfg.train.warm_start:
        warm_start_encoder(den, ev.arrays, ev.vocab)
        logger.info("Denoiser encoder warm-started from the evaluator")

    tm = get_transition(op, spec, NoiseSchedule(cfg.noise.beta, cfg.noise.steps))
    trainer = engine.DenoiserTrainer(den, tm, make_optimizer(cfg.train.optimizer, cfg.train.learning_rate, cfg.train.adam_betas), rng)
    rows = []
    for epoch in range(1, cfg.train.epochs + 1):
        stats = trainer.train_epoch(train, cfg.train.batch_size)
        row = {"epoch": epoch, "mean_loss": stats.mean_loss, "eval_auc": None, "eval_ndcg3": None, "skipped_samples": stats.skipped_samples}
        if test and (epoch % cfg.train.eval_every == 0 or epoch == cfg.train.epochs):
            agg = mean_metrics(score_reranker(dcdr_reranker(den, ev, cfg.inference, op), test, cfg.threads))
            row["eval_auc"], row["eval_ndcg3"] = agg["auc"], agg["ndcg3"]
        rows.append(row)
        logger.info(
            "Epoch %d: loss=%.5f skipped=%d auc=%s ndcg@3=%s",
            epoch, stats.mean_loss, stats.skipped_samples, row["eval_auc"], row["eval_ndcg3"],
        )
        log_run_event("train", f"epoch {epoch}", response=row)
        ckpt = out / "checkpoints" / f"epoch_{epoch:03d}.json"
        save_checkpoint(ckpt, den, ev, op, {"l_s": spec.l_s, "l_o": spec.l_o}, _hyperparameters(cfg), cfg.seed, trainer.optimizer.steps)

    save_checkpoint(out / "checkpoint.json", den, ev, op, {"l_s": spec.l_s, "l_o": spec.l_o}, _hyperparameters(cfg), cfg.seed, trainer.optimizer.steps)
    write_csv(out / "metrics.csv", rows, ["epoch", "mean_loss", "eval_auc", "eval_ndcg3", "skipped_samples"])
    return {"out": str(out), "op": op, "epochs": rows, "checkpoint": str(out / "checkpoint.json"), "vocab_size": len(vocab) - 1}


def train(cfg: RunConfig) -> dict:
    out = start_run(cfg, cfg.paths.out_dir)
    train_set = load_sessions_csv(_split_dir(cfg.paths.data_dir, "train"))
    test_dir = Path(cfg.paths.data_dir) / "test"
    test_set = load_sessions_csv(test_dir) if test_dir.is_dir() else []
    summary = fit(cfg, train_set, test_set, out)
    close_run_log()
    return summary


def _require_checkpoint(cfg: RunConfig):
    if not cfg.paths.checkpoint:
        raise ConfigError("--checkpoint is required")
    return load_checkpoint(cfg.paths.checkpoint)


def rerank(cfg: RunConfig) -> dict:
    out = start_run(cfg, cfg.paths.out_dir)
    den, ev, doc = _require_checkpoint(cfg)
    op = doc.op
    if cfg.paths.session:
        request = load_session_json(cfg.paths.session)
        seq = request.to_sequence() if op == "token" else ItemSequence.from_items(request.items)
        result = engine.rerank(den, ev, seq, request.history, cfg.inference, op)
        diagnostics = {"session_id": request.session_id, **result.diagnostics}
        write_json(out / "diagnostics.json", diagnostics)
        log_run_event("rerank", "single session", payload=request.model_dump(), response=diagnostics)
        close_run_log()
        return diagnostics

    sessions = load_sessions_csv(_split_dir(cfg.paths.data_dir, "test"))
    outputs = map_sessions(dcdr_reranker(den, ev, cfg.inference, op), sessions, cfg.threads)
    write_csv(
        out / "reranked.csv",
        [(s.session_id, k, item) for s, items in zip(sessions, outputs) for k, item in enumerate(items)],
        ["session_id", "position", "item_id"],
    )
    summary = mean_metrics(session_metrics(items, s) for items, s in zip(outputs, sessions))
    write_json(out / "rerank_metrics.json", summary)
    log_run_event("rerank", "dataset", response=summary)
    close_run_log()
    return summary


def _p_values(dcdr: list[dict], baseline: list[dict], rng: np.random.Generator, n_resamples: int) -> dict:
    out = {}
    for metric in ("ndcg3", "auc"):
        pairs = [(a[metric], b[metric]) for a, b in zip(dcdr, baseline) if a[metric] is not None and b[metric] is not None]
        if not pairs:
            out[metric] = None
            continue
        a, b = zip(*pairs)
        out[metric] = paired_bootstrap(a, b, n_resamples, rng)
    return out


def compare(den: ModelParams, ev: EvaluatorParams, op: str, sessions: list[Session], cfg: RunConfig, n_resamples: int) -> dict:
    per = {
        "logged": score_reranker(logged_order, sessions, cfg.threads),
        "greedy": score_reranker(greedy_reranker(ev), sessions, cfg.threads),
        "dcdr": score_reranker(dcdr_reranker(den, ev, cfg.inference, op), sessions, cfg.threads),
    }
    rng = np.random.default_rng(cfg.seed)
    return {
        "per_session": per,
        "summary": {name: mean_metrics(rows) for name, rows in per.items()},
        "p_values": {
            "dcdr_vs_logged": _p_values(per["dcdr"], per["logged"], rng, n_resamples),
            "dcdr_vs_greedy": _p_values(per["dcdr"], per["greedy"], rng, n_resamples),
        },
    }


def evaluate(cfg: RunConfig, n_resamples: int = 1000) -> dict:
    out = start_run(cfg, cfg.paths.out_dir)
    den, ev, doc = _require_checkpoint(cfg)
    sessions = load_sessions_csv(_split_dir(cfg.paths.data_dir, "test"))
    result = compare(den, ev, doc.op, sessions, cfg, n_resamples)
    write_csv(
        out / "per_session.csv",
        [
            {"generator": name, **row}
            for name, rows in result["per_session"].items()
            for row in rows
        ],
        ["generator", "session_id", "auc", "ndcg3"],
    )
    payload = {"op": doc.op, "summary": result["summary"], "p_values": result["p_values"]}
    write_json(out / "evaluation.json", payload)
    log_run_event("evaluate", "comparison", response=payload)
    logger.info("%s", build_report(f"Evaluation ({doc.op}, {len(sessions)} sessions)", result["summary"]))
    close_run_log()
    return payload


def _chain_outputs(out: str | Path) -> tuple[Path, Path, Path]:
    out = Path(out)
    if out.suffix == ".csv":
        return out, out.with_suffix(".summary.json"), out.parent
    return out / "tv_curve.csv", out / "chain_summary.json", out


def analyze_chain(cfg: RunConfig, t_max: int = 50) -> dict:
    curve_path, summary_path, out_dir = _chain_outputs(cfg.paths.out_dir)
    start_run(cfg, out_dir)
    op = cfg.train.op
    spec = SequenceSpec(l_s=cfg.sequence.l_s, l_o=cfg.sequence.l_o)
    tm = get_transition(op, spec, NoiseSchedule(cfg.noise.beta, cfg.noise.steps))
    report = stationary_gap(tm, t_max)
    write_tv_curve(curve_path, report.tv_curve)
    summary = {"op": op, "beta": cfg.noise.beta, "l_o": spec.l_o, "l_s": spec.l_s, **report.to_summary()}
    write_json(summary_path, summary)
    log_run_event("analyze-chain", "tv curve", response=summary)
    close_run_log()
    return summary


SWEEP_FIELDS = {"steps": ("inference", "max_steps"), "beam": ("inference", "beam"), "beta": ("noise", "beta")}


def _with_value(cfg: RunConfig, param: str, value) -> RunConfig:
    section, field = SWEEP_FIELDS[param]
    updated = getattr(cfg, section).model_copy(update={field: value})
    return RunConfig.model_validate({**cfg.model_dump(), section: updated.model_dump()})


def sweep(cfg: RunConfig, param: str, values: Sequence) -> dict:
    if param not in SWEEP_FIELDS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEP_FIELDS)}")
    if not values:
        raise ConfigError("--values must list at least one value")
    out = start_run(cfg, cfg.paths.out_dir)
    test = load_sessions_csv(_split_dir(cfg.paths.data_dir, "test"))
    rows = []
    if param == "beta":
        train_set = load_sessions_csv(_split_dir(cfg.paths.data_dir, "train"))
        for value in values:
            run_cfg = _with_value(cfg, param, float(value))
            fit(run_cfg, train_set, [], out / f"beta_{value}")
            den, ev, doc = load_checkpoint(out / f"beta_{value}" / "checkpoint.json")
            agg = mean_metrics(score_reranker(dcdr_reranker(den, ev, run_cfg.inference, doc.op), test, cfg.threads))
            rows.append({param: value, "auc": agg["auc"], "ndcg3": agg["ndcg3"]})
            log_run_event("sweep", f"{param}={value}", response=rows[-1])
    else:
        den, ev, doc = _require_checkpoint(cfg)
        for value in values:
            run_cfg = _with_value(cfg, param, int(value))
            agg = mean_metrics(score_reranker(dcdr_reranker(den, ev, run_cfg.inference, doc.op), test, cfg.threads))
            rows.append({param: value, "auc": agg["auc"], "ndcg3": agg["ndcg3"]})
            log_run_event("sweep", f"{param}={value}", response=rows[-1])
    write_csv(out / "sweep.csv", rows, [param, "auc", "ndcg3"])
    close_run_log()
    return {"param": param, "rows": rows}
