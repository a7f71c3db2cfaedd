"""Continual training/evaluation loop, checkpoint-resume and result files."""

from __future__ import annotations

import functools
import gc
import json
import logging
import math
import os
import subprocess
import time
import weakref
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import __version__
from .anchoring import AdamW, AnchorState, TrainingError
from .archive import load_archive, save_archive
from .config import ExperimentConfig, from_dict
from .data import ProtocolSchedule, Sample, schedule_from_config, stack_samples
from .losses import LossConfig, cls_loss, seg_loss, total_loss
from .metrics import (
    AccuracyMatrix,
    cl_metrics,
    score_dataset,
    score_frames,
    write_long_csv,
    write_matrix_csv,
)
from .model import AtlasModel, anchored_parameters, trainable_parameters
from .tensor import no_grad

logger = logging.getLogger(__name__)

SEG_METRICS = ("map", "maxf", "aupr", "miou", "dice")
OUTPUT_ENV = "ATLAS_AVS_OUTPUT"


@functools.lru_cache(maxsize=1)
def version_string() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunRecord:
    config: dict
    seed: int
    protocol: str
    pre_conditioning: bool
    lra: bool
    version: str
    task_classes: list[list[int]]
    blocks: list[list[int]]
    matrices: dict[str, list[list[float | None]]] = field(default_factory=dict)
    loss_curves: list[list[float]] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    cl: dict[str, dict[str, float | None]] = field(default_factory=dict)

    @property
    def tag(self) -> str:
        pc = "precond" if self.pre_conditioning else "noprecond"
        lra = "lra" if self.lra else "nolra"
        return f"{self.protocol}_seed{self.seed}_{pc}-{lra}"

    def matrix(self, metric: str = "map") -> AccuracyMatrix:
        return AccuracyMatrix.from_rows(self.matrices[metric], metric)

    def to_dict(self) -> dict:
        return asdict(self)

    def numeric_content(self) -> dict:
        """Everything except wall-clock timings."""
        d = self.to_dict()
        d.pop("wall_clock")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunRecord:
        return cls(**d)


def _blocks(n_tasks: int, every: int) -> list[list[int]]:
    return [list(range(i, min(i + every, n_tasks))) for i in range(0, n_tasks, every)]


class Experiment:
    """State of one continual run; :meth:`run` drives it to completion."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        cfg.validate()
        self.cfg, self.seed = cfg, seed
        self.schedule: ProtocolSchedule = schedule_from_config(cfg, seed)
        self.model = AtlasModel(cfg.model, seed)
        self.anchors = AnchorState(
            anchored_parameters(self.model, cfg.restrict_anchor_to_lora_decoder), cfg.xi
        )
        self.loss_cfg = LossConfig(cfg.lambda_cls, cfg.dice_smooth)
        n_tasks = len(self.schedule.tasks)
        every = cfg.eval_every if cfg.protocol == "tfcl" else 1
        blocks = _blocks(n_tasks, every)
        self.record = RunRecord(
            config=cfg.to_dict(), seed=seed, protocol=cfg.protocol,
            pre_conditioning=cfg.model.pre_conditioning, lra=cfg.lra,
            version=version_string(),
            task_classes=[list(t.classes) for t in self.schedule.tasks],
            blocks=blocks,
        )
        self.matrices = {m: AccuracyMatrix.empty(len(blocks), m) for m in self._metric_names()}
        self.next_task = 0

    # -- helpers -------------------------------------------------------------
    def _metric_names(self) -> list[str]:
        names = list(SEG_METRICS)
        if self.cfg.model.mode == "semantic":
            names.append("cls_acc")
        return names

    @property
    def uses_stability(self) -> bool:
        return self.cfg.lra and self.cfg.c != 0.0

    def _class_rows(self, k: int) -> dict[int, int]:
        return {c: i for i, c in enumerate(self.schedule.seen_classes(k))}

    # -- training ------------------------------------------------------------
    def train_task(self, k: int, samples: Sequence[Sample]) -> list[float]:
        cfg, model = self.cfg, self.model
        semantic = cfg.model.mode == "semantic"
        if semantic:
            new = len(self.schedule.seen_classes(k)) - model.head.n_classes
            if new > 0:
                model.head.expand(new)
        rows = self._class_rows(k)
        batch = stack_samples(samples)
        labels = np.array([rows[s.class_label] if semantic else -1 for s in samples])
        params = trainable_parameters(model)
        anchored = anchored_parameters(model, cfg.restrict_anchor_to_lora_decoder)
        anchored_names = [n for n, _ in anchored]
        opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        rng = np.random.default_rng([self.seed, k, 2])
        n = len(samples)
        curve = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total, steps = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                opt.zero_grad()
                mask_logits, class_logits = model(batch["frames"][idx], batch["audio"][idx])
                seg = seg_loss(mask_logits, batch["masks"][idx], batch["supervised"][idx],
                               cfg.dice_smooth)
                cls = cls_loss(class_logits, labels[idx]) if semantic else None
                stab = self.anchors.stability_loss(anchored, cfg.c) if self.uses_stability else None
                loss = total_loss(seg, cls, stab, self.loss_cfg)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at task {k}, epoch {epoch}")
                loss.backward()
                grads = opt.grads()
                deltas = opt.step(grads)
                self.anchors.accumulate({n_: grads[n_] for n_ in anchored_names},
                                        {n_: deltas[n_] for n_ in anchored_names})
                total += value
                steps += 1
            curve.append(total / steps)
        opt.zero_grad()
        self.anchors.consolidate(anchored)
        return curve

    # -- evaluation ----------------------------------------------------------
    def evaluate_block(self, block: Sequence[int], after_task: int) -> dict[str, float]:
        samples: list[Sample] = []
        owners: list[int] = []
        for k in block:
            pool = self.schedule.samples(k, "test")
            samples.extend(pool)
            owners.extend([k] * len(pool))
        batch = stack_samples(samples)
        with no_grad():
            mask_logits, class_logits = self.model(batch["frames"], batch["audio"])
        conf = expit(mask_logits.data)
        scores = score_dataset([score_frames(conf[i], batch["masks"][i]) for i in range(len(samples))])
        out = scores.as_dict()
        if self.cfg.model.mode == "semantic":
            out["cls_acc"] = self._class_accuracy(samples, owners, class_logits, after_task)
        return out

    def _class_accuracy(self, samples, owners, class_logits, after_task: int) -> float:
        rows = self._class_rows(after_task)
        logits = class_logits.data
        hits = []
        for i, s in enumerate(samples):
            if s.class_label not in rows:
                hits.append(0.0)
                continue
            z = logits[i].copy()
            if self.schedule.task_id_at_test:
                allowed = [rows[c] for c in self.schedule.tasks[owners[i]].classes]
                masked = np.full_like(z, -np.inf)
                masked[allowed] = z[allowed]
                z = masked
            hits.append(float(int(np.argmax(z)) == rows[s.class_label]))
        return float(np.mean(hits))

    # -- driver --------------------------------------------------------------
    def run(self, checkpoint_dir: str | Path | None = None, stop_after: int | None = None,
            on_task_end: Callable[[int, list], None] | None = None) -> RunRecord:
        blocks = self.record.blocks
        n_tasks = len(self.schedule.tasks)
        while self.next_task < n_tasks:
            k = self.next_task
            t0 = time.perf_counter()
            samples = self.schedule.samples(k, "train")
            curve = self.train_task(k, samples)
            refs = [weakref.ref(s) for s in samples]
            del samples
            gc.collect()
            if on_task_end is not None:
                on_task_end(k, refs)
            b = next(i for i, blk in enumerate(blocks) if k in blk)
            if k == blocks[b][-1]:
                for j in range(min(b + 2, len(blocks))):
                    for name, value in self.evaluate_block(blocks[j], k).items():
                        self.matrices[name].set(b, j, value)
            self.record.loss_curves.append(curve)
            self.record.wall_clock.append(time.perf_counter() - t0)
            self.next_task = k + 1
            logger.info("task %d/%d done: final loss %.4f", k + 1, n_tasks, curve[-1])
            if checkpoint_dir is not None:
                self.save_checkpoint(Path(checkpoint_dir) / f"{self.record.tag}_task{k}.ckpt")
            if stop_after is not None and k >= stop_after:
                break
        self._finalize()
        return self.record

    def _finalize(self) -> None:
        self.record.matrices = {m: mat.rows() for m, mat in self.matrices.items()}
        if self.next_task < len(self.schedule.tasks):
            return
        self.record.cl = {}
        for m, mat in self.matrices.items():
            self.record.cl[m] = cl_metrics(mat).as_dict()

    # -- checkpoints ---------------------------------------------------------
    def save_checkpoint(self, path: str | Path) -> Path:
        self.record.matrices = {m: mat.rows() for m, mat in self.matrices.items()}
        tensors = {f"model.{n}": a for n, a in self.model.state_dict().items()}
        tensors.update(self.anchors.state_arrays())
        meta = {
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "next_task": self.next_task,
            "n_consolidations": self.anchors.n_consolidations,
            "record": self.record.to_dict(),
        }
        return save_archive(path, tensors, meta, kind="checkpoint")

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> Experiment:
        tensors, meta, kind = load_archive(path)
        if kind != "checkpoint":
            raise ValueError(f"{path} holds a {kind!r} archive, not a checkpoint")
        exp = cls(from_dict(meta["config"]), meta["seed"])
        exp.model.load_state_dict({n[6:]: a for n, a in tensors.items() if n.startswith("model.")})
        exp.anchors.load_arrays(tensors, meta["n_consolidations"])
        exp.next_task = meta["next_task"]
        exp.record = RunRecord.from_dict(meta["record"])
        exp.matrices = {m: AccuracyMatrix.from_rows(rows, m) for m, rows in exp.record.matrices.items()}
        return exp


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, *,
                   checkpoint_dir: str | Path | None = None,
                   resume_from: str | Path | None = None) -> RunRecord:
    """Train through every task of the configured protocol and score it."""
    if resume_from is not None:
        exp = Experiment.from_checkpoint(resume_from)
    else:
        exp = Experiment(cfg, cfg.seeds[0] if seed is None else seed)
    return exp.run(checkpoint_dir=checkpoint_dir)


# -- ablation --------------------------------------------------------------------
ABLATION_ROWS = ((True, True), (False, True), (True, False), (False, False))


def ablation_config(cfg: ExperimentConfig, pre_conditioning: bool, lra: bool) -> ExperimentConfig:
    return cfg.replace(**{"model.pre_conditioning": pre_conditioning, "lra": lra})


def summary_value(record: RunRecord, column: str) -> float:
    """Table columns: average accuracy of mAP / Max-F / mIoU matrices and mAP forgetting."""
    if column == "avg_map":
        return record.cl["map"]["AA"]
    if column == "avg_for":
        return record.cl["map"]["F"]
    if column == "avg_f1":
        return record.cl["maxf"]["AA"]
    if column == "avg_miou":
        return record.cl["miou"]["AA"]
    raise KeyError(column)


TABLE_COLUMNS = ("avg_map", "avg_for", "avg_f1", "avg_miou")


def run_ablation_suite(cfg: ExperimentConfig, seeds: Sequence[int] | None = None,
                       out_dir: str | Path | None = None) -> dict[tuple[bool, bool], list[RunRecord]]:
    """All four (pre-conditioning, anchoring) combinations under shared seeds."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    results: dict[tuple[bool, bool], list[RunRecord]] = {}
    for flags in ABLATION_ROWS:
        sub = ablation_config(cfg, *flags)
        results[flags] = [run_experiment(sub, s) for s in seeds]
        if out_dir is not None:
            for rec in results[flags]:
                emit_results(rec, out_dir)
    if out_dir is not None:
        write_ablation_table(results, out_dir)
    return results


def ablation_table(results: dict[tuple[bool, bool], list[RunRecord]]) -> list[dict]:
    """One row per flag combination: mean, std and sem (in percent) of each column."""
    rows = []
    for (pc, lra), records in results.items():
        row = {"pre_conditioning": pc, "lra": lra, "n_seeds": len(records)}
        for col in TABLE_COLUMNS:
            vals = 100.0 * np.array([summary_value(r, col) for r in records])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            row[col] = float(vals.mean())
            row[f"{col}_std"] = std
            row[f"{col}_sem"] = std / math.sqrt(len(vals))
        rows.append(row)
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    mark = {True: "yes", False: "no"}
    head = f"{'pre-cond':>9} {'LRA':>4} " + " ".join(f"{c:>16}" for c in TABLE_COLUMNS)
    lines = [head]
    for r in rows:
        cells = " ".join(f"{r[c]:8.2f} ±{r[c + '_sem']:6.2f}" for c in TABLE_COLUMNS)
        lines.append(f"{mark[r['pre_conditioning']]:>9} {mark[r['lra']]:>4} {cells}")
    return "\n".join(lines)


def write_ablation_table(results, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ablation_table(results)
    j = out / "ablation.json"
    j.write_text(json.dumps(rows, indent=2))
    t = out / "ablation.txt"
    t.write_text(format_ablation_table(rows) + "\n")
    return [j, t]


# -- result files ----------------------------------------------------------------
def output_root(default: str | Path) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, default))


def emit_results(record: RunRecord, out_dir: str | Path) -> list[Path]:
    """Matrix CSVs, a metrics JSON and a long-format heatmap CSV for one run."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    stem = record.tag
    matrices = {m: record.matrix(m) for m in record.matrices}
    for m in matrices.values():
        m.task_ids = list(range(m.n))
    paths = [write_matrix_csv(mat, out / f"{stem}_{name}.csv") for name, mat in matrices.items()]
    paths.append(write_long_csv(matrices, out / f"{stem}_heatmap.csv"))
    metrics = out / f"{stem}_metrics.json"
    metrics.write_text(json.dumps({
        "seed": record.seed,
        "protocol": record.protocol,
        "version": record.version,
        "cl_metrics": record.cl,
        "matrices": record.matrices,
        "loss_curves": record.loss_curves,
        "wall_clock": record.wall_clock,
        "config": record.config,
    }, indent=2))
    paths.append(metrics)
    return paths


def load_metrics_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
