"""Training, checkpointing, evaluation, prediction and the rotatory ablation."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .config import ConfigError, ModelConfig, ShapeError, derive_shapes, model_config_from
from .data import DataError, VolumePair, slice_assignment, slice_batches, window_starts
from .losses import MetricsReport, loss_terms
from .model import RotCAttTransUNetPP

__all__ = [
    "NumericError",
    "RunConfig",
    "Trainer",
    "LOSS_COLUMNS",
    "CHECKPOINT_VERSION",
    "seed_everything",
    "save_checkpoint",
    "load_checkpoint",
    "predict_volume",
    "evaluate",
    "ablate",
    "read_loss_log",
]

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "dice_loss", "iou_loss", "combined")
CHECKPOINT_VERSION = 1
_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class NumericError(RuntimeError):
    """Non-finite loss during training."""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-3
    steps: int = 500
    seed: int = 0
    clip_norm: float = 1.0
    checkpoint_every: int = 100
    dtype: str = "float32"
    out_dir: str = "runs/default"

    RUN_KEYS = {"lr": "float", "steps": "int", "seed": "int", "clip_norm": "float",
                "checkpoint_every": "int", "dtype": "str", "out_dir": "str"}

    def validate(self) -> None:
        self.model.validate()
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")

    @classmethod
    def from_values(cls, values: dict, **overrides) -> "RunConfig":
        values = {**values, **{k: v for k, v in overrides.items() if v is not None}}
        run = {k: v for k, v in values.items() if k in cls.RUN_KEYS}
        return cls(model=model_config_from(values), **run)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.RUN_KEYS}
        d["model"] = self.model.to_dict()
        return d

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def check_data(pair: VolumePair, config: ModelConfig) -> None:
    """Abort before training when the volume cannot feed the model."""
    plan = derive_shapes(config)
    S, H, W = pair.shape
    problems = []
    if (H, W) != (config.input_height, config.input_width):
        problems.append(f"slice size {H}x{W} != planned input {config.input_height}x{config.input_width}")
    if S < config.window:
        problems.append(f"{S} slices < window {config.window}")
    if pair.num_classes != config.num_classes:
        problems.append(f"volume has {pair.num_classes} classes, model expects {config.num_classes}")
    if problems:
        raise ShapeError("data does not match the shape plan: " + "; ".join(problems)
                         + f" (plan input {(config.window, 1, H, W)} -> logits {plan.logits_shape})")


def _to_tensor(a: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a)).to(dtype)


class Trainer:
    """Adam on the combined loss over shuffled stride-``B`` windows of one volume.

    All state needed to continue bit-for-bit (parameters, optimizer, step,
    window order and RNG states) lives in the checkpoint.
    """

    def __init__(self, run: RunConfig, pair: VolumePair):
        run.validate()
        check_data(pair, run.model)
        self.run = run
        self.pair = pair
        seed_everything(run.seed)
        self.model = RotCAttTransUNetPP(run.model).to(run.torch_dtype)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=run.lr)
        self.batches = slice_batches(pair, run.model.window, "train")
        self.rng = np.random.default_rng(run.seed)
        self.order: List[int] = []
        self.step = 0
        self.history: List[tuple] = []

    def _next_batch(self):
        if not self.order:
            self.order = [int(i) for i in self.rng.permutation(len(self.batches))]
        return self.batches[self.order.pop(0)]

    def train_step(self):
        self.model.train()
        batch = self._next_batch()
        x = _to_tensor(batch.images, self.run.torch_dtype)
        y = torch.from_numpy(batch.labels.astype(np.int64))
        terms = loss_terms(self.model(x), y, self.run.model.alpha, self.run.model.epsilon)
        if not torch.isfinite(terms.combined):
            raise NumericError(f"non-finite loss at step {self.step + 1}")
        self.optimizer.zero_grad(set_to_none=True)
        terms.combined.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.run.clip_norm)
        self.optimizer.step()
        self.step += 1
        row = (self.step, float(terms.dice.detach()), float(terms.iou.detach()), float(terms.combined.detach()))
        self.history.append(row)
        return row

    def fit(self, until: Optional[int] = None, log_path=None, checkpoint_dir=None, on_step=None):
        """Train up to step ``until`` (default ``run.steps``), appending to ``log_path``."""
        until = self.run.steps if until is None else until
        writer = None
        fh = None
        if log_path is not None:
            log_path = Path(log_path)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            fresh = self.step == 0 or not log_path.exists()
            if not fresh:
                _truncate_log(log_path, self.step)
            fh = open(log_path, "w" if fresh else "a", newline="")
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(LOSS_COLUMNS)
        try:
            while self.step < until:
                row = self.train_step()
                if writer is not None:
                    writer.writerow([row[0]] + [repr(v) for v in row[1:]])
                    fh.flush()
                if on_step is not None:
                    on_step(row)
                if checkpoint_dir is not None and (self.step % self.run.checkpoint_every == 0 or self.step == until):
                    save_checkpoint(self, Path(checkpoint_dir) / f"step{self.step:06d}.pt")
                    save_checkpoint(self, Path(checkpoint_dir) / "last.pt")
        finally:
            if fh is not None:
                fh.close()
        return self.history

    def state_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "model_config": self.run.model.to_dict(),
            "run_config": self.run.to_dict(),
            "parameters": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "step": self.step,
            "order": list(self.order),
            "numpy_rng": self.rng.bit_generator.state,
            "torch_rng": torch.get_rng_state(),
        }

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state["parameters"])
        self.optimizer.load_state_dict(state["optimizer"])
        self.step = int(state["step"])
        self.order = list(state["order"])
        self.rng.bit_generator.state = state["numpy_rng"]
        torch.set_rng_state(state["torch_rng"])


def _truncate_log(path: Path, step: int) -> None:
    """Drop log rows past ``step`` so a resumed run appends cleanly."""
    lines = path.read_text().splitlines(keepends=True)
    kept = lines[:1] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) <= step]
    path.write_text("".join(kept))


def save_checkpoint(trainer: Trainer, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    torch.save(trainer.state_dict(), tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    state = torch.load(path, map_location="cpu", weights_only=False)
    if state.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {state.get('format_version')}")
    return state


def trainer_from_checkpoint(path, pair: VolumePair, **run_overrides) -> Trainer:
    state = load_checkpoint(path)
    rc = dict(state["run_config"])
    model = ModelConfig.from_dict(rc.pop("model"))
    rc.update({k: v for k, v in run_overrides.items() if v is not None})
    trainer = Trainer(RunConfig(model=model, **rc), pair)
    trainer.load_state_dict(state)
    return trainer


def model_from_checkpoint(path):
    state = load_checkpoint(path)
    config = ModelConfig.from_dict(state["model_config"])
    dtype = _DTYPES[state["run_config"].get("dtype", "float32")]
    model = RotCAttTransUNetPP(config).to(dtype)
    model.load_state_dict(state["parameters"])
    model.eval()
    return model


@torch.no_grad()
def predict_volume(model: RotCAttTransUNetPP, pair: VolumePair) -> np.ndarray:
    """Per-slice class probabilities ``(S, K, H, W)`` from overlapping windows.

    Each slice takes its prediction from a window in which it is interior; the
    first and last slice fall back to the nearest window containing them.
    """
    config = model.config
    check_data(pair, config)
    model.eval()
    dtype = next(model.parameters()).dtype
    B, S = config.window, pair.num_slices
    starts = window_starts(S, B, "eval")
    probs_by_window = []
    for st in starts:
        x = _to_tensor(pair.intensities[st:st + B][:, None], dtype)
        probs_by_window.append(model(x).softmax(dim=1).double().numpy())
    out = np.empty((S, config.num_classes) + pair.shape[1:], dtype=np.float64)
    for s, (w, off) in enumerate(slice_assignment(S, B, starts)):
        out[s] = probs_by_window[w][off]
    return out


def evaluate(model: RotCAttTransUNetPP, pair: VolumePair) -> MetricsReport:
    probs = predict_volume(model, pair)
    pred = probs.argmax(axis=1).astype(np.uint8)
    cfg = model.config
    terms = loss_terms(torch.from_numpy(np.log(np.clip(probs, 1e-300, None))),
                       torch.from_numpy(pair.labels.astype(np.int64)), cfg.alpha, cfg.epsilon)
    loss = {"dice": float(terms.dice), "iou": float(terms.iou), "combined": float(terms.combined)}
    if loss["iou"] > loss["dice"]:
        log.info("iou loss %.4f exceeds dice loss %.4f", loss["iou"], loss["dice"])
    return MetricsReport.compute(pred, pair.labels, cfg.num_classes, pair.spacing, loss)


def read_loss_log(path) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{"step": int(r["step"]), **{k: float(r[k]) for k in LOSS_COLUMNS[1:]}} for r in rows]


ABLATION_ROWS = ("w RotAtt", "w/o RotAtt")


def ablate(run: RunConfig, pair: VolumePair, out_dir=None, focus_class: int = 2) -> dict:
    """Train the same run with and without rotatory attention and compare.

    Returns ``{"rows": [...], "delta": {...}}``, one row per variant with
    macro DSC/IoU/HD, the ``focus_class`` scores and parameter counts.
    """
    rows = []
    for name, enabled in zip(ABLATION_ROWS, (True, False)):
        variant = dataclasses.replace(run, model=run.model.replace(rotatory_enabled=enabled))
        trainer = Trainer(variant, pair)
        sub = None if out_dir is None else Path(out_dir) / ("with_rotatt" if enabled else "without_rotatt")
        trainer.fit(log_path=None if sub is None else sub / "loss.csv")
        report = evaluate(trainer.model, pair)
        if sub is not None:
            (sub / "report.json").write_text(report.to_json() + "\n")
        rows.append({
            "type": name,
            "params": trainer.model.num_parameters(),
            "dsc": report.macro["dsc"],
            "iou": report.macro["iou"],
            "hd": report.macro["hd"],
            "focus_dsc": report.dsc[focus_class] if focus_class < len(report.dsc) else None,
            "focus_iou": report.iou[focus_class] if focus_class < len(report.iou) else None,
            "final_loss": trainer.history[-1][3] if trainer.history else None,
            "per_class_dsc": report.dsc,
        })
    delta = {}
    for k in ("params", "dsc", "iou", "hd", "focus_dsc", "focus_iou", "final_loss"):
        a, b = rows[0][k], rows[1][k]
        delta[k] = None if a is None or b is None else a - b
    return {"seed": run.seed, "focus_class": focus_class, "steps": run.steps, "rows": rows, "delta": delta}


def ablation_table(result: dict) -> str:
    """CSV text: one row per variant plus a delta row."""
    cols = ["type", "params", "dsc", "iou", "hd", "focus_dsc", "focus_iou", "final_loss"]
    fmt = lambda v: "" if v is None else (str(v) if isinstance(v, (int, str)) else f"{v:.6g}")
    lines = [",".join(cols)]
    for row in result["rows"]:
        lines.append(",".join(fmt(row[c]) for c in cols))
    lines.append(",".join(["delta"] + [fmt(result["delta"][c]) for c in cols[1:]]))
    return "\n".join(lines) + "\n"
