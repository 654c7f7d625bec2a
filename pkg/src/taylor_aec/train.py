"""Training loop for the post-filter."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from taylor_aec.config import format_kv
from taylor_aec.kalman import PbfdkfConfig
from taylor_aec.losses import LossConfig, compute_losses, noam_lr, scaled_noam_lr
from taylor_aec.model import NetConfig, PostFilter
from taylor_aec.pipeline import NET_CONFIG_NAME, linear_stage
from taylor_aec.signal import AudioClip, StftConfig, read_wav, write_wav
from taylor_aec.simulate import energy_vad
from taylor_aec.tensor import Adam, backward, load_checkpoint, load_module_tensors, module_tensors, save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 1
    peak_lr: float = 1e-3
    noam_d: float = 1e-3
    warmup: int = 5000
    literal_noam: bool = False
    max_steps: int = 0
    crop_seconds: float = 0.0
    seed: int = 0
    threads: int = 1
    vad_threshold_db: float = 40.0
    save_every: int = 1       # epochs between checkpoints; 0 keeps only final.bin

    @classmethod
    def from_flat(cls, record: dict) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in record:
                value = record[f.name]
                if f.type in ("bool", bool):
                    kwargs[f.name] = str(value).lower() in ("1", "true", "yes", "on")
                elif f.type in ("int", int):
                    kwargs[f.name] = int(float(value))
                else:
                    kwargs[f.name] = float(value)
        return cls(**kwargs)

    def lr(self, step: int) -> float:
        if self.literal_noam:
            return noam_lr(step, self.noam_d, self.warmup)
        return scaled_noam_lr(step, self.peak_lr, self.noam_d, self.warmup)


@dataclass
class TrainingItem:
    id: str
    d: np.ndarray
    e: np.ndarray
    x: np.ndarray       # aligned far end
    s: np.ndarray
    echo: np.ndarray
    sample_rate: int


def prepare_item(item_dir, kalman_cfg: PbfdkfConfig | None = None) -> TrainingItem:
    """Load one synthesized item, running (and caching) delay alignment + Kalman filter."""
    item_dir = Path(item_dir)
    clips = {name: read_wav(item_dir / f"{name}.wav") for name in ("d", "x", "s", "echo")}
    e_path, xa_path = item_dir / "e.wav", item_dir / "x_aligned.wav"
    if e_path.exists() and xa_path.exists():
        e, xa = read_wav(e_path), read_wav(xa_path)
    else:
        e, _, xa, _ = linear_stage(clips["d"], clips["x"], kalman_cfg)
        write_wav(e_path, e)
        write_wav(xa_path, xa)
    return TrainingItem(item_dir.name, clips["d"].samples, e.samples, xa.samples, clips["s"].samples,
                        clips["echo"].samples, clips["d"].sample_rate)


def dataset_items(dataset_dir) -> list:
    dirs = sorted(p for p in Path(dataset_dir).iterdir() if (p / "d.wav").exists())
    if not dirs:
        raise ValueError(f"no dataset items under {dataset_dir}")
    return dirs


def frame_labels(signal: np.ndarray, n_frames: int, cfg: NetConfig, threshold_db: float = 40.0) -> np.ndarray:
    """Energy VAD on the full-band signal, framed to line up with the network's frames."""
    full = StftConfig.for_rate(cfg.sample_rate)
    needed = (n_frames - 1) * full.hop + full.window_len
    padded = np.zeros(max(needed, full.hop + len(signal)), dtype=np.float32)
    padded[full.hop: full.hop + len(signal)] = signal
    labels = energy_vad(AudioClip(padded, cfg.sample_rate), full, threshold_db)
    return labels[:n_frames]


class Trainer:
    def __init__(self, net_cfg: NetConfig | None = None, loss_cfg: LossConfig | None = None,
                 train_cfg: TrainConfig | None = None):
        self.net_cfg = net_cfg or NetConfig()
        self.loss_cfg = loss_cfg or LossConfig()
        self.cfg = train_cfg or TrainConfig()
        torch.set_num_threads(self.cfg.threads)
        torch.manual_seed(self.cfg.seed)
        self.model = PostFilter(self.net_cfg)
        self.opt = Adam(self.model.parameters())
        self.step = 0
        self.epoch = 0

    def batch(self, items, rng: np.random.Generator):
        n = min(len(it.d) for it in items)
        crop = int(self.cfg.crop_seconds * items[0].sample_rate) if self.cfg.crop_seconds else 0
        length = min(crop, n) if crop else n
        cols = {k: [] for k in ("d", "e", "x", "s", "echo")}
        for it in items:
            start = int(rng.integers(0, len(it.d) - length + 1)) if length < len(it.d) else 0
            for k in cols:
                cols[k].append(getattr(it, k)[start:start + length])
        return {k: torch.from_numpy(np.stack(v).astype(np.float32)) for k, v in cols.items()}

    def losses(self, batch: dict) -> dict:
        fe = self.model.frontend
        D, E, X, S = (fe.analyze(batch[k]) for k in ("d", "e", "x", "s"))
        out = self.model.net(D, E, X)
        n_frames = D[0].shape[2]
        thr = self.cfg.vad_threshold_db
        echo_active = torch.from_numpy(np.stack(
            [frame_labels(sig.numpy(), n_frames, self.net_cfg, thr) for sig in batch["echo"]]))
        vad = torch.from_numpy(np.stack(
            [frame_labels(sig.numpy(), n_frames, self.net_cfg, thr) for sig in batch["s"]]))
        return compute_losses(out, D, S, echo_active, vad, self.loss_cfg)

    def train_step(self, batch: dict) -> dict:
        self.model.train()
        self.step += 1
        lr = self.cfg.lr(self.step)
        parts = self.losses(batch)
        backward(parts["total"])
        self.opt.step(lr)
        self.opt.zero_grad()
        record = {"step": self.step, "lr": lr}
        record.update({k: float(v.detach()) for k, v in parts.items()})
        return record

    def tensors(self) -> dict:
        out = {f"model.{k}": v for k, v in module_tensors(self.model).items()}
        out.update(self.opt.state())
        out["meta.step"] = torch.tensor([float(self.step)])
        out["meta.epoch"] = torch.tensor([float(self.epoch)])
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.tensors())

    def resume(self, path) -> None:
        tensors = load_checkpoint(path)
        load_module_tensors(self.model, {k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
        self.opt.load_state(tensors)
        self.step = int(tensors["meta.step"][0])
        self.epoch = int(tensors["meta.epoch"][0])

    def fit(self, items: list, out_dir=None, log_every: int = 50) -> list:
        """Run until cfg.epochs (or cfg.max_steps) is reached; returns the step log."""
        if not items:
            raise ValueError("empty dataset")
        out_dir = Path(out_dir) if out_dir else None
        log_fh = None
        if out_dir:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / NET_CONFIG_NAME).write_text(format_kv(self.net_cfg.to_flat()) + "\n")
            log_fh = open(out_dir / "train_log.jsonl", "a")
        history = []
        bs = self.cfg.batch_size
        try:
            while self.epoch < self.cfg.epochs:
                rng = np.random.default_rng([self.cfg.seed, self.epoch])
                order = rng.permutation(len(items))
                for start in range(0, len(order), bs):
                    if self.cfg.max_steps and self.step >= self.cfg.max_steps:
                        return history
                    record = self.train_step(self.batch([items[i] for i in order[start:start + bs]], rng))
                    record["epoch"] = self.epoch
                    history.append(record)
                    if log_fh:
                        log_fh.write(json.dumps(record) + "\n")
                    if self.step % log_every == 0:
                        log.info("step %d lr %.3g total %.4f", self.step, record["lr"], record["total"])
                self.epoch += 1
                if out_dir and self.cfg.save_every and self.epoch % self.cfg.save_every == 0:
                    self.save(out_dir / f"ckpt_epoch{self.epoch:03d}.bin")
        finally:
            if log_fh:
                log_fh.close()
        return history


def train(dataset_dir, net_cfg: NetConfig | None = None, loss_cfg: LossConfig | None = None,
          train_cfg: TrainConfig | None = None, out_dir=None, resume=None,
          kalman_cfg: PbfdkfConfig | None = None) -> Trainer:
    items = [prepare_item(p, kalman_cfg) for p in dataset_items(dataset_dir)]
    trainer = Trainer(net_cfg, loss_cfg, train_cfg)
    if resume:
        trainer.resume(resume)
    trainer.fit(items, out_dir)
    if out_dir:
        trainer.save(Path(out_dir) / "final.bin")
    return trainer


def train_config_record(cfg: TrainConfig) -> dict:
    return asdict(cfg)
