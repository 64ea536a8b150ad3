"""AdamW optimizer and the embedder training loop."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from subco_tracker.core.config import LossConfig, OptimizerConfig
from subco_tracker.core.embedder import EmbedderParams, ParamGrads
from subco_tracker.core.loss import loss_and_gradient_from_crops, sample_crops
from subco_tracker.core.schemas import SequenceSample

logger = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay over a dict of named arrays.

        theta <- theta - lr * weight_decay * theta
        m_t = beta1 * m_{t-1} + (1 - beta1) * g_t
        v_t = beta2 * v_{t-1} + (1 - beta2) * g_t^2
        theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, lr: float = 2e-4, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    @classmethod
    def from_config(cls, opt: OptimizerConfig) -> "AdamW":
        return cls(lr=opt.lr, betas=opt.betas, eps=opt.eps, weight_decay=opt.weight_decay)

    def step(self, arrays: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             lr: Optional[float] = None) -> Dict[str, np.ndarray]:
        """Returns updated copies of ``arrays``; the inputs are left untouched."""
        lr = self.lr if lr is None else lr
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        updated = {}
        for name, theta in arrays.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(theta)) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(theta)) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            decayed = theta - lr * self.weight_decay * theta
            updated[name] = decayed - lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        return updated


@dataclass
class EpochRecord:
    epoch: int
    mean_inter: Optional[float]
    mean_intra: Optional[float]
    mean_total: Optional[float]
    skipped: int
    samples: int
    lr: float


@dataclass
class TrainingHistory:
    records: List[EpochRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def losses(self) -> List[Optional[float]]:
        """Epoch-mean total loss over non-skipped samples (None if all were skipped)."""
        return [r.mean_total for r in self.records]

    @property
    def inter_losses(self) -> List[Optional[float]]:
        return [r.mean_inter for r in self.records]


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def _sum_grads(total: Optional[ParamGrads], grads: ParamGrads) -> ParamGrads:
    if total is None:
        return {name: g.copy() for name, g in grads.items()}
    for name, g in grads.items():
        total[name] += g
    return total


def train(dataset: Sequence[SequenceSample], params: EmbedderParams, cfg: LossConfig, opt: OptimizerConfig,
          log_path=None) -> Tuple[EmbedderParams, TrainingHistory]:
    """Trains the embedder with AdamW; returns the trained params and the per-epoch history.

    Samples are visited in a fresh seeded permutation every epoch. Gradients
    of ``opt.batch_size`` non-skipped samples are summed in visiting order and
    averaged before each optimizer step. With ``log_path`` set, one JSON line
    per epoch is written there.
    """
    if not dataset:
        raise ValueError("Training needs at least one sample")
    crops = [sample_crops(sample, params.patch_size) for sample in dataset]
    rng = np.random.default_rng(opt.seed)
    optimizer = AdamW.from_config(opt)
    history = TrainingHistory()

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = log_path.open("w", encoding="utf-8")

    try:
        for epoch in range(1, opt.epochs + 1):
            lr = opt.lr_at(epoch)
            inters, intras, totals = [], [], []
            skipped = 0
            batch, batch_count = None, 0
            for index in rng.permutation(len(dataset)):
                breakdown, grads = loss_and_gradient_from_crops(crops[index], params, cfg)
                if breakdown.skipped:
                    skipped += 1
                    logger.debug(f"Epoch {epoch}: sample {index} has no alive track, skipping")
                    continue
                inters.append(breakdown.inter)
                intras.append(breakdown.intra)
                totals.append(breakdown.total)
                batch = _sum_grads(batch, grads)
                batch_count += 1
                if batch_count == opt.batch_size:
                    params = params.with_arrays(optimizer.step(
                        params.arrays(), {n: g / batch_count for n, g in batch.items()}, lr=lr))
                    batch, batch_count = None, 0
            if batch_count:
                params = params.with_arrays(optimizer.step(
                    params.arrays(), {n: g / batch_count for n, g in batch.items()}, lr=lr))

            record = EpochRecord(epoch=epoch, mean_inter=_mean(inters), mean_intra=_mean(intras),
                                 mean_total=_mean(totals), skipped=skipped, samples=len(dataset), lr=lr)
            history.records.append(record)
            if not totals:
                message = f"Epoch {epoch}: all {len(dataset)} samples were skipped"
                history.warnings.append(message)
                logger.warning(message)
            else:
                logger.info(f"Epoch {epoch}/{opt.epochs}: total {record.mean_total:.4f} "
                            f"(inter {record.mean_inter:.4f}, intra {record.mean_intra:.4f}), "
                            f"skipped {skipped}, lr {lr:g}")
            if log_file is not None:
                log_file.write(json.dumps(asdict(record)) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    return params, history
