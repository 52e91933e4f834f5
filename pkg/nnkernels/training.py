"""
Plain SGD training on the BCE loss.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from models import TrainingError
from nnkernels.loss import bce_loss
from nnkernels.rodnet import RodnetModel

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 1
    seed: int = 0
    reduction: str = "sum"
    progress: bool = True


@dataclass
class TrainResult:
    model: RodnetModel
    loss_history: List[float] = field(default_factory=list)


def sgd_train(dataset: Sequence[Tuple[np.ndarray, np.ndarray]], model: RodnetModel,
              config: TrainConfig) -> TrainResult:
    """
    Train a copy of ``model`` with SGD, one sample per step.

    Samples are visited in a seeded permutation each epoch. The loss of every
    step is recorded before that step's update.

    Args:
        dataset: Indexable (snippet, target) pairs
        model: Initial model; left untouched
        config: Learning rate, epochs, seed and loss reduction

    Returns:
        TrainResult with the trained copy and the per-step loss history

    Raises:
        TrainingError: empty dataset or a non-finite loss
    """
    if len(dataset) == 0:
        raise TrainingError("training dataset is empty")
    trained = model.copy()
    params = trained.parameters()
    rng = np.random.default_rng(config.seed)
    history: List[float] = []
    total = config.epochs * len(dataset)
    logger.info("Training %d parameters for %d steps (lr=%g, reduction=%s)",
                trained.num_parameters(), total, config.lr, config.reduction)
    with tqdm(total=total, desc="train", unit="step", disable=None if config.progress else True) as bar:
        for epoch in range(config.epochs):
            for index in rng.permutation(len(dataset)):
                snippet, target = dataset[int(index)]
                probs, cache = trained.forward(snippet)
                loss, grad_probs = bce_loss(probs, target, reduction=config.reduction)
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss {loss} at epoch {epoch}, step {len(history)}, sample {int(index)}"
                    )
                _, grads = trained.backward(cache, grad_probs)
                for name, value in params.items():
                    value -= (config.lr * grads[name]).astype(value.dtype, copy=False)
                history.append(loss)
                bar.set_postfix(loss=f"{loss:.4f}")
                bar.update(1)
        logger.info("Final loss %.6f (initial %.6f)", history[-1], history[0])
    return TrainResult(model=trained, loss_history=history)
