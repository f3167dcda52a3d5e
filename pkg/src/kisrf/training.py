"""Training for the per-space confidence predictor.

Trajectory records are unrolled into prefix sequences: a trajectory that ends
at step T yields T examples, the t-th carrying tokens for steps 1..t and the
per-pair alignment bits of step t as targets. Loss is binary cross entropy on
the predicted confidences of the final step's tokens, accumulated in float64.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from kisrf.corpus import Corpus
from kisrf.perception import JudgmentToken, PerceptionPredictor, dist_bin

logger = logging.getLogger(__name__)


@dataclass
class SequenceExample:
    """One training sequence for one space."""

    traj_id: int
    q0: np.ndarray
    tokens: list[JudgmentToken]
    targets: np.ndarray

    @property
    def final_step(self) -> int:
        return self.tokens[-1].step


@dataclass
class TrainResult:
    """Per-epoch loss curves; validation empty when val_fraction = 0.

    ``val_traj_ids`` lists the held-out trajectories so callers can measure
    held-out metrics on exactly the split the trainer never saw.
    """

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_traj_ids: list[int] = field(default_factory=list)


def build_examples(
    records: list[dict], corpus: Corpus, space_index: int
) -> list[SequenceExample]:
    """Unroll trajectory records into per-step prefix examples for one space.

    Difference vectors and distance bins are rebuilt from the corpus rows;
    state embeddings and alignment targets come from the record.
    """
    space = corpus.spaces[space_index]
    examples = []
    for traj_id, rec in enumerate(records):
        q0 = np.asarray(rec["query"][space_index], dtype=np.float32)
        tokens: list[JudgmentToken] = []
        for step_no, step in enumerate(rec["steps"], start=1):
            v_s = np.asarray(step["state_embeddings"][space_index], dtype=np.float32)
            for pair, label in zip(step["display"]["pairs"], step["labels"]):
                a, b = int(pair["a"]), int(pair["b"])
                pos, neg = (a, b) if label == 0 else (b, a)
                diff = space.vectors[pos].astype(np.float64) - space.vectors[neg].astype(
                    np.float64
                )
                tokens.append(
                    JudgmentToken(
                        v_diff=diff.astype(np.float32),
                        v_s=v_s,
                        bin=dist_bin(float(np.linalg.norm(diff))),
                        step=step_no,
                    )
                )
            targets = np.asarray(step["alignment"][space_index], dtype=np.float32)
            examples.append(
                SequenceExample(
                    traj_id=traj_id,
                    q0=q0,
                    tokens=list(tokens),
                    targets=targets,
                )
            )
    return examples


def collate(
    examples: list[SequenceExample], dtype: torch.dtype = torch.float32
) -> dict[str, torch.Tensor]:
    """Pad a batch of examples into model-ready tensors.

    ``loss_mask`` marks the final-step token positions whose confidences are
    scored; ``targets`` is aligned with it (zero elsewhere).
    """
    b = len(examples)
    dim = examples[0].q0.shape[0]
    length = max(len(ex.tokens) for ex in examples)
    q0 = torch.zeros(b, dim, dtype=dtype)
    v_diff = torch.zeros(b, length, dim, dtype=dtype)
    v_s = torch.zeros(b, length, dim, dtype=dtype)
    bins = torch.zeros(b, length, dtype=torch.long)
    steps = torch.zeros(b, length, dtype=torch.long)
    mask = torch.zeros(b, length, dtype=torch.bool)
    loss_mask = torch.zeros(b, length, dtype=torch.bool)
    targets = torch.zeros(b, length, dtype=dtype)
    for i, ex in enumerate(examples):
        n = len(ex.tokens)
        q0[i] = torch.from_numpy(ex.q0).to(dtype)
        v_diff[i, :n] = torch.from_numpy(np.stack([t.v_diff for t in ex.tokens])).to(dtype)
        v_s[i, :n] = torch.from_numpy(np.stack([t.v_s for t in ex.tokens])).to(dtype)
        bins[i, :n] = torch.tensor([t.bin for t in ex.tokens], dtype=torch.long)
        steps[i, :n] = torch.tensor([t.step for t in ex.tokens], dtype=torch.long)
        mask[i, :n] = True
        final = ex.final_step
        final_pos = [j for j, t in enumerate(ex.tokens) if t.step == final]
        if len(final_pos) != ex.targets.shape[0]:
            raise ValueError(
                f"example has {len(final_pos)} final-step tokens but "
                f"{ex.targets.shape[0]} targets"
            )
        for j, y in zip(final_pos, ex.targets):
            loss_mask[i, j] = True
            targets[i, j] = float(y)
    return {
        "q0": q0,
        "v_diff": v_diff,
        "v_s": v_s,
        "bins": bins,
        "steps": steps,
        "mask": mask,
        "loss_mask": loss_mask,
        "targets": targets,
    }


def batch_loss(model: PerceptionPredictor, batch: dict[str, torch.Tensor]) -> torch.Tensor:
    """Mean BCE over the batch's scored positions, accumulated in float64."""
    logits = model(
        batch["q0"], batch["v_diff"], batch["v_s"], batch["bins"], batch["steps"],
        batch["mask"],
    )
    sel = batch["loss_mask"]
    return torch.nn.functional.binary_cross_entropy_with_logits(
        logits[sel].double(), batch["targets"][sel].double()
    )


def train(
    model: PerceptionPredictor,
    examples: list[SequenceExample],
    epochs: int = 20,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
    val_fraction: float = 0.1,
) -> TrainResult:
    """Train one space's predictor; seeded and reproducible.

    The validation split is by trajectory, not by example, so no prefix of a
    held-out trajectory leaks into training.

    Raises:
        ValueError: empty dataset or empty training split.
        RuntimeError: non-finite loss (learning rate too high).
    """
    if not examples:
        raise ValueError("no training examples")
    # Fixed thread count keeps reductions bit-for-bit reproducible.
    torch.set_num_threads(1)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    traj_ids = sorted({ex.traj_id for ex in examples})
    perm = rng.permutation(len(traj_ids))
    n_val = int(round(val_fraction * len(traj_ids)))
    val_ids = {traj_ids[i] for i in perm[:n_val]}
    train_set = [ex for ex in examples if ex.traj_id not in val_ids]
    val_set = [ex for ex in examples if ex.traj_id in val_ids]
    if not train_set:
        raise ValueError("training split is empty; lower val_fraction")

    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    result = TrainResult(val_traj_ids=sorted(val_ids))
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(len(train_set))
        total = 0.0
        count = 0
        for start in range(0, len(order), batch_size):
            chunk = [train_set[i] for i in order[start : start + batch_size]]
            batch = collate(chunk)
            optimizer.zero_grad()
            loss = batch_loss(model, batch)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}; "
                    f"lr={lr} is likely too high"
                )
            loss.backward()
            optimizer.step()
            n_scored = int(batch["loss_mask"].sum())
            total += float(loss.detach()) * n_scored
            count += n_scored
        result.train_loss.append(total / count)
        if val_set:
            result.val_loss.append(evaluate_loss(model, val_set, batch_size))
        logger.debug(
            "epoch %d: train %.4f%s", epoch, result.train_loss[-1],
            f" val {result.val_loss[-1]:.4f}" if val_set else "",
        )
    return result


def evaluate_loss(
    model: PerceptionPredictor, examples: list[SequenceExample], batch_size: int = 64
) -> float:
    """Mean BCE over a dataset, inference mode."""
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            batch = collate(chunk)
            loss = batch_loss(model, batch)
            n_scored = int(batch["loss_mask"].sum())
            total += float(loss) * n_scored
            count += n_scored
    return total / count


def alignment_accuracy(
    model: PerceptionPredictor, examples: list[SequenceExample], batch_size: int = 64
) -> tuple[float, float]:
    """(accuracy of confidence > 0.5 vs alignment bits, majority-class rate).

    The majority-class rate is the accuracy of always predicting the more
    common alignment bit; report it next to the model's accuracy as the
    baseline.
    """
    model.eval()
    hits = 0
    total = 0
    ones = 0
    with torch.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            batch = collate(chunk)
            logits = model(
                batch["q0"], batch["v_diff"], batch["v_s"], batch["bins"],
                batch["steps"], batch["mask"],
            )
            sel = batch["loss_mask"]
            pred = (logits[sel] > 0).float()
            y = batch["targets"][sel]
            hits += int((pred == y).sum())
            total += int(sel.sum())
            ones += int(y.sum())
    majority = max(ones, total - ones) / total
    return hits / total, majority


def gradient_check(
    model: PerceptionPredictor,
    examples: list[SequenceExample],
    epsilon: float = 1e-4,
    max_params: int = 1000,
    seed: int = 0,
) -> float:
    """Max relative error of analytic vs central-difference gradients.

    Runs on a float64 copy in eval mode (dropout off) over one fixed batch.
    Up to ``max_params`` coordinates are sampled across all parameters.
    Relative error is |a - n| / max(1, |a|, |n|), guarded so near-zero
    gradients compare absolutely.

    Raises:
        ValueError: epsilon outside [1e-5, 1e-3].
    """
    if not 1e-5 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must be in [1e-5, 1e-3], got {epsilon}")
    probe = copy.deepcopy(model).double()
    probe.eval()
    batch = collate(examples, dtype=torch.float64)

    probe.zero_grad()
    loss = batch_loss(probe, batch)
    loss.backward()

    params = [p for p in probe.parameters() if p.requires_grad]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    coords = rng.choice(total, size=min(max_params, total), replace=False)

    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    with torch.no_grad():
        for c in sorted(int(x) for x in coords):
            p_idx = int(np.searchsorted(offsets, c, side="right") - 1)
            flat_idx = c - offsets[p_idx]
            param = params[p_idx]
            analytic = float(param.grad.view(-1)[flat_idx])
            original = float(param.view(-1)[flat_idx])
            param.view(-1)[flat_idx] = original + epsilon
            loss_plus = float(batch_loss(probe, batch))
            param.view(-1)[flat_idx] = original - epsilon
            loss_minus = float(batch_loss(probe, batch))
            param.view(-1)[flat_idx] = original
            numeric = (loss_plus - loss_minus) / (2 * epsilon)
            err = abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))
            worst = max(worst, err)
    return worst
