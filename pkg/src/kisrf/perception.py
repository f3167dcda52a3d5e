"""Per-space confidence predictor over judgment-token sequences.

Each embedding space gets its own small transformer encoder. The input sequence
is the projected initial query followed by one token per past judgment; a token
embeds the selected-minus-rejected difference vector, the search-state
embedding at that step, and a learned embedding of the binned difference norm.
Full (non-causal) self-attention runs over the whole sequence and a sigmoid
head read at the current step's token positions yields one confidence per
judged pair.
"""

from __future__ import annotations

import copy
import json
import logging
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from kisrf.corpus import Corpus, EmbeddingSpace
from kisrf.session import SessionState, top_indices

logger = logging.getLogger(__name__)

DIST_BINS = 100
STATE_POOL = 50


def dist_bin(norm: float) -> int:
    """Bin a difference-vector norm into [0, 99].

    Unit rows give norms in [0, 2]; the halved norm is cut into 100 uniform
    intervals, bin = clamp(ceil(norm / 2 * 100) - 1, 0, 99).
    """
    if norm < 0:
        raise ValueError(f"norm must be non-negative, got {norm}")
    return int(min(max(np.ceil(norm / 2.0 * DIST_BINS) - 1, 0), DIST_BINS - 1))


def state_embedding(
    space: EmbeddingSpace, probs: np.ndarray, active: np.ndarray
) -> np.ndarray:
    """Unit-renormalized mean of the top min(50, active) rows by probability.

    Returns a (dim,) float32 vector; the all-cancelling degenerate mean maps
    to the zero vector.
    """
    k = min(STATE_POOL, int(np.count_nonzero(active)))
    idx = top_indices(probs, active, k)
    mean = space.vectors64[idx].mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        return np.zeros(space.dim, dtype=np.float32)
    return (mean / norm).astype(np.float32)


@dataclass(frozen=True)
class JudgmentToken:
    """One judged pair, encoded for the predictor.

    ``step`` is the 1-based iteration the judgment belongs to; tokens of the
    same step are an unordered set.
    """

    v_diff: np.ndarray
    v_s: np.ndarray
    bin: int
    step: int


def encode_step(
    corpus: Corpus,
    space_index: int,
    state: SessionState,
    display,
    labels: list[int],
) -> list[JudgmentToken]:
    """Encode the current display's judgments as tokens for one space.

    Called before the update is applied: the state embedding reflects the
    distribution the display was drawn from, and the tokens carry step index
    ``state.step + 1``. Identical pair members yield a zero difference vector
    and bin 0; the token is still emitted.
    """
    if len(labels) != len(display.pairs):
        raise ValueError(
            f"{len(display.pairs)} pairs but {len(labels)} labels"
        )
    space = corpus.spaces[space_index]
    v_s = state_embedding(space, state.probs, state.active)
    step = state.step + 1
    tokens = []
    for (a, b), label in zip(display.pairs, labels):
        pos, neg = (a, b) if label == 0 else (b, a)
        diff = space.vectors[pos].astype(np.float64) - space.vectors[neg].astype(np.float64)
        tokens.append(
            JudgmentToken(
                v_diff=diff.astype(np.float32),
                v_s=v_s,
                bin=dist_bin(float(np.linalg.norm(diff))),
                step=step,
            )
        )
    return tokens


@dataclass
class PredictorConfig:
    """Architecture knobs; max_sequence covers 1 + max_steps * num_pairs."""

    model_dim: int = 128
    layers: int = 2
    heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.1
    max_sequence: int = 36

    def __post_init__(self) -> None:
        if self.model_dim % self.heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )

    def to_dict(self) -> dict:
        return {
            "model_dim": self.model_dim,
            "layers": self.layers,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "dropout": self.dropout,
            "max_sequence": self.max_sequence,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PredictorConfig":
        return cls(**doc)


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with h heads over one sequence."""

    def __init__(self, model_dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = model_dim // heads
        self.w_q = nn.Linear(model_dim, model_dim)
        self.w_k = nn.Linear(model_dim, model_dim)
        self.w_v = nn.Linear(model_dim, model_dim)
        self.w_o = nn.Linear(model_dim, model_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        """x: (B, S, D); valid: (B, S) bool, False = padding key."""
        b, s, d = x.shape
        q = self.w_q(x).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        k = self.w_k(x).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        v = self.w_v(x).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / np.sqrt(self.head_dim)
        scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        return self.w_o(out)


class FeedForward(nn.Module):
    """Position-wise two-layer MLP."""

    def __init__(self, model_dim: int, ff_dim: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(model_dim, ff_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(ff_dim, model_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer: attention then feed-forward."""

    def __init__(self, model_dim: int, heads: int, ff_dim: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(model_dim)
        self.attn = MultiHeadAttention(model_dim, heads, dropout)
        self.norm2 = nn.LayerNorm(model_dim)
        self.ff = FeedForward(model_dim, ff_dim, dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        x = x + self.dropout(self.attn(self.norm1(x), valid))
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


class PerceptionPredictor(nn.Module):
    """Confidence predictor for one embedding space.

    The same difference/state projection feeds both token components (their sum
    is the token content), so a zero token contributes nothing. The head is
    zero-initialized by default: an untrained predictor outputs exactly 0.5.

    Ablation flags zero out one input pathway and are recorded in checkpoints:
    ``disable_state`` drops the state-embedding term, ``disable_dist`` the
    binned-distance embedding.
    """

    def __init__(
        self,
        config: PredictorConfig,
        dim: int,
        disable_state: bool = False,
        disable_dist: bool = False,
        head_init: str = "zeros",
    ):
        super().__init__()
        self.config = config
        self.dim = dim
        self.disable_state = disable_state
        self.disable_dist = disable_dist
        self.input_proj = nn.Linear(dim, config.model_dim, bias=False)
        self.query_proj = nn.Linear(dim, config.model_dim)
        self.dist_embed = nn.Embedding(DIST_BINS, config.model_dim)
        # Position = iteration index only; same-step tokens share one embedding
        # so the model has no intra-step ordering signal.
        self.step_embed = nn.Embedding(config.max_sequence, config.model_dim)
        self.layers = nn.ModuleList(
            EncoderLayer(config.model_dim, config.heads, config.ff_dim, config.dropout)
            for _ in range(config.layers)
        )
        self.final_norm = nn.LayerNorm(config.model_dim)
        self.head = nn.Linear(config.model_dim, 1)
        if head_init == "zeros":
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)
        elif head_init != "random":
            raise ValueError(f"unknown head_init {head_init!r}")

    def forward(
        self,
        q0: torch.Tensor,
        v_diff: torch.Tensor,
        v_s: torch.Tensor,
        bins: torch.Tensor,
        steps: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        """Confidence logits for every token position.

        Args:
            q0: (B, dim) initial query vectors.
            v_diff: (B, L, dim) difference vectors.
            v_s: (B, L, dim) state embeddings.
            bins: (B, L) long distance-bin indices.
            steps: (B, L) long 1-based iteration indices (0 on padding).
            mask: (B, L) bool, True where the token is real.

        Returns:
            (B, L) logits; entries at padding positions are meaningless.

        Raises:
            ValueError: sequence longer than config.max_sequence.
        """
        b, length = bins.shape
        if 1 + length > self.config.max_sequence:
            raise ValueError(
                f"sequence of {1 + length} exceeds max_sequence "
                f"{self.config.max_sequence}"
            )
        tok = self.input_proj(v_diff)
        if not self.disable_state:
            tok = tok + self.input_proj(v_s)
        if not self.disable_dist:
            tok = tok + self.dist_embed(bins)
        tok = tok + self.step_embed(steps)
        q = self.query_proj(q0) + self.step_embed(
            torch.zeros(b, dtype=torch.long, device=q0.device)
        )
        x = torch.cat([q[:, None, :], tok], dim=1)
        valid = torch.cat(
            [torch.ones(b, 1, dtype=torch.bool, device=mask.device), mask], dim=1
        )
        for layer in self.layers:
            x = layer(x, valid)
        x = self.final_norm(x)
        return self.head(x)[:, 1:, 0]


def predict_confidences(
    model: PerceptionPredictor,
    q0: np.ndarray,
    tokens: list[JudgmentToken],
) -> np.ndarray:
    """Confidences in (0, 1) for the latest step's tokens.

    ``tokens`` is the full history (steps 1..t, in step order); the sigmoid
    head is read at the positions whose step equals the newest step.
    """
    if not tokens:
        raise ValueError("token history is empty")
    model.eval()
    dtype = next(model.parameters()).dtype
    length = len(tokens)
    v_diff = torch.from_numpy(np.stack([t.v_diff for t in tokens])).to(dtype)[None]
    v_s = torch.from_numpy(np.stack([t.v_s for t in tokens])).to(dtype)[None]
    bins = torch.tensor([[t.bin for t in tokens]], dtype=torch.long)
    steps = torch.tensor([[t.step for t in tokens]], dtype=torch.long)
    mask = torch.ones(1, length, dtype=torch.bool)
    q = torch.from_numpy(np.asarray(q0, dtype=np.float64)).to(dtype)[None]
    with torch.no_grad():
        logits = model(q, v_diff, v_s, bins, steps, mask)[0]
    last = max(t.step for t in tokens)
    sel = [i for i, t in enumerate(tokens) if t.step == last]
    return torch.sigmoid(logits[sel]).double().numpy()


def save_checkpoint(model: PerceptionPredictor, space_id: str, path) -> None:
    """Write one space's predictor: JSON header + named float32 blobs."""
    state = model.state_dict()
    names = sorted(state.keys())
    header = {
        "space_id": space_id,
        "dim": model.dim,
        "config": model.config.to_dict(),
        "disable_state": model.disable_state,
        "disable_dist": model.disable_dist,
        "params": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(state[n].detach().to(torch.float32).numpy().tobytes())


def load_checkpoint(path) -> tuple[PerceptionPredictor, str]:
    """Read a predictor checkpoint; returns (model, space_id)."""
    with open(path, "rb") as f:
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        model = PerceptionPredictor(
            PredictorConfig.from_dict(header["config"]),
            dim=header["dim"],
            disable_state=header["disable_state"],
            disable_dist=header["disable_dist"],
        )
        state = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
            state[entry["name"]] = torch.from_numpy(data.copy())
        model.load_state_dict(state)
    model.eval()
    return model, header["space_id"]
