"""Desk-scale supervised fine-tuning over instruction pairs.

The trainer exists to exercise the full tuning plumbing end to end on a desk
machine: a tiny byte-level language model learns to produce each pair's
output conditioned on its instruction, with the loss masked to output bytes.
The artifact directory it emits carries an endpoint descriptor (model id +
URL) in the shape the annotation gateway's configuration consumes.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .pairs import InstructionPair, load_pairs

log = logging.getLogger(__name__)

BASE_MODEL_ID = "tiny-byte-gru"


@dataclass(frozen=True)
class TuneConfig:
    learning_rate: float = 2e-5
    epochs: int = 3
    batch_size: int = 8
    optimizer: str = "AdamW"
    base_model_id: str = BASE_MODEL_ID
    seed: int = 0
    max_sequence_bytes: int = 1024
    embedding_dim: int = 64
    hidden_dim: int = 128


class TinyByteLM(nn.Module):
    """Byte-level GRU language model; deliberately small."""

    def __init__(self, embedding_dim: int = 64, hidden_dim: int = 128) -> None:
        super().__init__()
        self.embed = nn.Embedding(258, embedding_dim)  # 256 bytes + BOS + EOS
        self.rnn = nn.GRU(embedding_dim, hidden_dim, batch_first=True)
        self.head = nn.Linear(hidden_dim, 258)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        hidden, _ = self.rnn(self.embed(tokens))
        return self.head(hidden)


BOS, EOS, PAD = 256, 257, 0  # PAD shares byte 0; loss masking makes that safe


def build_model(config: TuneConfig) -> TinyByteLM:
    """Seeded base-model initialization; the same config yields the same
    weights, so an untrained artifact is reproducibly 'the base model'."""
    torch.manual_seed(config.seed)
    return TinyByteLM(config.embedding_dim, config.hidden_dim)


def encode_pair(pair: InstructionPair, max_bytes: int) -> tuple[list[int], int]:
    """Token sequence [BOS, instruction..., output..., EOS] plus the index
    where the output starts (loss is applied from there on).

    Overlong sequences lose instruction bytes from the end, i.e. the tail of
    the inference instance, with a logged warning.
    """
    instruction = list(pair.instruction.encode("utf-8"))
    output = list(pair.output.encode("utf-8"))
    budget = max_bytes - len(output) - 2
    if budget < 0:
        raise ValueError(f"output alone exceeds max_sequence_bytes={max_bytes}")
    if len(instruction) > budget:
        log.warning(
            "truncating instruction from %d to %d bytes to fit the sequence budget",
            len(instruction),
            budget,
        )
        instruction = instruction[:budget]
    tokens = [BOS] + instruction + output + [EOS]
    return tokens, 1 + len(instruction)


def _batches(n: int, batch_size: int, generator: torch.Generator) -> list[list[int]]:
    order = torch.randperm(n, generator=generator).tolist()
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _collate(encoded: list[tuple[list[int], int]], indices: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a batch and build next-token targets masked to output positions."""
    rows = [encoded[i] for i in indices]
    width = max(len(tokens) for tokens, _ in rows)
    inputs = torch.zeros(len(rows), width - 1, dtype=torch.long)
    targets = torch.full((len(rows), width - 1), -100, dtype=torch.long)
    for r, (tokens, output_start) in enumerate(rows):
        sequence = torch.tensor(tokens, dtype=torch.long)
        inputs[r, : len(tokens) - 1] = sequence[:-1]
        # positions predicting tokens at output_start.. are trained
        targets[r, output_start - 1 : len(tokens) - 1] = sequence[output_start:]
    return inputs, targets


def _dataset_loss(model: TinyByteLM, encoded, batch_size: int) -> float:
    """Mean masked cross-entropy over the whole pair set, in eval mode."""
    criterion = nn.CrossEntropyLoss(ignore_index=-100, reduction="sum")
    model.eval()
    total_loss = 0.0
    total_targets = 0
    with torch.no_grad():
        for start in range(0, len(encoded), batch_size):
            indices = list(range(start, min(start + batch_size, len(encoded))))
            inputs, targets = _collate(encoded, indices)
            logits = model(inputs)
            total_loss += float(criterion(logits.reshape(-1, 258), targets.reshape(-1)))
            total_targets += int((targets != -100).sum())
    model.train()
    return total_loss / total_targets


@dataclass
class TrainResult:
    artifact_dir: Path
    epoch_losses: list[float]
    descriptor: dict
    log_path: Path

    @property
    def model_path(self) -> Path:
        return self.artifact_dir / "model.pt"


def run_finetune(
    pairs_path: str | Path,
    out_dir: str | Path,
    config: TuneConfig = TuneConfig(),
    model_id: str | None = None,
) -> TrainResult:
    """Fine-tune the tiny base model on a validated pairs file.

    Writes the artifact directory atomically (staging + rename): model
    weights, per-epoch training log, and a gateway-consumable endpoint
    descriptor. A failed run leaves no partial checkpoint behind.
    """
    if config.optimizer != "AdamW":
        raise ValueError(f"unsupported optimizer {config.optimizer!r}")
    pairs = load_pairs(pairs_path)
    if not pairs:
        raise ValueError(f"no instruction pairs in {pairs_path}")
    encoded = [encode_pair(pair, config.max_sequence_bytes) for pair in pairs]

    model = build_model(config)
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.learning_rate)
    criterion = nn.CrossEntropyLoss(ignore_index=-100)
    generator = torch.Generator().manual_seed(config.seed)

    out_dir = Path(out_dir)
    staging = out_dir.with_name(out_dir.name + ".staging")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        log_records = []
        epoch_losses = []
        initial = _dataset_loss(model, encoded, config.batch_size)
        log_records.append({"epoch": 0, "dataset_loss": initial, "step_losses": []})
        for epoch in range(1, config.epochs + 1):
            step_losses = []
            for indices in _batches(len(encoded), config.batch_size, generator):
                inputs, targets = _collate(encoded, indices)
                optimizer.zero_grad()
                logits = model(inputs)
                loss = criterion(logits.reshape(-1, 258), targets.reshape(-1))
                loss.backward()
                optimizer.step()
                step_losses.append(float(loss.detach()))
            dataset_loss = _dataset_loss(model, encoded, config.batch_size)
            epoch_losses.append(dataset_loss)
            log_records.append(
                {"epoch": epoch, "dataset_loss": dataset_loss, "step_losses": step_losses}
            )
            log.info("epoch %d: dataset loss %.6f", epoch, dataset_loss)

        torch.save(model.state_dict(), staging / "model.pt")
        log_path = staging / "training_log.jsonl"
        log_path.write_text(
            "\n".join(json.dumps(record, sort_keys=True) for record in log_records) + "\n",
            encoding="utf-8",
        )
        descriptor = {
            "model_id": model_id or f"tunekit/{Path(pairs_path).stem}",
            "endpoint": (out_dir / "model.pt").resolve().as_uri(),
            "base_model_id": config.base_model_id,
            "pairs": len(pairs),
            "config": asdict(config),
        }
        (staging / "endpoint.json").write_text(
            json.dumps(descriptor, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    staging.rename(out_dir)
    return TrainResult(
        artifact_dir=out_dir,
        epoch_losses=epoch_losses,
        descriptor=descriptor,
        log_path=out_dir / "training_log.jsonl",
    )
