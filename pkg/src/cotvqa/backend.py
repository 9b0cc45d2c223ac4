"""Text-to-text backend contract, training configuration, and the mock backend.

Every backend fulfills the same contract: ``fit`` consumes (input, target)
string pairs and returns an opaque handle plus a per-epoch loss trace;
``generate`` is deterministic under greedy decoding and respects the output
token budget; checkpoints round-trip behaviorally identical handles.

The mock backend makes the whole pipeline testable without model weights: it
memorizes every training and validation pair exactly (later pairs win on
duplicate inputs), answers unseen inputs with the fixed string ``unknown``,
reports all losses as 0.0, and counts tokens as whitespace-separated words.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any, ClassVar, Sequence

from .errors import BackendError

Pair = tuple[str, str]

ANSWER_TOKEN_BUDGET = 128
EXPLANATION_TOKEN_BUDGET = 256

_METADATA_FILE = "metadata.json"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one fine-tuning run.

    ``max_input_tokens`` / ``max_output_tokens`` left as None are resolved
    per task by the experiment engine (answer tasks get the answer budget,
    explanation generation the larger one). Token units are backend-defined.
    """

    learning_rate: float = 1e-5
    scheduler: str = "linear"
    total_steps: int = 10_000
    warmup_steps: int = 500
    epochs: int = 10
    max_input_tokens: int | None = None
    max_output_tokens: int | None = None
    grad_clip_norm: float | None = 1.0
    batch_size: int = 8
    seed: int = 0
    decode: str = "greedy"
    beam_width: int = 1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.scheduler != "linear":
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("warmup_steps must satisfy 0 <= warmup_steps <= total_steps")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("max_input_tokens", "max_output_tokens"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be >= 1 when set")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be > 0 when set")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.decode not in ("greedy", "beam"):
            raise ValueError(f"unknown decode strategy {self.decode!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "TrainConfig":
        return cls(**values)


@dataclass(frozen=True)
class TrainingTrace:
    """Per-epoch train and validation losses."""

    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "train_loss", tuple(self.train_loss))
        object.__setattr__(self, "val_loss", tuple(self.val_loss))
        if len(self.train_loss) != len(self.val_loss):
            raise ValueError("train_loss and val_loss must have the same length")
        for value in (*self.train_loss, *self.val_loss):
            if not math.isfinite(value) or value < 0:
                raise ValueError("losses must be finite and >= 0")

    def __len__(self) -> int:
        return len(self.train_loss)


@dataclass(frozen=True)
class ModelHandle:
    """Opaque reference to a trained generator.

    Carries the owning backend's identity and the config it was trained
    with; the payload is backend-private.
    """

    backend_id: str
    config: TrainConfig
    payload: Any = None


class Seq2SeqBackend(ABC):
    """Contract implemented by the mock and by real fine-tuning adapters."""

    name: ClassVar[str] = "abstract"

    def check_handle(self, handle: ModelHandle) -> None:
        if handle.backend_id != self.name:
            raise BackendError(
                f"handle belongs to backend {handle.backend_id!r}, not {self.name!r}"
            )

    @abstractmethod
    def fit(
        self,
        train_pairs: Sequence[Pair],
        val_pairs: Sequence[Pair],
        config: TrainConfig,
        init: ModelHandle | None = None,
    ) -> tuple[ModelHandle, TrainingTrace]:
        """Train on the given pairs, optionally warm-starting from ``init``."""

    @abstractmethod
    def generate(self, handle: ModelHandle, text: str, max_output_tokens: int) -> str:
        """Greedy-decode one output, at most ``max_output_tokens`` tokens long."""

    @abstractmethod
    def save_checkpoint(
        self,
        handle: ModelHandle,
        directory: str | Path,
        extra_metadata: dict[str, Any] | None = None,
    ) -> Path:
        """Persist the handle; overwrites any previous checkpoint there."""

    @abstractmethod
    def load_checkpoint(self, directory: str | Path) -> ModelHandle:
        """Restore a behaviorally identical handle from a checkpoint directory."""


def write_checkpoint_metadata(
    directory: Path,
    backend_id: str,
    config: TrainConfig,
    extra_metadata: dict[str, Any] | None = None,
) -> None:
    metadata: dict[str, Any] = {
        "backend": backend_id,
        "config": config.to_dict(),
        "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    (directory / _METADATA_FILE).write_text(
        json.dumps(metadata, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def read_checkpoint_metadata(directory: Path, expected_backend: str) -> dict[str, Any]:
    path = directory / _METADATA_FILE
    if not path.is_file():
        raise BackendError(f"missing checkpoint metadata at {path}")
    try:
        metadata = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BackendError(f"corrupt checkpoint metadata at {path}: {exc}") from exc
    if metadata.get("backend") != expected_backend:
        raise BackendError(
            f"checkpoint at {directory} belongs to backend {metadata.get('backend')!r}, "
            f"not {expected_backend!r}"
        )
    return metadata


class MockBackend(Seq2SeqBackend):
    """Deterministic lookup backend for tests and dry runs."""

    name: ClassVar[str] = "mock"

    _PAIRS_FILE = "pairs.jsonl"

    def fit(
        self,
        train_pairs: Sequence[Pair],
        val_pairs: Sequence[Pair],
        config: TrainConfig,
        init: ModelHandle | None = None,
    ) -> tuple[ModelHandle, TrainingTrace]:
        if not train_pairs:
            raise BackendError("fit requires a non-empty train_pairs list")
        mapping: dict[str, str] = {}
        if init is not None:
            self.check_handle(init)
            mapping.update(init.payload)
        for source, target in (*train_pairs, *val_pairs):
            mapping[source] = target
        trace = TrainingTrace(
            train_loss=(0.0,) * config.epochs, val_loss=(0.0,) * config.epochs
        )
        return ModelHandle(backend_id=self.name, config=config, payload=mapping), trace

    def generate(self, handle: ModelHandle, text: str, max_output_tokens: int) -> str:
        self.check_handle(handle)
        if max_output_tokens < 1:
            raise BackendError("max_output_tokens must be >= 1")
        output = handle.payload.get(text, "unknown")
        tokens = output.split()
        if len(tokens) <= max_output_tokens:
            return output
        return " ".join(tokens[:max_output_tokens])

    def save_checkpoint(
        self,
        handle: ModelHandle,
        directory: str | Path,
        extra_metadata: dict[str, Any] | None = None,
    ) -> Path:
        self.check_handle(handle)
        target = Path(directory)
        target.mkdir(parents=True, exist_ok=True)
        write_checkpoint_metadata(target, self.name, handle.config, extra_metadata)
        lines = [
            json.dumps({"input": source, "target": out}, ensure_ascii=False)
            for source, out in handle.payload.items()
        ]
        (target / self._PAIRS_FILE).write_text(
            "".join(line + "\n" for line in lines), encoding="utf-8"
        )
        return target

    def load_checkpoint(self, directory: str | Path) -> ModelHandle:
        source = Path(directory)
        metadata = read_checkpoint_metadata(source, self.name)
        pairs_path = source / self._PAIRS_FILE
        if not pairs_path.is_file():
            raise BackendError(f"missing checkpoint payload at {pairs_path}")
        mapping: dict[str, str] = {}
        try:
            for line in pairs_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                mapping[obj["input"]] = obj["target"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise BackendError(f"corrupt checkpoint payload at {pairs_path}: {exc}") from exc
        config = TrainConfig.from_dict(metadata["config"])
        return ModelHandle(backend_id=self.name, config=config, payload=mapping)


def get_backend(name: str) -> Seq2SeqBackend:
    """Look up a backend implementation by name."""
    if name == "mock":
        return MockBackend()
    if name == "transformers":
        from .adapters import TransformersSeq2SeqBackend

        return TransformersSeq2SeqBackend()
    raise BackendError(f"unknown backend {name!r}")
