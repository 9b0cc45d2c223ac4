"""Optional fine-tuning backend built on Hugging Face seq2seq models.

Fulfills the same contract as the mock: Adam optimization with a linear
warmup schedule, per-epoch train/validation losses, greedy decoding by
default, and checkpoint round-trips. Token units here are the model
tokenizer's tokens. Requires ``torch`` and ``transformers`` plus local
model weights; nothing in the default test run imports this module.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, ClassVar, Sequence

from .backend import (
    ModelHandle,
    Pair,
    Seq2SeqBackend,
    TrainConfig,
    TrainingTrace,
    read_checkpoint_metadata,
    write_checkpoint_metadata,
)
from .errors import BackendError

_DEFAULT_MODEL = "t5-small"


def _import_torch() -> Any:
    try:
        import torch
    except ImportError as exc:
        raise BackendError(
            "the transformers backend requires torch; install the [real] extra"
        ) from exc
    return torch


def _import_transformers() -> Any:
    try:
        import transformers
    except ImportError as exc:
        raise BackendError(
            "the transformers backend requires transformers; install the [real] extra"
        ) from exc
    return transformers


class TransformersSeq2SeqBackend(Seq2SeqBackend):
    """Fine-tunes a pretrained text-to-text model on (input, target) pairs."""

    name: ClassVar[str] = "transformers"

    def __init__(self, model_name: str | None = None, device: str = "cpu"):
        self.model_name = model_name or os.environ.get("COTVQA_MODEL", _DEFAULT_MODEL)
        self.device = device

    def _new_model(self):
        transformers = _import_transformers()
        try:
            tokenizer = transformers.AutoTokenizer.from_pretrained(self.model_name)
            model = transformers.AutoModelForSeq2SeqLM.from_pretrained(self.model_name)
        except Exception as exc:
            raise BackendError(
                f"cannot load pretrained model {self.model_name!r}: {exc}"
            ) from exc
        return model.to(self.device), tokenizer

    def _encode_batch(self, tokenizer, batch: Sequence[Pair], config: TrainConfig):
        torch = _import_torch()
        max_in = config.max_input_tokens or 512
        max_out = config.max_output_tokens or 128
        sources = [source for source, _ in batch]
        targets = [target for _, target in batch]
        encoded = tokenizer(
            sources, padding=True, truncation=True, max_length=max_in, return_tensors="pt"
        )
        labels = tokenizer(
            targets, padding=True, truncation=True, max_length=max_out, return_tensors="pt"
        ).input_ids
        labels[labels == tokenizer.pad_token_id] = -100
        return {
            "input_ids": encoded.input_ids.to(self.device),
            "attention_mask": encoded.attention_mask.to(self.device),
            "labels": labels.to(self.device),
        }

    def _epoch_loss(self, model, tokenizer, pairs, config, optimizer=None, scheduler=None):
        torch = _import_torch()
        if not pairs:
            return 0.0
        total = 0.0
        batches = 0
        for start in range(0, len(pairs), config.batch_size):
            batch = pairs[start : start + config.batch_size]
            inputs = self._encode_batch(tokenizer, batch, config)
            if optimizer is not None:
                model.train()
                optimizer.zero_grad()
                loss = model(**inputs).loss
                loss.backward()
                if config.grad_clip_norm is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
                optimizer.step()
                if scheduler is not None:
                    scheduler.step()
            else:
                model.eval()
                with torch.no_grad():
                    loss = model(**inputs).loss
            total += float(loss.item())
            batches += 1
        return total / batches

    def fit(
        self,
        train_pairs: Sequence[Pair],
        val_pairs: Sequence[Pair],
        config: TrainConfig,
        init: ModelHandle | None = None,
    ) -> tuple[ModelHandle, TrainingTrace]:
        if not train_pairs:
            raise BackendError("fit requires a non-empty train_pairs list")
        torch = _import_torch()
        torch.manual_seed(config.seed)
        if init is not None:
            self.check_handle(init)
            model, tokenizer = init.payload
        else:
            model, tokenizer = self._new_model()

        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

        def lr_lambda(step: int) -> float:
            if step < config.warmup_steps:
                return step / max(1, config.warmup_steps)
            remaining = config.total_steps - step
            return max(0.0, remaining / max(1, config.total_steps - config.warmup_steps))

        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_lambda)
        train_losses = []
        val_losses = []
        for _ in range(config.epochs):
            train_losses.append(
                max(0.0, self._epoch_loss(model, tokenizer, list(train_pairs), config, optimizer, scheduler))
            )
            val_losses.append(
                max(0.0, self._epoch_loss(model, tokenizer, list(val_pairs), config))
            )
        handle = ModelHandle(
            backend_id=self.name, config=config, payload=(model, tokenizer)
        )
        return handle, TrainingTrace(tuple(train_losses), tuple(val_losses))

    def generate(self, handle: ModelHandle, text: str, max_output_tokens: int) -> str:
        self.check_handle(handle)
        if max_output_tokens < 1:
            raise BackendError("max_output_tokens must be >= 1")
        torch = _import_torch()
        model, tokenizer = handle.payload
        max_in = handle.config.max_input_tokens or 512
        encoded = tokenizer(
            text, truncation=True, max_length=max_in, return_tensors="pt"
        ).to(self.device)
        num_beams = handle.config.beam_width if handle.config.decode == "beam" else 1
        model.eval()
        with torch.no_grad():
            output_ids = model.generate(
                **encoded,
                max_new_tokens=max_output_tokens,
                num_beams=num_beams,
                do_sample=False,
            )
        return tokenizer.decode(output_ids[0], skip_special_tokens=True)

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
        model, tokenizer = handle.payload
        model.save_pretrained(target / "model")
        tokenizer.save_pretrained(target / "model")
        return target

    def load_checkpoint(self, directory: str | Path) -> ModelHandle:
        transformers = _import_transformers()
        source = Path(directory)
        metadata = read_checkpoint_metadata(source, self.name)
        model_dir = source / "model"
        if not model_dir.is_dir():
            raise BackendError(f"missing checkpoint payload at {model_dir}")
        try:
            tokenizer = transformers.AutoTokenizer.from_pretrained(model_dir)
            model = transformers.AutoModelForSeq2SeqLM.from_pretrained(model_dir)
        except Exception as exc:
            raise BackendError(f"corrupt checkpoint at {model_dir}: {exc}") from exc
        config = TrainConfig.from_dict(metadata["config"])
        return ModelHandle(
            backend_id=self.name, config=config, payload=(model.to(self.device), tokenizer)
        )
