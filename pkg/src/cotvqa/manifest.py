"""Run manifests: flat key/value files plus flag overrides.

Precedence is flags > manifest file > defaults; the output directory can
additionally be overridden by the ``COTVQA_OUT_DIR`` environment variable
(between flags and the manifest). Recognized keys: ``records``,
``captions``, ``schema``, ``out_dir``, ``backend``, ``experiments``,
``seed``, and the training keys ``learning_rate``, ``total_steps``,
``warmup_steps``, ``epochs``, ``batch_size``, ``grad_clip_norm``,
``max_input_tokens``, ``max_output_tokens``, ``decode``, ``beam_width``.
Lines starting with ``#`` are comments; ``experiments`` is ``all`` or a
comma-separated id list; ``grad_clip_norm`` accepts ``none``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backend import TrainConfig
from .errors import ManifestError

_INT_KEYS = frozenset(
    {
        "total_steps",
        "warmup_steps",
        "epochs",
        "batch_size",
        "max_input_tokens",
        "max_output_tokens",
        "beam_width",
        "seed",
    }
)
_FLOAT_KEYS = frozenset({"learning_rate", "grad_clip_norm"})
_TRAIN_KEYS = frozenset(
    {
        "learning_rate",
        "total_steps",
        "warmup_steps",
        "epochs",
        "batch_size",
        "grad_clip_norm",
        "max_input_tokens",
        "max_output_tokens",
        "decode",
        "beam_width",
    }
)
KNOWN_KEYS = (
    frozenset({"records", "captions", "schema", "out_dir", "backend", "experiments", "seed"})
    | _TRAIN_KEYS
)


@dataclass
class RunManifest:
    """Resolved configuration for one ``run`` invocation."""

    records: Path
    captions: Path | None = None
    schema: str = "scienceqa"
    out_dir: Path = Path("runs")
    backend: str = "mock"
    experiments: tuple[str, ...] | None = None  # None selects all built-ins
    seed: int = 0
    train_overrides: dict[str, Any] = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(seed=self.seed, **self.train_overrides)
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"invalid training configuration: {exc}") from exc

    def validate_paths(self) -> None:
        if not self.records.is_file():
            raise ManifestError(f"records file does not exist: {self.records}")
        if self.captions is not None and not self.captions.is_file():
            raise ManifestError(f"caption file does not exist: {self.captions}")
        if self.schema not in ("scienceqa", "textvqa"):
            raise ManifestError(f"unknown schema {self.schema!r}")


def load_manifest_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; unknown keys are errors."""
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {source}: {exc}") from exc
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ManifestError(f"{source}:{lineno}: expected key = value")
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise ManifestError(f"{source}:{lineno}: unknown manifest key {key!r}")
        values[key] = value.strip()
    return values


def _convert(key: str, raw: str) -> Any:
    if key == "grad_clip_norm" and raw.lower() == "none":
        return None
    if key in _INT_KEYS:
        try:
            return int(raw)
        except ValueError:
            raise ManifestError(f"manifest key {key!r}: invalid integer {raw!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise ManifestError(f"manifest key {key!r}: invalid number {raw!r}") from None
    return raw


def parse_experiment_selection(raw: str) -> tuple[str, ...] | None:
    if raw.strip().lower() == "all":
        return None
    selected = tuple(part.strip() for part in raw.split(",") if part.strip())
    if not selected:
        raise ManifestError(f"empty experiment selection {raw!r}")
    return selected


def build_manifest(
    file_values: dict[str, str],
    flag_values: dict[str, Any] | None = None,
    env_out_dir: str | None = None,
) -> RunManifest:
    """Merge manifest file values and CLI flags into a :class:`RunManifest`.

    Flag values of None mean "not given"; string values (from either source)
    are converted per key. ``grad_clip_norm = none`` disables clipping.
    """
    flag_values = flag_values or {}
    merged: dict[str, Any] = dict(file_values)
    if env_out_dir and flag_values.get("out_dir") is None:
        merged["out_dir"] = env_out_dir
    merged.update({key: value for key, value in flag_values.items() if value is not None})

    for key, value in list(merged.items()):
        if isinstance(value, str) and (key in _INT_KEYS or key in _FLOAT_KEYS):
            merged[key] = _convert(key, value)

    if "records" not in merged:
        raise ManifestError("no records file given (manifest key 'records' or --records)")
    experiments = merged.get("experiments")
    if isinstance(experiments, str):
        experiments = parse_experiment_selection(experiments)
    return RunManifest(
        records=Path(merged["records"]),
        captions=Path(merged["captions"]) if merged.get("captions") else None,
        schema=merged.get("schema", "scienceqa"),
        out_dir=Path(merged.get("out_dir", "runs")),
        backend=merged.get("backend", "mock"),
        experiments=experiments,
        seed=merged.get("seed", 0),
        train_overrides={key: merged[key] for key in _TRAIN_KEYS if key in merged},
    )
