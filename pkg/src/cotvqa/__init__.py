"""Caption-augmented chain-of-thought QA experiments, end-to-end testable."""

from .backend import (
    ANSWER_TOKEN_BUDGET,
    EXPLANATION_TOKEN_BUDGET,
    MockBackend,
    ModelHandle,
    Seq2SeqBackend,
    TrainConfig,
    TrainingTrace,
    get_backend,
)
from .corpus import (
    CaptionMap,
    Corpus,
    QARecord,
    Split,
    attach_captions,
    canonical_gold,
    load_caption_file,
    load_scienceqa,
    load_textvqa,
    select_split,
    write_corpus,
)
from .errors import (
    BackendError,
    CorpusError,
    CotvqaError,
    ExperimentError,
    ManifestError,
    PromptError,
)
from .experiments import (
    ExperimentArtifacts,
    ExperimentSpec,
    ExplanationStore,
    builtin_specs,
    consistency_check,
    generate_explanations,
    resolve_order,
    resolved_config,
    run_experiment,
    run_plan,
    two_stage_infer,
)
from .manifest import RunManifest, build_manifest, load_manifest_file
from .metrics import (
    EvalReport,
    PredictionRow,
    RougeScore,
    accuracy,
    evaluate,
    parse_report,
    read_predictions,
    render_report,
    rouge_l,
    rouge_n,
    write_predictions,
)
from .prompts import (
    ParsedOutput,
    TaskKind,
    build_input,
    build_target,
    match_answer,
    normalize_text,
    parse_output,
)
from .reporting import (
    ResultsRow,
    build_results_rows,
    emit_loss_curves,
    emit_results_table,
    parse_losses_csv,
    render_results_table,
)

__version__ = "0.1.0"
