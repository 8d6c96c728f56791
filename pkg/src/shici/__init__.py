"""Form-constrained Chinese classical poetry toolkit.

Form registry, unified sample serialization, a character-level decoder-only
language model with a form-stressed weighted loss, top-k generation, and a
form-correctness evaluator.
"""

__version__ = "0.1.0"

from .corpus import (
    CorpusError,
    CoverageReport,
    Sample,
    TokenStream,
    Vocabulary,
    build_token_stream,
    build_vocabulary,
    coverage_report,
    decode,
    encode,
    normalize_punctuation,
    parse,
    serialize,
)
from .evaluation import (
    CorrectRateReport,
    EvaluationError,
    FormCheckResult,
    ab_compare,
    check_form,
    correct_rate,
)
from .forms import (
    Category,
    FormError,
    FormRegistry,
    FormSpec,
    SlotKind,
    builtin_shi_forms,
    expected_token_skeleton,
    load_registry,
    save_registry,
)
from .model import (
    ModelConfig,
    ModelError,
    TokenWeights,
    batch_loss,
    ce_loss,
    forward,
    gradients,
    init_parameters,
    load_checkpoint,
    loss_and_gradients,
    save_checkpoint,
    weighted_loss,
)
from .sampling import (
    GenerationError,
    GenerationParams,
    GenerationResult,
    build_prompt,
    generate,
    generate_batch,
    top_k_sample,
)
from .training import (
    Batcher,
    TrainConfig,
    TrainMode,
    TrainingError,
    TrainReport,
    make_batches,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
