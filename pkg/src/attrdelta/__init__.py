"""attrdelta: subject-scoped attribute directions for text-to-image models.

Learn a direction in a text encoder's tokenwise embedding space from
contrastive prompts, then add it (scaled) to the token rows of a subject
word at generation time to dial one attribute of one subject up or down,
compose several attributes, or delay an edit past the early layout steps.
"""

from .deltafile import DeltaRegistry, load_delta, save_delta
from .diffusion import (
    Backbone,
    Conditioning,
    CountingBackbone,
    NoiseSchedule,
    RecordingBackbone,
    SamplerConfig,
    ToyLinearBackbone,
    add_noise,
    cosine_vp_schedule,
    get_backbone,
    guided_x0,
    list_backbones,
    register_backbone,
    sample,
)
from .encoders import (
    StubTextEncoder,
    TextEncoder,
    ToyTextEncoder,
    get_encoder,
    list_encoders,
    register_encoder,
)
from .engine import (
    DeltaApplication,
    GenerationConfig,
    GenerationResult,
    SweepAxis,
    SweepResult,
    apply_deltas,
    generate_with_deltas,
    sweep_grid,
)
from .errors import AttrDeltaError
from .evaluation import (
    EvalProtocol,
    EvalRow,
    MetricAdapters,
    aggregate_rows,
    directional_score,
    directional_score_vs_reference,
    evaluate_delta,
    plot_sweep,
    toy_adapters,
    write_rows_csv,
)
from .extraction import AttributeDelta, extract_clip_diff_delta
from .inversion import (
    PairInversionConfig,
    PairInversionDelta,
    interpolate_application,
    learn_pair_delta,
    mask_to_subject,
    subject_rows_to_attribute_delta,
)
from .prompts import (
    ContrastivePromptSet,
    PromptTuple,
    SubjectSpan,
    TokenizedPrompt,
    builtin_prompt_sets,
    expand_prompt_set,
    load_prompt_set,
    locate_subject,
    locate_subject_all,
)
from .training import (
    DeltaTrainConfig,
    TrainingAnchor,
    delta_loss_and_grad,
    make_anchor,
    sample_alphas,
    train_attribute_delta,
)

__version__ = "0.1.0"
