"""Human-steerable attention-alignment workbench.

A small deterministic CNN exposes Grad-CAM attention; questionnaire verdicts
sort instances into a Reasonability Matrix; a joint prediction/attention
objective fine-tunes the model toward the quadrant-specific targets; a
synthetic spurious-correlation benchmark plus an oracle annotator make the
whole loop testable end to end, and an HTTP service collects the same
signals from humans.
"""

from .attention import (
    AttentionMap,
    BinaryMask,
    TargetAttentionGrid,
    binarize,
    decode_mask_rle,
    encode_mask_rle,
    grad_cam,
    mask_to_target_grid,
    normalize,
    upsample,
)
from .errors import (
    CapabilityError,
    ConfigurationError,
    DataError,
    GenerationError,
    GradiaError,
    InputError,
    TrainingError,
    UndefinedMetricError,
)
from .model import (
    ModelConfig,
    Parameters,
    forward,
    forward_batch,
    init_model,
    load_parameters,
    predict,
    save_parameters,
)
from .objective import (
    BalanceFactors,
    LossBreakdown,
    QuadrantBatch,
    attention_loss,
    gradia_objective,
    objective_gradient,
    prediction_loss,
)
from .reasonability import (
    MetricsReport,
    ReasonabilityMatrix,
    Verdict,
    build_matrix,
    classify_instance,
    iou,
    m1_accuracy,
    m2_ra_performance,
    m4_attention_accuracy,
    majority_vote,
)
from .synthetic import (
    OracleConfig,
    SceneSpec,
    SplitCounts,
    SyntheticInstance,
    generate_dataset,
    load_dataset,
    oracle_mask,
    oracle_verdict,
    save_dataset,
)
from .training import (
    ArmResult,
    Evaluation,
    FewShotArm,
    FewShotScenario,
    OracleAnnotator,
    RunReport,
    StoredHumanAnnotator,
    TrainConfig,
    accuracy,
    build_validation_matrix,
    evaluate,
    few_shot_study,
    finetune_gradia,
    roc_auc,
    run_condition,
    sensitivity_sweep,
    train_baseline,
    write_run_manifest,
)

__version__ = "0.1.0"
