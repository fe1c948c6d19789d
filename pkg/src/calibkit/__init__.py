"""calibkit: post-hoc confidence calibration for top-k answer rankers."""

from .calibrators import (
    IsotonicModel,
    PlattModel,
    TemperatureModel,
    apply_isotonic,
    apply_platt,
    apply_temperature,
    fit_isotonic,
    fit_platt,
    fit_temperature,
)
from .data_model import (
    AttentionRecord,
    CandidateAnswer,
    FeatureVector,
    RankedQueryRecord,
    derive_label,
    dump_records,
    load_records,
)
from .errors import (
    CompatibilityError,
    DegenerateDataError,
    RecordError,
    ResortWarning,
    SeparationWarning,
)
from .features import (
    FeatureConfig,
    attention_flow,
    build_features,
    delta_scores,
    feature_names,
    flow_entropy,
    reference_attention,
    topk_variance,
    write_feature_csv,
)
from .gbm import (
    DecisionTree,
    GbmConfig,
    GbmEnsemble,
    TreeNode,
    feature_importance,
    fit_gbm,
    predict_gbm,
    predict_gbm_matrix,
    split_gain,
)
from .metrics import (
    BinnedReliability,
    EvalReport,
    RocCurve,
    ace,
    bin_reliability,
    brier,
    evaluate,
    mce,
    nll,
    roc_auc,
)
from .model_io import IdentityModel, load_model, save_model
from .synth import gen_flow_signal, gen_miscalibrated

__version__ = "0.1.0"
