"""Dense embeddings of laboratory test codes from lab-order event streams.

Lab events are grouped per (visit, order) into shuffled token sentences,
embedded with skip-gram, CBOW, or GloVe, and evaluated three ways: ordinality
preservation of graded abnormality tokens, nearest-neighbor and 2-D t-SNE
inspection, and a 90-day mortality benchmark against bag-of-words and
truncated-SVD baselines. A synthetic cohort generator makes the whole
pipeline runnable end to end without real data.
"""

from .corpus import (
    Abnormality,
    EmptyVocabulary,
    LabEvent,
    MalformedRecord,
    Sentence,
    TokenMode,
    UnknownAbnormality,
    Vocabulary,
    build_sentences,
    build_vocabulary,
    load_sentences,
    load_vocabulary,
    make_token,
    merge_sentences_by_visit,
    parse_events,
    save_sentences,
    save_vocabulary,
    token_stem,
    write_events_csv,
    write_events_jsonl,
)
from .embedstore import (
    DimensionMismatch,
    EmbeddingModel,
    FormatError,
    UnknownToken,
    ZeroVector,
    cosine_similarity,
    load_model,
    nearest_neighbors,
    save_model,
)
from .features import (
    Aggregation,
    FeatureMatrix,
    RankDeficiencyWarning,
    SvdReducer,
    bow_features,
    bow_matrix,
    embed_features,
    embed_matrix,
    truncated_svd,
)
from .glove import (
    CooccurrenceTable,
    GloveHyperparams,
    NonPositiveCount,
    build_cooccurrence,
    glove_entry_loss,
    glove_weight,
    load_cooccurrence,
    save_cooccurrence,
    train_glove,
)
from .ordeval import (
    EmptyTestSet,
    Family,
    OrdinalityReport,
    OrdinalityTest,
    TestResult,
    WrongMode,
    evaluate_ordinality,
    generate_ordinality_tests,
    write_ordinality_report,
)
from .predict import (
    EvalReport,
    FoldTooSmall,
    LogRegModel,
    NonConvergence,
    NoPositives,
    SearchResult,
    SearchSpace,
    SingleClassInput,
    average_precision,
    logreg_loss_grad,
    pr_curve_points,
    random_search_cv,
    roc_auc,
    roc_curve_points,
    stratified_folds,
    train_logreg,
)
from .synthgen import (
    CodeProfile,
    CohortRecord,
    EmptyInput,
    GeneratorConfig,
    InfeasibleConfig,
    PanelSpec,
    SurvivalCurve,
    SynthPatient,
    assign_prediction_dates,
    generate_cohort,
    generate_panels,
    kaplan_meier,
    survival_by_group,
)
from .util import derive_seed
from .viz import (
    DegenerateInput,
    PerplexityTooLarge,
    TsneConfig,
    calibrate_affinities,
    emit_plot,
    top_k_frequent,
    tsne,
)
from .w2v import (
    Algorithm,
    DegenerateVocab,
    EmptyCorpus,
    TrainingDiverged,
    W2vHyperparams,
    cbow_example_loss,
    extract_cbow_examples,
    extract_pairs,
    noise_distribution,
    sgns_pair_loss,
    train_cbow,
    train_sgns,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
