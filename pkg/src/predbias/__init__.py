"""Adaptive transfer of biased predicate annotations in relation datasets."""

from .audit import f_score, mean_recall_at_k, pr_score, predicate_histogram, recall_at_k
from .config import PipelineConfig, load_config
from .contrastive import (
    ContrastiveEncoder,
    LossBreakdown,
    TrainConfig,
    infonce_losses,
    irm_regularizer,
    loss_and_gradient,
    negative_mass,
    positive_mass,
)
from .corpus import (
    Dataset,
    EntityRef,
    PredicateVocab,
    PredictionRecord,
    Provenance,
    RelationInstance,
    identify_indistinguishable,
    identify_potential_positives,
    load_dataset,
    save_dataset,
    triplet_to_sentence,
)
from .embedding import (
    EmbeddingTable,
    HashingSentenceEncoder,
    arc_angle,
    cosine_similarity,
    featurize,
    load_embeddings,
    save_embeddings,
)
from .prototype import (
    FiltrationState,
    PrototypeSpace,
    PrototypeTracker,
    batch_class_average,
    flag_biased,
    multistage_filtration,
    similarity_matrix,
    update_prototype,
)
from .resample import image_repeat_factor, materialize, triplet_repeat_factor
from .transfer import (
    Move,
    MoveKind,
    TransferPlan,
    apply_plan,
    compute_scarcity,
    influence_factor,
    plan_indistinguishable,
    plan_na_promotions,
)

__version__ = "0.1.0"
