"""dermalign: image-text co-learning for skin lesion data.

Synthesizes clinical notes from lesion metadata under four strategies, trains
a dual-encoder model into a shared embedding space with a five-term alignment
objective, and evaluates classification agreement, bidirectional cross-modal
retrieval, and embedding alignment. An HTTP service exposes interactive
retrieval over a prebuilt index.
"""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    SampleRecord,
    balanced_stream,
    class_histogram,
    load_manifest,
    save_manifest,
)
from .notegen import (
    AttributeVocabulary,
    ClinicalNote,
    MockNoteBackend,
    audit,
    build_prompt,
    render_template,
    synthesize,
)
from .preprocess import WordPieceTokenizer, augment, bbox_crop, otsu_crop
from .losses import LossWeights, composite, cosine_align, cross_entropy, l1_align, nt_xent
from .model import (
    MultiModalModel,
    load_checkpoint,
    register_image_encoder,
    register_text_encoder,
    save_checkpoint,
)
# the training entry points stay under dermalign.train to keep the submodule
# importable (a bare `train` re-export would shadow it)
from .train import TrainConfig
from .evaluate import EvalReport, cohen_kappa, mean_average_precision, run_evaluation
from .index_service import EmbeddingIndex, build_index, create_app, query_index
from .toydata import make_demo_corpus
