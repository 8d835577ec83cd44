"""Hierarchical multi-hop dense retrieval over paragraph/sentence indexes."""
from .doc import (Paragraph, QueryKind, QueryParagraph, Sentence, StructuredDocument,
                  build_conversational_query, build_multihop_query, linearize_paper, linearize_table)
from .embed import FileProvider, ToyProvider, toy_vector
from .errors import (EmbeddingKeyError, FormatError, HopmixError, LabelError, SchemaError, StateError,
                     TrainingError, TruncatedFileError, ValidationError)
from .heads import FusionWeights, classify_conversation, fused_sentence_scores
from .hops import MixParams, QueryState, RetrievalTrace, mix_paragraph, mix_sentence, run_hops, run_hops_batch
from .index import CombinedIndex, EntryKind, Regime, build_index, load_index, save_index, score_all
from .labels import StepLabels
from .metrics import MetricReport, evaluate
from .train import (MultiPositive, TrainConfig, TrainExample, backward, finite_difference_check, fit, forward,
                    load_checkpoint, save_checkpoint)

__version__ = "0.1.0"
