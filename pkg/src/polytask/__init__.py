"""Token-based multitask speech transducer with dynamic task activation."""

__version__ = "0.1.0"

from .tasks import AUX_TASKS, NUM_AUX_TASKS, TaskId, TaskSet
from .codec import (AnnotatedUtterance, CodecConfig, EntitySpan, TaskPredictions,
                    TokenVocab, build_vocab, encode_reference, parse_hypothesis,
                    strip_task_tokens)
from .activation import (ActivationBank, ActivationPosition, ActivationStrategy,
                         activation_vector, apply_activation, combination_index, new_bank)
from .model import ModelConfig, TransducerModel
from .rnnt import rnnt_loss, rnnt_loss_batch, rnnt_loss_bruteforce, rnnt_loss_from_log_probs
from .decode import Hypothesis, beam_decode, greedy_decode
from .gradcheck import GradCheckReport, grad_check
from .data import (Batch, CombinationPolicy, Corpus, GenConfig, corpus_hash,
                   gen_corpus, load_corpus, make_batch, save_corpus,
                   select_task_combination)
from .metrics import (MetricReport, Prf, align_tokens, evaluate_utterances,
                      itt_count, lid_accuracy, ner_f1, token_f1, wer)
from .checkpoint import load_checkpoint, save_checkpoint
from .train import NumericalError, RunManifest, TrainConfig, train_model
