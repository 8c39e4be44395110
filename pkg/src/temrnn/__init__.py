"""Distance-gated convolutional LSTMs for irregularly sampled image sequences."""
from .cells import (SequenceSample, StepState, TemParams, bptt_backward, dlstm_step, lstm_step, positive,
                    tem_eval, tlstm_step, unroll)
from .metrics import MetricsReport, aggregate_folds, auc, confusion_metrics, roc_points
from .models import (ModelConfig, SequenceClassifier, fit_input_scaling, forward_feature_model, forward_image_model,
                     forward_mccnn)
from .synth import Dataset, GeneratorSpec, generate_dataset, generate_samples, read_dataset, write_dataset
from .train import TrainConfig, cross_entropy, kfold, load_checkpoint, lr_at, predict_proba, save_checkpoint, train

__version__ = "0.1.0"
