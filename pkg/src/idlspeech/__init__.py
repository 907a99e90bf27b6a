"""Instance-discrimination pre-training for speech-based depression detection.

Submodules: ``dsp`` (log-mel front end), ``corpus`` (manifests, WAV, synthetic
speech, segmentation), ``augment``, ``nn`` (autodiff engine and DepAudioNet),
``loss``, ``sampling`` (RS/DS/PIS and k-means), ``train`` (pre-training,
fine-tuning, F1), ``checkpoint``, ``probe`` and ``cli``.
"""

__version__ = "0.1.0"

from .loss import idl_loss
from .train import EvalReport, TrainConfig, evaluate, finetune_ensemble, pretrain

__all__ = ["EvalReport", "TrainConfig", "__version__", "evaluate", "finetune_ensemble", "idl_loss", "pretrain"]
