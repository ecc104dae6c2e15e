"""Voice activity detection for transient noisy environments.

Two encoder-decoder networks, one per hypothesis (speech absence/presence),
are trained with their bottlenecks pinned to diffusion-map coordinates of
noise-weighted cepstral features. Frames are classified by a linear SVM on
the l1 mapping/reconstruction errors against both networks, either frame by
frame (real-time) or in batch with out-of-sample diffusion targets.
"""

from .config import PipelineConfig, validate_config, serialize_config, load_config
from .scene import (AudioSignal, FrameSequence, SceneSpec, SceneResult,
                    load_audio, save_audio, frame_signal, label_frames,
                    mix_scene, synthesize_speech)
from .features import (MfccConfig, Standardizer, compute_mfcc,
                       estimate_noise_psd, append_deltas, concat_context,
                       fit_standardizer, apply_standardizer,
                       extract_context_features)
from .diffusion import (AffinityGraph, MarkovMatrix, DiffusionEmbedding,
                        build_knn_graph, normalize_markov, eigendecompose,
                        embed, softmax_coords, fit_diffusion_map,
                        nystrom_extend, extend_many)
from .network import (EncoderDecoder, LayerParams, TrainConfig, TrainReport,
                      pslt, forward, loss_and_gradients, pretrain_layerwise,
                      train_encoder_decoder)
from .errormap import (ErrorMap, SvmModel, SvmTrainConfig, REALTIME, BATCH,
                       encoder_error, decoder_error, build_error_map,
                       train_svm, classify, score)
from .evaluation import (Metrics, RocCurve, ExperimentGrid, compute_metrics,
                         roc, run_grid)
from .pipeline import (SplitSpec, Splits, Dataset, ModelBundle,
                       split_dataset, prepare_dataset, train_pipeline,
                       RealtimeDetector, infer_realtime,
                       infer_realtime_signal, infer_batch)
from .bundle import save_bundle, load_bundle
from . import errors

__version__ = "0.1.0"
