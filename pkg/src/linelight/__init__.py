"""Low-light raw image enhancement with line-windowed linear attention."""

from .autodiff import Tape, Tensor, backward, finite_diff_grad, rng, tape
from .attention import (LineBufferState, line_attention, line_attention_linear,
                        line_attention_naive, line_attention_streaming,
                        streaming_attention_image)
from .enhancer import LowLightEnhancer
from .model import EnhancerNet, ModelConfig, NetworkOutputs, build, load
from .rawdata import (BayerFrame, NoiseModel, SamplePair, SyntheticDataset, amplify,
                      add_low_light_noise, bayer_pack, bayer_unpack, sample_pair,
                      simple_isp, synth_scene)
from .training import AdamW, TrainConfig, TrainResult, combined_loss, psnr, train
from .analysis import FlopsReport, bench_scaling, count_flops

__version__ = "0.1.0"

__all__ = [
    "AdamW", "BayerFrame", "EnhancerNet", "FlopsReport", "LineBufferState",
    "LowLightEnhancer", "ModelConfig", "NetworkOutputs", "NoiseModel",
    "SamplePair", "SyntheticDataset", "Tape", "Tensor", "TrainConfig",
    "TrainResult", "add_low_light_noise", "amplify", "backward", "bayer_pack",
    "bayer_unpack", "bench_scaling", "build", "combined_loss", "count_flops",
    "finite_diff_grad", "line_attention", "line_attention_linear",
    "line_attention_naive", "line_attention_streaming", "load", "psnr", "rng",
    "sample_pair", "simple_isp", "streaming_attention_image", "synth_scene",
    "tape", "train",
]
