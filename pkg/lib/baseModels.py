# Copyright 2024 David Kneipp <david@davidkneipp.com>
# Copyright 2025 Lennart Rosam <hello@takuto.de>
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
from typing import Optional, List, Dict, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator


class LossWeights(BaseModel):
    model_config = ConfigDict(extra='forbid')

    lambda_adv: float = Field(1.0, ge=0)
    lambda_r: float = Field(5.0, ge=0)
    lambda_t: float = Field(1.0, ge=0)
    lambda_p: float = Field(0.1, ge=0)
    # weight of the hinge term in the map predictor objective
    lambda_dmp: float = Field(0.1, ge=0)


class ModuleFlags(BaseModel):
    model_config = ConfigDict(extra='forbid')

    dense_fusion: bool = True
    condenser: bool = True
    prob_map: bool = True


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    landmark_channels: int = Field(7, ge=1)
    use_prior_frames: bool = False
    base_width: int = Field(32, ge=8)
    encoder_levels: int = Field(4, ge=3)
    transition_blocks: int = Field(3, ge=0)
    output_channels: Literal[3] = 3
    # 'none' allows feature maps down to 1x1, where instance statistics are undefined
    normalization: Literal['instance', 'none'] = 'instance'
    condenser_enabled: bool = True
    dense_fusion_enabled: bool = True

    @property
    def input_channels(self) -> int:
        return self.landmark_channels + (9 if self.use_prior_frames else 0)


class DiscriminatorConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    kind: Literal['frame', 'sequence'] = 'frame'
    sequence_length: int = 5
    base_width: int = Field(32, ge=1)
    levels: int = Field(3, ge=1)

    @model_validator(mode='after')
    def check_sequence_length(self):
        if self.kind == 'sequence' and self.sequence_length < 2:
            raise ValueError("sequence discriminator needs sequence_length >= 2")
        return self


class PredictorConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    base_width: int = Field(16, ge=1)
    normalization: Literal['instance', 'none'] = 'instance'
    kernel_size: int = Field(25, ge=1)
    sigma: float = Field(5.0, gt=0)


class CondenserConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    provider: Literal['clip_vit', 'stub'] = 'stub'
    clip_variant: str = 'ViT-B/32'
    weights_path: Optional[str] = None
    stub_dim: int = Field(64, ge=1)
    stub_seed: int = 0


class PerceptualConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    backend: Literal['pretrained_vgg', 'fixed_random_stub', 'identity'] = 'fixed_random_stub'
    seed: int = 0


class ToyDataConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    seed: int = 0
    clips: int = Field(1, ge=1)
    frames: int = Field(30, ge=7)
    resolution: int = Field(64, ge=32)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    dir: Optional[str] = None
    toy: ToyDataConfig = ToyDataConfig()
    train_fraction: float = Field(0.9, gt=0, le=1)


class TrainConfig(BaseModel):
    """
    Everything a training run needs. YAML key paths mirror these fields;
    unrelated top-level sections (logging, evaluation) are ignored.
    """
    model_config = ConfigDict(extra='ignore')

    learning_rate: float = Field(1e-4, gt=0)
    adam_beta1: float = Field(0.5, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    iterations: int = Field(2000, ge=1)
    batch_size: int = Field(4, ge=1)
    crop_size: int = Field(64, ge=32)
    seed: int = 0
    deterministic: bool = True
    precision: Literal['float32', 'float64'] = 'float32'
    device: str = 'cpu'
    log_interval: int = Field(10, ge=1)
    checkpoint_interval: int = Field(1000, ge=1)
    analytic_map_target: bool = False
    loss_weights: LossWeights = LossWeights()
    modules: ModuleFlags = ModuleFlags()
    generator: GeneratorConfig = GeneratorConfig()
    disc_frame: DiscriminatorConfig = DiscriminatorConfig(kind='frame')
    disc_seq: DiscriminatorConfig = DiscriminatorConfig(kind='sequence')
    predictor: PredictorConfig = PredictorConfig()
    condenser: CondenserConfig = CondenserConfig()
    perceptual: PerceptualConfig = PerceptualConfig()
    data: DataConfig = DataConfig()

    @model_validator(mode='after')
    def check_kinds(self):
        if self.disc_frame.kind != 'frame' or self.disc_seq.kind != 'sequence':
            raise ValueError("disc_frame must be of kind 'frame' and disc_seq of kind 'sequence'")
        return self

    @model_validator(mode='after')
    def check_crop_size(self):
        scale = 2 ** self.generator.encoder_levels
        if self.crop_size % scale:
            raise ValueError(f"crop_size {self.crop_size} must be divisible by {scale} "
                             f"for a generator with {self.generator.encoder_levels} encoder levels")
        return self

    @model_validator(mode='after')
    def check_deterministic_device(self):
        # pooling and bilinear resize have no deterministic CUDA backward
        if self.deterministic and self.device.startswith('cuda'):
            raise ValueError("deterministic training is only supported on cpu, set deterministic: False to train on cuda")
        return self

    def generator_config(self) -> GeneratorConfig:
        return self.generator.model_copy(update={
            'condenser_enabled': self.modules.condenser,
            'dense_fusion_enabled': self.modules.dense_fusion,
        })

    def effective_loss_weights(self) -> LossWeights:
        if self.modules.prob_map:
            return self.loss_weights
        return self.loss_weights.model_copy(update={'lambda_p': 0.0})


class ClipMetrics(BaseModel):
    name: str
    frames: int
    ssim: float
    psnr: float


class MetricReport(BaseModel):
    clips: List[ClipMetrics] = []
    ssim: Optional[float] = None
    psnr: Optional[float] = None
    # declared, never computed: they need pretrained video / lip-sync networks
    fvd: Optional[float] = None
    lse_c: Optional[float] = None
    lse_d: Optional[float] = None

    def columns(self) -> Dict[str, Optional[float]]:
        return {'SSIM': self.ssim, 'PSNR': self.psnr, 'FVD': self.fvd, 'LSE-C': self.lse_c, 'LSE-D': self.lse_d}
