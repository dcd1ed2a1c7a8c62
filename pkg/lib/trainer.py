# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Adversarial training loop, checkpoint resume and autoregressive inference.

Every iteration runs four updates in a fixed order: frame discriminator,
sequence discriminator, map predictor, generator. The batch drawn at
iteration k depends only on (seed, k), so a resumed run replays exactly the
batches an uninterrupted run would have seen.
"""

import csv
import os
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import torch

from baseModels import MetricReport, TrainConfig
from checkpoint import Checkpoint, build_checkpoint, load_checkpoint, restore_network, save_checkpoint
from clip_condenser import EmbeddingProvider, build_provider
from cpnet_model import TalkingFaceGenerator, frames_to_tensor, tensor_to_frames, windows_to_tensors
from data_pipeline import (FrameClip, LandmarkSet, PRIOR_FRAMES, WINDOW_RADIUS, WINDOW_SIZE, crop_clip, load_dataset,
                           make_toy_dataset, rasterize_track, split_clips, window_from_rasters)
from discriminators import PatchDiscriminator, score_frame, score_sequence
from logtool import LogTool
from losses import (PerceptualExtractor, build_extractor, lsgan_discriminator_loss, lsgan_generator_loss,
                    perceptual_loss, probability_consistency_loss, temporal_loss_d, temporal_loss_g,
                    total_generator_loss)
from metrics import evaluate_corpus
from probability_map import (MapPredictor, build_gaussian_kernel, dump_probability_maps, make_probability_map,
                             predictor_loss, probability_maps_for_track)
from training_metrics import TrainingMetrics
from utils import ShapeMismatch, WindowRangeError, check_finite

LOSS_COLUMNS = ['L_adv', 'L_r', 'L_t', 'L_p', 'l_dmp', 'L_D', 'L_Dt', 'total']
LOSS_LOG_NAME = "losses.csv"
METRICS_FILE_NAME = "metrics.prom"


def checkpoint_name(iteration: int) -> str:
    return f"ckpt_{iteration:07d}.cpnet"


def configure_determinism(config: TrainConfig):
    if config.deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
    torch.use_deterministic_algorithms(config.deterministic)


def set_requires_grad(networks, flag: bool):
    for network in networks:
        for parameter in network.parameters():
            parameter.requires_grad_(flag)


class ClipTensors(NamedTuple):
    name: str
    frames: torch.Tensor    # (T, 3, H, W)
    rasters: torch.Tensor   # (T, H, W)
    maps: torch.Tensor      # (T, 1, H, W)


class TrainingBatch(NamedTuple):
    landmarks: torch.Tensor          # (B, T, 7, H, W)
    targets: torch.Tensor            # (B, T, 3, H, W)
    maps: torch.Tensor               # (B, T, 1, H, W)
    prior: Optional[torch.Tensor]    # (B, T, 9, H, W), teacher-forced


class LossLog:
    """CSV loss log. Resuming keeps only the rows the checkpoint has already seen."""

    def __init__(self, path: str, resume_from: Optional[int] = None):
        self.path = path
        kept = []
        if resume_from is not None and os.path.exists(path):
            with open(path, newline="") as stream:
                kept = [row for row in csv.DictReader(stream) if int(row['iteration']) <= resume_from]
        with open(path, "w", newline="") as stream:
            writer = csv.DictWriter(stream, fieldnames=['iteration'] + LOSS_COLUMNS)
            writer.writeheader()
            writer.writerows(kept)

    def append(self, iteration: int, terms: Dict[str, float]):
        with open(self.path, "a", newline="") as stream:
            csv.writer(stream).writerow([iteration] + [repr(float(terms[column])) for column in LOSS_COLUMNS])

    def rows(self) -> List[Dict[str, str]]:
        with open(self.path, newline="") as stream:
            return list(csv.DictReader(stream))


class Trainer:

    def __init__(self, config: TrainConfig, logTool: Optional[LogTool] = None,
                 provider: Optional[EmbeddingProvider] = None, extractor: Optional[PerceptualExtractor] = None):
        self.config = config
        self.logTool = logTool or LogTool(config={})
        self.weights = config.effective_loss_weights()
        self.dtype = torch.float64 if config.precision == 'float64' else torch.float32
        self.device = torch.device(config.device)
        configure_determinism(config)
        torch.manual_seed(config.seed)

        generator_config = config.generator_config()
        if generator_config.condenser_enabled and provider is None:
            provider = build_provider(config.condenser, config.device)
        self.generator = TalkingFaceGenerator(generator_config, provider).to(self.device).to(self.dtype)
        self.disc_frame = PatchDiscriminator(config.disc_frame, generator_config.landmark_channels).to(self.device, self.dtype)
        self.disc_seq = PatchDiscriminator(config.disc_seq, generator_config.landmark_channels).to(self.device, self.dtype)
        self.predictor = MapPredictor(config.predictor, config.crop_size).to(self.device, self.dtype)
        self.extractor = (extractor or build_extractor(config.perceptual)).to(self.device, self.dtype)
        self.kernel = build_gaussian_kernel(config.predictor.kernel_size, config.predictor.sigma)

        def adam(parameters):
            return torch.optim.Adam(parameters, lr=config.learning_rate, betas=(config.adam_beta1, config.adam_beta2))

        self.optimizers = {
            'generator': adam(list(self.generator.parameters())),
            'disc_frame': adam(self.disc_frame.parameters()),
            'disc_seq': adam(self.disc_seq.parameters()),
            'predictor': adam(self.predictor.parameters()),
        }
        self.iteration = 0
        self.history: List[Dict[str, float]] = []

    @classmethod
    def from_checkpoint(cls, path: str, logTool: Optional[LogTool] = None, provider: Optional[EmbeddingProvider] = None,
                        extractor: Optional[PerceptualExtractor] = None) -> "Trainer":
        checkpoint = load_checkpoint(path)
        trainer = cls(checkpoint.config(), logTool=logTool, provider=provider, extractor=extractor)
        trainer.restore(checkpoint)
        return trainer

    def _log(self, level: str, message: str):
        self.logTool.log(service='Train', level=level, message=message)

    def networks(self) -> Dict[str, torch.nn.Module]:
        return {**self.generator.networks(), 'disc_frame': self.disc_frame, 'disc_seq': self.disc_seq,
                'predictor': self.predictor}

    def checkpoint(self) -> Checkpoint:
        return build_checkpoint(self.networks(), self.optimizers, self.config, self.iteration)

    def save(self, path: str) -> str:
        save_checkpoint(self.checkpoint(), path)
        self._log('info', f"Wrote checkpoint {path} at iteration {self.iteration}")
        return path

    def restore(self, checkpoint: Checkpoint):
        for namespace, network in self.networks().items():
            restore_network(checkpoint, namespace, network)
        for namespace, optimizer in self.optimizers.items():
            state = checkpoint.optimizer_state(namespace)
            if state is not None:
                optimizer.load_state_dict(state)
        self.iteration = checkpoint.iteration

    def prepare_clips(self, clips: Sequence[FrameClip]) -> List[ClipTensors]:
        """Rasterizes landmarks and builds analytic maps once per clip."""
        size = self.config.crop_size
        needed = self.config.disc_seq.sequence_length + 2 * WINDOW_RADIUS
        prepared = []
        for clip in clips:
            if clip.height != size or clip.width != size:
                raise ShapeMismatch(f"clip '{clip.name}' is {clip.height}x{clip.width}, training runs at {size}x{size}")
            if len(clip) < needed:
                raise WindowRangeError(f"clip '{clip.name}' has {len(clip)} frames, sequences need at least {needed}")
            maps = probability_maps_for_track(clip.landmarks, size, size, self.kernel)
            prepared.append(ClipTensors(
                name=clip.name,
                frames=frames_to_tensor(clip.frames, self.dtype).to(self.device),
                rasters=torch.from_numpy(rasterize_track(clip.landmarks, size, size)).to(self.device, self.dtype),
                maps=torch.from_numpy(maps).to(self.device, self.dtype).unsqueeze(1),
            ))
        if not prepared:
            raise WindowRangeError("no training clips")
        return prepared

    def sample_batch(self, prepared: Sequence[ClipTensors], iteration: int) -> TrainingBatch:
        rng = np.random.default_rng([self.config.seed, iteration])
        steps = self.config.disc_seq.sequence_length
        landmarks, targets, maps, priors = [], [], [], []
        for _ in range(self.config.batch_size):
            clip = prepared[int(rng.integers(len(prepared)))]
            start = int(rng.integers(WINDOW_RADIUS, len(clip.frames) - WINDOW_RADIUS - steps + 1))
            centers = range(start, start + steps)
            landmarks.append(torch.stack([clip.rasters[t - WINDOW_RADIUS:t + WINDOW_RADIUS + 1] for t in centers]))
            targets.append(clip.frames[start:start + steps])
            maps.append(clip.maps[start:start + steps])
            if self.generator.config.use_prior_frames:
                priors.append(torch.stack([clip.frames[t - PRIOR_FRAMES:t].flatten(0, 1) for t in centers]))
        return TrainingBatch(
            landmarks=torch.stack(landmarks),
            targets=torch.stack(targets),
            maps=torch.stack(maps),
            prior=torch.stack(priors) if priors else None,
        )

    def train_step(self, batch: TrainingBatch) -> Dict[str, float]:
        """One optimisation step of every network; returns the loss terms."""
        weights = self.weights
        batch_size, steps = batch.landmarks.shape[:2]
        landmarks = batch.landmarks.flatten(0, 1)
        real = batch.targets.flatten(0, 1)
        prior = batch.prior.flatten(0, 1) if batch.prior is not None else None
        zero = real.new_zeros(())

        self.generator.train()
        fake = self.generator(landmarks, prior)
        fake_sequence = fake.view(batch_size, steps, *fake.shape[1:])

        # frame discriminator
        set_requires_grad([self.disc_frame, self.disc_seq], True)
        self.optimizers['disc_frame'].zero_grad()
        loss_d = lsgan_discriminator_loss(score_frame(self.disc_frame, landmarks, real),
                                          score_frame(self.disc_frame, landmarks, fake.detach()))
        check_finite({'L_D': loss_d.item()}, self.iteration)
        loss_d.backward()
        self.optimizers['disc_frame'].step()

        # sequence discriminator
        loss_dt = zero
        if weights.lambda_t > 0:
            self.optimizers['disc_seq'].zero_grad()
            loss_dt = temporal_loss_d(score_sequence(self.disc_seq, batch.landmarks, batch.targets),
                                      score_sequence(self.disc_seq, batch.landmarks, fake_sequence.detach()))
            check_finite({'L_Dt': loss_dt.item()}, self.iteration)
            loss_dt.backward()
            self.optimizers['disc_seq'].step()

        # map predictor
        loss_dmp = zero
        if weights.lambda_p > 0:
            self.optimizers['predictor'].zero_grad()
            loss_dmp = predictor_loss(self.predictor(real), batch.maps.flatten(0, 1),
                                      self.predictor(fake.detach()), weights.lambda_dmp)
            check_finite({'l_dmp': loss_dmp.item()}, self.iteration)
            loss_dmp.backward()
            self.optimizers['predictor'].step()

        # generator
        set_requires_grad([self.disc_frame, self.disc_seq], False)
        self.optimizers['generator'].zero_grad()
        loss_adv = lsgan_generator_loss(score_frame(self.disc_frame, landmarks, fake))
        loss_r = perceptual_loss(self.extractor, fake, real) if weights.lambda_r > 0 else zero
        loss_t = temporal_loss_g(score_sequence(self.disc_seq, batch.landmarks, fake_sequence)) \
            if weights.lambda_t > 0 else zero
        loss_p = zero
        if weights.lambda_p > 0:
            target_map = batch.maps.flatten(0, 1) if self.config.analytic_map_target else None
            loss_p = probability_consistency_loss(self.predictor, fake, real, target_map=target_map)
        total = total_generator_loss(weights, loss_adv, loss_r, loss_t, loss_p)

        terms = {
            'L_adv': loss_adv.item(), 'L_r': loss_r.item(), 'L_t': loss_t.item(), 'L_p': loss_p.item(),
            'l_dmp': loss_dmp.item(), 'L_D': loss_d.item(), 'L_Dt': loss_dt.item(), 'total': total.item(),
        }
        check_finite(terms, self.iteration)
        total.backward()
        self.optimizers['generator'].step()
        set_requires_grad([self.disc_frame, self.disc_seq], True)

        self.iteration += 1
        self.history.append(terms)
        return terms

    def train(self, clips: Sequence[FrameClip], out_dir: str, resume: Optional[str] = None) -> Optional[str]:
        """
        Trains up to config.iterations, writing checkpoints, the loss log and
        the metrics textfile into out_dir. Returns the last checkpoint path.
        """
        os.makedirs(out_dir, exist_ok=True)
        prepared = self.prepare_clips(clips)
        last_checkpoint = None
        if resume is not None:
            self.restore(load_checkpoint(resume))
            last_checkpoint = resume
            self._log('info', f"Resumed from {resume} at iteration {self.iteration}")
        lossLog = LossLog(os.path.join(out_dir, LOSS_LOG_NAME), resume_from=self.iteration if resume else None)
        trainingMetrics = TrainingMetrics(run=os.path.basename(os.path.normpath(out_dir)))
        metricsPath = os.path.join(out_dir, METRICS_FILE_NAME)
        total = self.config.iterations
        self._log('info', f"Training {len(prepared)} clips for {total - self.iteration} iterations")

        try:
            while self.iteration < total:
                terms = self.train_step(self.sample_batch(prepared, self.iteration))
                trainingMetrics.recordStep(self.iteration, terms)
                if self.iteration % self.config.log_interval == 0 or self.iteration == total:
                    lossLog.append(self.iteration, terms)
                    self._log('debug', f"[{self.iteration}/{total}] " + " ".join(f"{k}={v:.5f}" for k, v in terms.items()))
                if self.iteration % self.config.checkpoint_interval == 0 or self.iteration == total:
                    last_checkpoint = self.save(os.path.join(out_dir, checkpoint_name(self.iteration)))
                    trainingMetrics.recordCheckpoint()
                    trainingMetrics.write(metricsPath)
        except Exception as e:
            trainingMetrics.recordFailure(type(e).__name__)
            trainingMetrics.write(metricsPath)
            self._log('error', f"Training stopped at iteration {self.iteration}: {e}")
            raise
        return last_checkpoint

    def generate_video(self, track: Sequence[LandmarkSet], bootstrap: Optional[np.ndarray] = None,
                       name: str = 'generated', frame_rate: Optional[float] = None) -> FrameClip:
        """
        Autoregressive generation, one frame per landmark frame that owns a full
        window (len(track) - 6 frames). With prior-frame conditioning the
        first three priors come from bootstrap, later ones are generated frames.
        """
        if len(track) < WINDOW_SIZE:
            raise WindowRangeError(f"a landmark track needs at least {WINDOW_SIZE} frames, got {len(track)}")
        size = self.config.crop_size
        use_prior = self.generator.config.use_prior_frames
        history: List[np.ndarray] = []
        if use_prior:
            if bootstrap is None or len(bootstrap) < PRIOR_FRAMES:
                raise ShapeMismatch(f"prior-frame conditioning needs {PRIOR_FRAMES} bootstrap frames")
            history = [np.asarray(frame, dtype=np.float32) for frame in bootstrap[:PRIOR_FRAMES]]
        rasters = rasterize_track(track, size, size)
        frames = []
        for t in range(WINDOW_RADIUS, len(track) - WINDOW_RADIUS):
            prior = np.stack(history[-PRIOR_FRAMES:]) if use_prior else None
            frame = self.generator.generate(window_from_rasters(rasters, t, prior_rgb=prior))
            frames.append(frame)
            history.append(frame)
        kwargs = {'frame_rate': frame_rate} if frame_rate is not None else {}
        return FrameClip(frames=np.stack(frames), landmarks=list(track[WINDOW_RADIUS:len(track) - WINDOW_RADIUS]),
                         name=name, source='generated', **kwargs)

    def generate_clip(self, clip: FrameClip) -> np.ndarray:
        return self.generate_video(clip.landmarks, clip.frames[:PRIOR_FRAMES], name=clip.name,
                                   frame_rate=clip.frame_rate).frames

    def evaluate(self, clips: Sequence[FrameClip]) -> MetricReport:
        return evaluate_corpus(self.generate_clip, clips, logTool=self.logTool)

    def dump_maps(self, clip: FrameClip, out_dir: str) -> int:
        size = self.config.crop_size
        targets = [make_probability_map(lms, size, size, self.kernel) for lms in clip.landmarks]
        return dump_probability_maps(out_dir, clip.frames, targets, predictor=self.predictor)


def load_training_data(config: TrainConfig, logTool: Optional[LogTool] = None):
    """(train, test) clips at the training crop size, from data.dir or the procedural toy set."""
    if config.data.dir:
        clips = load_dataset(config.data.dir, crop_size=config.crop_size)
        origin = config.data.dir
    else:
        toy = config.data.toy
        clips = make_toy_dataset(toy.seed, toy.clips, toy.frames, toy.resolution)
        clips = [clip if toy.resolution == config.crop_size else crop_clip(clip, config.crop_size) for clip in clips]
        origin = f"toy set (seed {toy.seed})"
    if not clips:
        raise WindowRangeError(f"no clips found in {origin}")
    if logTool:
        logTool.log(service='Train', level='info', message=f"Loaded {len(clips)} clips from {origin}")
    return split_clips(clips, config.data.train_fraction, config.seed)


def evaluate_checkpoint(path: str, clips: Sequence[FrameClip], logTool: Optional[LogTool] = None,
                        provider: Optional[EmbeddingProvider] = None) -> MetricReport:
    return Trainer.from_checkpoint(path, logTool=logTool, provider=provider).evaluate(clips)
