#!/usr/bin/env python3
# Copyright 2023-2025 David Kneipp <david@davidkneipp.com>
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
import argparse
import os
import sys
import traceback

sys.path.append(os.path.realpath(os.path.dirname(__file__) + "/../lib"))

from ablation import TABLES, run_ablation_suite
from banners import Banners
from cpnet_config import config, load_train_config, read_yaml
from data_pipeline import load_clip_dir, load_dataset, make_toy_dataset, read_landmarks_csv, write_clip_dir, write_dataset
from logtool import LogTool
from metrics import DECLARED_METRICS, parse_metric_names, render_report, write_report_csv
from trainer import Trainer, load_training_data
from utils import CPNetError, ConfigError

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


class CpnetService:

    def __init__(self, configPath: str = None):
        self.configPath = configPath
        self.rawConfig = read_yaml(configPath) if configPath else (config or {})
        self.logTool = LogTool(config=self.rawConfig)
        self.banners = Banners()

    def trainConfig(self):
        return load_train_config(self.configPath)

    def outputDir(self, override: str = None) -> str:
        return override or self.rawConfig.get('output', {}).get('dir', 'runs/cpnet')

    def makeToyData(self, seed: int, clips: int, frames: int, resolution: int, out: str) -> int:
        self.logTool.log(service='Data', level='info', message=self.banners.toyDataService())
        paths = write_dataset(make_toy_dataset(seed, clips, frames, resolution), out)
        self.logTool.log(service='Data', level='info', message=f"Wrote {len(paths)} toy clips to {out}")
        return EXIT_OK

    def train(self, resume: str = None, out: str = None) -> int:
        self.logTool.log(service='Train', level='info', message=self.banners.trainService())
        trainConfig = self.trainConfig()
        trainClips, testClips = load_training_data(trainConfig, self.logTool)
        trainer = Trainer(trainConfig, logTool=self.logTool)
        checkpoint = trainer.train(trainClips, self.outputDir(out), resume=resume)
        self.logTool.log(service='Train', level='info', message=f"Final checkpoint: {checkpoint}")
        report = trainer.evaluate(testClips)
        self.logTool.log(service='Train', level='info', message=f"Held-out clips:\n{render_report(report)}")
        return EXIT_OK

    def generate(self, ckpt: str, track: str, out: str, bootstrap: str = None) -> int:
        self.logTool.log(service='Generate', level='info', message=self.banners.generateService())
        trainer = Trainer.from_checkpoint(ckpt, logTool=self.logTool)
        bootstrapFrames = None
        if os.path.isdir(track):
            source = load_clip_dir(track)
            landmarks, bootstrapFrames, frameRate = source.landmarks, source.frames[:3], source.frame_rate
        else:
            landmarks, frameRate = read_landmarks_csv(track), None
        if bootstrap:
            bootstrapFrames = load_clip_dir(bootstrap).frames[:3]
        video = trainer.generate_video(landmarks, bootstrapFrames, name=os.path.basename(os.path.normpath(out)),
                                       frame_rate=frameRate)
        write_clip_dir(video, out)
        self.logTool.log(service='Generate', level='info', message=f"Wrote {len(video)} frames to {out}")
        return EXIT_OK

    def evaluate(self, ckpt: str, data: str, metrics: str, out: str = None) -> int:
        self.logTool.log(service='Evaluate', level='info', message=self.banners.evaluateService())
        names = parse_metric_names(metrics.split(','))
        for name in names:
            if name in DECLARED_METRICS:
                self.logTool.log(service='Evaluate', level='warning', message=f"{name} is not computed and reported as n/a")
        trainer = Trainer.from_checkpoint(ckpt, logTool=self.logTool)
        clips = load_dataset(data, crop_size=trainer.config.crop_size)
        if not clips:
            raise ConfigError(f"no clip_* directories found in {data}")
        report = trainer.evaluate(clips)
        if 'ssim' not in names:
            report.ssim = None
        if 'psnr' not in names:
            report.psnr = None
        if out:
            write_report_csv(report, out)
        print(render_report(report, logTool=self.logTool))
        return EXIT_OK

    def dumpMaps(self, ckpt: str, data: str, out: str) -> int:
        trainer = Trainer.from_checkpoint(ckpt, logTool=self.logTool)
        for clip in load_dataset(data, crop_size=trainer.config.crop_size):
            count = trainer.dump_maps(clip, os.path.join(out, clip.name))
            self.logTool.log(service='Evaluate', level='info', message=f"Dumped {count} map triplets for {clip.name}")
        return EXIT_OK

    def ablate(self, table: int, out: str = None) -> int:
        self.logTool.log(service='Ablation', level='info', message=self.banners.ablationService())
        trainConfig = self.trainConfig()
        trainClips, testClips = load_training_data(trainConfig, self.logTool)
        results = run_ablation_suite(trainConfig, trainClips, testClips, self.outputDir(out), tables=[table],
                                     logTool=self.logTool)
        failed = [row.label for row in results[table].rows if row.error]
        if failed:
            self.logTool.log(service='Ablation', level='warning', message=f"Failed rows: {', '.join(failed)}")
        return EXIT_OK


def buildParser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='cpnet', description='Landmark-driven talking-face generation')
    commands = parser.add_subparsers(dest='command', required=True)

    toy = commands.add_parser('make-toy-data', help='Write a procedural toy dataset')
    toy.add_argument('--seed', type=int, default=0)
    toy.add_argument('--clips', type=int, default=1)
    toy.add_argument('--frames', type=int, default=30)
    toy.add_argument('--res', type=int, default=64)
    toy.add_argument('--out', type=str, required=True)

    train = commands.add_parser('train', help='Train from a config file')
    train.add_argument('--config', type=str, required=False, help='Config file, defaults to CPNET_CONFIG')
    train.add_argument('--resume', type=str, required=False, help='Checkpoint to resume from')
    train.add_argument('--out', type=str, required=False, help='Run directory')

    generate = commands.add_parser('generate', help='Generate a video from a landmark track')
    generate.add_argument('--ckpt', type=str, required=True)
    generate.add_argument('--track', type=str, required=True, help='landmarks.csv or a clip directory')
    generate.add_argument('--out', type=str, required=True)
    generate.add_argument('--bootstrap', type=str, required=False, help='Clip directory holding the 3 bootstrap frames')

    evaluate = commands.add_parser('evaluate', help='Score a checkpoint on a dataset')
    evaluate.add_argument('--ckpt', type=str, required=True)
    evaluate.add_argument('--data', type=str, required=True)
    evaluate.add_argument('--metrics', type=str, default='ssim,psnr')
    evaluate.add_argument('--out', type=str, required=False, help='CSV report path')

    maps = commands.add_parser('dump-maps', help='Write ground-truth and predicted probability maps')
    maps.add_argument('--ckpt', type=str, required=True)
    maps.add_argument('--data', type=str, required=True)
    maps.add_argument('--out', type=str, required=True)

    ablate = commands.add_parser('ablate', help='Run one ablation table')
    ablate.add_argument('--config', type=str, required=False)
    ablate.add_argument('--table', type=int, choices=TABLES, required=True)
    ablate.add_argument('--out', type=str, required=False)
    return parser


def main(argv=None) -> int:
    args = buildParser().parse_args(argv)
    try:
        cpnetService = CpnetService(configPath=getattr(args, 'config', None))
        if args.command == 'make-toy-data':
            return cpnetService.makeToyData(args.seed, args.clips, args.frames, args.res, args.out)
        if args.command == 'train':
            return cpnetService.train(resume=args.resume, out=args.out)
        if args.command == 'generate':
            return cpnetService.generate(args.ckpt, args.track, args.out, bootstrap=args.bootstrap)
        if args.command == 'evaluate':
            return cpnetService.evaluate(args.ckpt, args.data, args.metrics, out=args.out)
        if args.command == 'dump-maps':
            return cpnetService.dumpMaps(args.ckpt, args.data, args.out)
        return cpnetService.ablate(args.table, out=args.out)
    except ConfigError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (CPNetError, RuntimeError, OSError, ValueError):
        print(traceback.format_exc(), file=sys.stderr)
        return EXIT_RUNTIME_ERROR
    except Exception:
        print(f"ERROR: unexpected failure in {args.command}\n{traceback.format_exc()}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == '__main__':
    sys.exit(main())
