"""Command-line surface: dataset build, training, generation, evaluation,
and schedule inspection.

Exit codes: 0 success, 1 usage, 2 configuration, 3 runtime/numerical.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfg_mod
from . import tensor_io
from .data import ToyCaption, all_captions, build_dataset, load_dataset, save_dataset
from .diffusion import build_schedule, subsample_schedule
from .errors import ConfigError, ContainerError, NumericalError
from .metrics import consistency_eval, mpjpe
from .rng import RngKey
from .sampler import GenerativeModel, ar_generate, build_fss_matrix, fss_generate
from .training import load_checkpoint, save_checkpoint, train_dit, train_vae
from .vae import VaeParams, reconstruct

VAE_HASH_SECTIONS = ("data", "vae")
DIT_HASH_SECTIONS = ("data", "vae", "dit", "diffusion")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="causalmotion", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="config JSON (bare names resolve in $CAUSALMOTION_CONFIG_DIR)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY.PATH=VALUE")
        sp.add_argument("--run-dir", default="runs/default", help="artifact directory")

    common(sub.add_parser("data", help="build the toy dataset"))
    common(sub.add_parser("train-vae", help="train the causal VAE"))
    common(sub.add_parser("train-dit", help="train the causal denoiser"))

    g = sub.add_parser("generate", help="sample motion from a trained model")
    common(g)
    g.add_argument("--mode", choices=("ar", "fss"), default="fss")
    g.add_argument("--K", type=int, default=None, help="inference steps (default from config)")
    g.add_argument("--L", type=int, default=None, help="uncertainty scale (default from config)")
    g.add_argument("--frames", type=int, default=64, help="motion frames to generate (multiple of 4)")
    g.add_argument("--caption", action="append", default=None, help="caption like circle-fast (repeatable)")
    g.add_argument("--switch-at", type=int, action="append", default=None,
                   help="motion frame where the next caption starts (multiple of 4; repeatable)")
    g.add_argument("--guidance", type=float, default=None, help="guidance scale (default from config)")
    g.add_argument("--seed", type=int, default=None, help="generation seed (default from config)")
    g.add_argument("--out", default=None, help="output prefix (default <run-dir>/gen)")

    e = sub.add_parser("eval", help="evaluate a trained model")
    common(e)

    s = sub.add_parser("schedule", help="print a frame-wise sampling schedule matrix as JSON")
    s.add_argument("--K", type=int, required=True)
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--frames", type=int, required=True, help="latent frame count")
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _dispatch(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, ContainerError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


def _dispatch(args) -> int:
    if args.command == "schedule":
        matrix = build_fss_matrix(args.K, args.L, args.frames)
        print(json.dumps(matrix.levels.tolist()))
        return 0

    cfg = cfg_mod.apply_overrides(cfg_mod.load_config(args.config), args.overrides)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg_mod.save_resolved(cfg, run_dir)

    if args.command == "data":
        return _cmd_data(cfg, run_dir)
    if args.command == "train-vae":
        return _cmd_train_vae(cfg, run_dir)
    if args.command == "train-dit":
        return _cmd_train_dit(cfg, run_dir)
    if args.command == "generate":
        return _cmd_generate(cfg, run_dir, args)
    if args.command == "eval":
        return _cmd_eval(cfg, run_dir)
    raise ConfigError(f"unknown command {args.command!r}")


def _cmd_data(cfg, run_dir: Path) -> int:
    dataset = build_dataset(cfg_mod.dataset_spec(cfg))
    save_dataset(dataset, run_dir)
    print(f"wrote {len(dataset)} samples to {run_dir}/dataset.cmdt")
    return 0


def _cmd_train_vae(cfg, run_dir: Path) -> int:
    dataset = load_dataset(run_dir)
    t0 = time.perf_counter()
    params, history = train_vae(
        dataset,
        cfg_mod.vae_config(cfg),
        cfg_mod.align_config(cfg),
        cfg_mod.train_settings(cfg, "vae"),
        seed=cfg["seed"],
    )
    meta = {"config_hash": cfg_mod.config_hash(cfg, VAE_HASH_SECTIONS)}
    save_checkpoint(run_dir / "vae.ckpt", params.tree, meta)
    mse = float(np.mean([
        np.mean((reconstruct(dataset.motion(i), params).frames - dataset.frames[i]) ** 2)
        for i in range(0, len(dataset), max(len(dataset) // 64, 1))
    ]))
    print(f"trained vae in {time.perf_counter() - t0:.1f}s; probe recon mse={mse:.5f}; "
          f"checkpoint {run_dir}/vae.ckpt")
    return 0


def _cmd_train_dit(cfg, run_dir: Path) -> int:
    dataset = load_dataset(run_dir)
    vae_params = _load_vae(cfg, run_dir)
    schedule = build_schedule(cfg["diffusion"]["steps_train"], cfg["diffusion"]["kind"])
    t0 = time.perf_counter()
    tree, latent_scale, history = train_dit(
        dataset,
        vae_params,
        cfg_mod.dit_config(cfg),
        schedule,
        cfg_mod.train_settings(cfg, "dit"),
        seed=cfg["seed"],
    )
    meta = {
        "config_hash": cfg_mod.config_hash(cfg, DIT_HASH_SECTIONS),
        "latent_scale": latent_scale,
    }
    save_checkpoint(run_dir / "dit.ckpt", tree, meta)
    print(f"trained denoiser in {time.perf_counter() - t0:.1f}s; latent scale {latent_scale:.4f}; "
          f"checkpoint {run_dir}/dit.ckpt")
    return 0


def _load_vae(cfg, run_dir: Path) -> VaeParams:
    path = run_dir / "vae.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run train-vae first")
    tree, meta = load_checkpoint(path)
    expect = cfg_mod.config_hash(cfg, VAE_HASH_SECTIONS)
    if int(meta["config_hash"]) != expect:
        raise ConfigError("vae checkpoint was trained under a different config (hash mismatch)")
    return VaeParams(tree=tree, config=cfg_mod.vae_config(cfg))


def load_generative_model(cfg, run_dir: Path) -> GenerativeModel:
    vae_params = _load_vae(cfg, run_dir)
    path = run_dir / "dit.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint {path}; run train-dit first")
    tree, meta = load_checkpoint(path)
    if int(meta["config_hash"]) != cfg_mod.config_hash(cfg, DIT_HASH_SECTIONS):
        raise ConfigError("denoiser checkpoint was trained under a different config (hash mismatch)")
    return GenerativeModel(
        vae=vae_params,
        dit_tree=tree,
        dit_cfg=cfg_mod.dit_config(cfg),
        latent_scale=float(meta["latent_scale"]),
    )


def _parse_caption(text: str) -> ToyCaption:
    try:
        shape, _, speed = text.partition("-")
        return ToyCaption(shape=shape, speed=speed)
    except ValueError as e:
        raise ConfigError(f"bad caption {text!r}; expected <shape>-<speed> like circle-fast") from e


def _cmd_generate(cfg, run_dir: Path, args) -> int:
    model = load_generative_model(cfg, run_dir)
    k_infer = args.K if args.K is not None else cfg["sampler"]["steps_infer"]
    L = args.L if args.L is not None else cfg["sampler"]["uncertainty_scale"]
    guidance = args.guidance if args.guidance is not None else cfg["sampler"]["guidance_scale"]
    seed = args.seed if args.seed is not None else cfg["seed"]
    if args.frames % 4 != 0 or args.frames < 4:
        raise ConfigError(f"--frames must be a positive multiple of 4, got {args.frames}")
    latent_frames = args.frames // 4

    captions = [_parse_caption(c) for c in (args.caption or ["circle-slow"])]
    switches = args.switch_at or []
    if len(switches) != len(captions) - 1:
        raise ConfigError(f"{len(captions)} captions need {len(captions) - 1} --switch-at points")
    cond: object
    if len(captions) == 1:
        cond = captions[0].condition()
    else:
        starts = [0]
        for s in switches:
            if s % 4 != 0 or not 0 < s < args.frames:
                raise ConfigError(f"--switch-at must be an interior multiple of 4, got {s}")
            starts.append(s // 4)
        if sorted(starts) != starts or len(set(starts)) != len(starts):
            raise ConfigError("--switch-at points must be strictly increasing")
        cond = [(cap.condition(), start) for cap, start in zip(captions, starts)]

    schedule = subsample_schedule(
        build_schedule(cfg["diffusion"]["steps_train"], cfg["diffusion"]["kind"]), k_infer
    )
    rng = RngKey(seed)
    fps = cfg["data"]["fps"]
    if args.mode == "ar":
        report = ar_generate(model, schedule, latent_frames, cond, rng,
                             guidance_scale=guidance, fps=fps)
    else:
        matrix = build_fss_matrix(k_infer, L, latent_frames)
        report = fss_generate(model, matrix, cond, rng, schedule=schedule,
                              guidance_scale=guidance, fps=fps)

    out = Path(args.out) if args.out else run_dir / "gen"
    out.parent.mkdir(parents=True, exist_ok=True)
    tensor_io.write_tensors(
        out.with_suffix(".cmdt"),
        {"motion/frames": report.motion.frames, "latents": report.latents},
    )
    sidecar = {
        "seed": seed,
        "mode": args.mode,
        "captions": [str(c) for c in captions],
        "switch_at": switches,
        "steps_infer": k_infer,
        "uncertainty_scale": L,
        "guidance_scale": guidance,
        "model_calls": report.model_calls,
        "per_frame_calls": report.per_frame_calls,
        "network_evals": report.network_evals,
        "wall_time": report.wall_time,
        "config": cfg,
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    print(f"wrote {out.with_suffix('.cmdt')} ({report.model_calls} model calls, "
          f"{report.wall_time:.2f}s)")
    return 0


def _cmd_eval(cfg, run_dir: Path) -> int:
    model = load_generative_model(cfg, run_dir)
    dataset = load_dataset(run_dir)
    schedule = subsample_schedule(
        build_schedule(cfg["diffusion"]["steps_train"], cfg["diffusion"]["kind"]),
        cfg["sampler"]["steps_infer"],
    )
    latent_frames = cfg["data"]["frames"] // 4

    stride = max(len(dataset) // 64, 1)
    recon = [
        {
            "index": i,
            "mse": float(np.mean((reconstruct(dataset.motion(i), model.vae).frames - dataset.frames[i]) ** 2)),
            "mpjpe": mpjpe(dataset.motion(i), reconstruct(dataset.motion(i), model.vae)),
        }
        for i in range(0, len(dataset), stride)
    ]

    records: list[dict] = []
    scores = {}
    for mode in cfg["eval"]["modes"]:
        scores[mode] = consistency_eval(
            model,
            schedule,
            all_captions(),
            cfg["eval"]["samples_per_caption"],
            mode=mode,
            uncertainty_scale=cfg["sampler"]["uncertainty_scale"],
            guidance_scale=cfg["sampler"]["guidance_scale"],
            latent_frames=latent_frames,
            fps=cfg["data"]["fps"],
            seed=cfg["eval"]["seed"],
            records=records,
        )

    report = {
        "seed": cfg["seed"],
        "config": cfg,
        "reconstruction_mse": float(np.mean([r["mse"] for r in recon])),
        "reconstruction_mpjpe": float(np.mean([r["mpjpe"] for r in recon])),
        "consistency": scores,
    }
    (run_dir / "eval_report.json").write_text(json.dumps(report, indent=2))
    with open(run_dir / "eval_samples.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["caption", "sample", "mode", "predicted", "hit", "model_calls", "wall_time"]
        )
        writer.writeheader()
        writer.writerows(records)
    print(json.dumps({"reconstruction_mse": report["reconstruction_mse"], "consistency": scores}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
