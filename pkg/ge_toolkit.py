#!/usr/bin/env python3
"""
GE toolkit command line.

Pipeline:
    gen-data -> train-gan -> train-ae -> solve / baseline-lasso / eval

Every command stages its outputs in a temporary directory next to --out and
moves them into place only when the command succeeds. The effective config
is echoed to <out>/run.json.
"""

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from typing import Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from ml.autoencoder import fit_ge1_encoder
from ml.began import BeganConfig, extract_encoder, train_began
from ml.evaluation import (EvalConfig, Models, compare_methods, error_decomposition, evaluate_tasks,
                           image_mse, measurement_rate, sweep_measurements, task_summary)
from ml.exceptions import ConfigError, GEError
from ml.lasso_baseline import LassoConfig, build_dct_dictionary, lasso_reconstruct
from ml.nn import Network, discriminator_spec, forward, generator_spec
from ml.solver import SolveConfig, gaussian_sensing_matrix, sense, solve_ga, solve_ge
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.config import config_hash, load_config, merge_overrides, setup_logging, write_run_record
from utils.image_data import (ImageSet, gen_blobs_dataset, load_image_dir, load_image_set, load_mask_png,
                              load_png, save_image_set, save_png)
from utils.imaging_ops import (TASKS, adjustment_for, bicubic_upsample, degradation_for, degrade,
                               precondition, rect_mask)

logger = logging.getLogger("ge_toolkit")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

@contextlib.contextmanager
def staged_output(outdir: str):
    """Yield a scratch directory; on success its contents replace those in ``outdir``."""
    parent = os.path.dirname(os.path.abspath(outdir))
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=f".{os.path.basename(os.path.abspath(outdir))}.partial-", dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if not os.path.isdir(outdir):
        os.replace(tmp, outdir)
        return
    for name in sorted(os.listdir(tmp)):
        target = os.path.join(outdir, name)
        if os.path.isdir(target) and not os.path.islink(target):
            shutil.rmtree(target)
        os.replace(os.path.join(tmp, name), target)
    os.rmdir(tmp)


def _write_json(path: str, payload: Dict):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def _sensing_flag(value: str) -> str:
    if value == "encoder":
        return value
    kind, _, m = value.partition(":")
    if kind != "gaussian" or not m.isdigit() or int(m) < 1:
        raise argparse.ArgumentTypeError("expected 'encoder' or 'gaussian:<m>'")
    return value


def _split_indices(images: ImageSet, seed: int, tag: str) -> List[int]:
    split = images.metadata.get("split") or images.split_indices(seed)
    indices = split.get(tag) or []
    if not indices:
        raise ConfigError(f"dataset has an empty '{tag}' split; regenerate it with more images or other fractions")
    return list(indices)


def _train_images(images: ImageSet, seed: int) -> ImageSet:
    return images.subset(_split_indices(images, seed, "train"), "train")


def _test_images(images: ImageSet, seed: int, n_test: int) -> ImageSet:
    return images.subset(_split_indices(images, seed, "test")[:n_test], "test")


def _load_net(path: Optional[str], what: str) -> Network:
    if not path:
        raise ConfigError(f"no {what} checkpoint given")
    return load_checkpoint(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, config: Dict, out: str) -> Dict:
    data = merge_overrides(config, "data", {"n": args.n, "size": args.size, "max_blobs": args.max_blobs})["data"]
    seed = config["runtime"]["seed"]
    if args.from_dir:
        images = load_image_dir(args.from_dir, data["size"], jobs=config["runtime"]["jobs"])
    else:
        images = gen_blobs_dataset(int(data["n"]), int(data["size"]), int(data["max_blobs"]), seed)
    split = images.split_indices(seed, tuple(data["split"]))
    save_image_set(images, out, {"split": split, "split_fractions": list(data["split"]), "split_seed": seed})
    print(f"💾 {len(images)} images written to {args.out}/images")
    return {"n_images": len(images), "image_shape": list(images.image_shape)}


def cmd_train_gan(args, config: Dict, out: str) -> Dict:
    section = merge_overrides(config, "began", {
        "latent_dim": args.latent_dim, "steps": args.steps, "gamma": args.gamma,
        "lambda_k": args.lambda_k, "batch_size": args.batch_size, "learning_rate": args.lr,
    })["began"]
    seed = config["runtime"]["seed"]
    began = BeganConfig.from_dict({**section, "seed": seed, "log_every": config["runtime"]["log_every"]})

    images = _train_images(load_image_set(args.data, jobs=config["runtime"]["jobs"]), seed)
    shape = images.image_shape
    G_spec = generator_spec(began.latent_dim, int(section["g_conv_layers"]), int(section["g_filters"]), shape)
    D_spec = discriminator_spec(shape, int(section["d_depth"]), int(section["d_filters"]),
                                int(section["d_bottleneck"]), int(section["d_decoder_conv_layers"]),
                                int(section["d_decoder_filters"]))

    G, D, history = train_began(images, G_spec, D_spec, began, sample_dir=os.path.join(out, "samples"))
    save_checkpoint(G, os.path.join(out, "generator.gec"), config=section, seed=seed)
    save_checkpoint(D, os.path.join(out, "discriminator.gec"), config=section, seed=seed)
    history.to_csv(os.path.join(out, "history.csv"), index=False)

    if len(history):
        print(f"📊 final L_real={history['L_real'].iloc[-1]:.4f} M={history['M'].iloc[-1]:.4f} "
              f"k_t={history['k_t'].iloc[-1]:.5f}")
    print(f"💾 generator.gec / discriminator.gec written to {args.out}")
    return {"steps": began.steps, "image_shape": list(shape)}


def cmd_train_ae(args, config: Dict, out: str) -> Dict:
    section = merge_overrides(config, "autoenc", {
        "variant": args.variant, "m": args.m, "d": args.d, "f": args.f,
        "fake_ratio": args.fake_ratio, "steps": args.steps,
    })["autoenc"]
    seed = config["runtime"]["seed"]

    if section["variant"] == "ge0":
        disc = args.discriminator or (os.path.join(os.path.dirname(args.generator), "discriminator.gec")
                                      if args.generator else None)
        EN = extract_encoder(_load_net(disc, "discriminator"))
        save_checkpoint(EN, os.path.join(out, "encoder.gec"), config={"variant": "ge0", "source": disc}, seed=seed)
        print(f"💾 GE0 encoder (m={EN.spec.output_shape[0]}) extracted from {disc}")
        return {"variant": "ge0", "m": EN.spec.output_shape[0]}

    if not args.data:
        raise ConfigError("train-ae --variant ge1 needs --data")
    images = load_image_set(args.data, jobs=config["runtime"]["jobs"])
    G = load_checkpoint(args.generator) if args.generator else None
    EN, DE, history, mix_meta = fit_ge1_encoder(_train_images(images, seed), G, int(section["m"]), section, seed)
    save_checkpoint(EN, os.path.join(out, "encoder.gec"), config=section, seed=seed)
    save_checkpoint(DE, os.path.join(out, "decoder.gec"), config=section, seed=seed)
    history.to_csv(os.path.join(out, "history.csv"), index=False)

    held_out = _test_images(images, seed, len(images))
    recon = forward(DE, forward(EN, held_out.batch(range(len(held_out))))).data
    ae_mse = float(np.mean((recon - held_out.images) ** 2))
    const_mse = float(np.mean((held_out.images - held_out.images.mean(axis=0)) ** 2))
    print(f"📊 held-out reconstruction mse={ae_mse:.5f} (constant predictor {const_mse:.5f})")
    print(f"💾 encoder.gec / decoder.gec written to {args.out}")
    return {"variant": "ge1", "m": int(section["m"]), "heldout_mse": ae_mse,
            "constant_predictor_mse": const_mse, "training_mix": mix_meta}


def _task_mask(args, config: Dict, image_shape):
    if args.mask_png:
        return load_mask_png(args.mask_png, image_shape)
    return rect_mask(image_shape, args.mask_rect or config["eval"]["mask_rect"])


def cmd_solve(args, config: Dict, out: str) -> Dict:
    solver = merge_overrides(config, "solver", {
        "lambda": args.lam, "iterations": args.iters, "restarts": args.restarts, "learning_rate": args.lr,
    })["solver"]
    runtime = config["runtime"]
    solve_config = SolveConfig.from_dict({**solver, "seed": runtime["seed"], "jobs": runtime["jobs"]})
    ev = config["eval"]
    sigma = args.sigma if args.sigma is not None else ev["sigma"]
    blur_sigma = args.blur_sigma if args.blur_sigma is not None else ev["blur_sigma"]
    blur_size = args.blur_size if args.blur_size is not None else ev["blur_size"]
    factor = args.factor if args.factor is not None else ev["factor"]

    G = _load_net(args.generator, "generator")
    shape = tuple(G.spec.output_shape)
    x_in = load_png(args.input, channels=shape[0])
    mask = _task_mask(args, config, shape) if args.task == "inpaint" else None
    spec = degradation_for(args.task, sigma, blur_sigma, blur_size, factor, mask=mask, seed=runtime["seed"])

    if args.no_degrade:
        x_true, x_dagger = None, x_in
        aligned = bicubic_upsample(x_in, factor) if args.task == "superres" and x_in.shape != shape else x_in
    else:
        x_true = x_in
        x_dagger = degrade(x_in, spec)
        aligned = precondition(x_dagger, spec)
    if aligned.shape != shape:
        raise ConfigError(f"input image {aligned.shape} does not match generator output {shape}")

    S = adjustment_for(args.task, mask)
    record = {"task": args.task, "degradation": spec.describe() if spec else None,
              "no_degrade": bool(args.no_degrade), "adjustment": S.describe(), "solver": solve_config.to_dict()}
    if args.sensing == "encoder":
        EN = _load_net(args.encoder, "encoder")
        if tuple(S.output_shape(shape)) != tuple(EN.spec.input_shape):
            raise ConfigError(f"encoder expects {tuple(EN.spec.input_shape)}, generator produces {shape}")
        m = forward(EN, aligned)
        result = solve_ge(m, EN, G, S, solve_config)
        record["measurements"] = int(m.size)
    else:
        n_meas = int(args.sensing.split(":")[1])
        A = gaussian_sensing_matrix(n_meas, int(np.prod(shape)), runtime["seed"])
        result = solve_ga(sense(A, aligned), A, G, solve_config)
        record["measurements"] = n_meas
    record["sensing"] = args.sensing
    record["rho"] = measurement_rate(record["measurements"], shape)
    record["result"] = result.to_record()
    if x_true is not None:
        record["mse_restored"] = image_mse(result.x_hat, x_true)
        record["mse_degraded"] = image_mse(aligned, x_true)

    save_png(result.x_hat, os.path.join(out, "x_hat.png"))
    save_png(x_dagger, os.path.join(out, "x_dagger.png"))
    _write_json(os.path.join(out, "solve.json"), record)
    print(f"✅ {args.task}: objective {result.objective:.6g} (restart {result.winning_restart})")
    if x_true is not None:
        print(f"📊 mse restored={record['mse_restored']:.5f} degraded={record['mse_degraded']:.5f}")
    return {"task": args.task, "wall_time_solver_s": result.wall_time}


def cmd_baseline_lasso(args, config: Dict, out: str) -> Dict:
    section = merge_overrides(config, "lasso", {
        "alpha": args.alpha, "overcomplete": args.overcomplete, "iterations": args.iters,
        "fista": True if args.fista else None,
    })["lasso"]
    seed = config["runtime"]["seed"]
    x = load_png(args.input)
    C, H, W = x.shape
    dictionary = build_dct_dictionary(H, W, int(section["overcomplete"]), C)
    x_hat, _ = lasso_reconstruct(x, args.m, dictionary, LassoConfig.from_dict(section), seed)

    record = {"method": "lasso", "measurements": args.m, "rho": measurement_rate(args.m, x.shape),
              "alpha": section["alpha"], "overcomplete": section["overcomplete"], "atoms": dictionary.p,
              "mse": image_mse(x_hat, x)}
    save_png(x_hat, os.path.join(out, "x_hat.png"))
    _write_json(os.path.join(out, "solve.json"), record)
    print(f"📊 lasso m={args.m}: mse={record['mse']:.5f}")
    return {"mse": record["mse"]}


def _eval_models(config: Dict, methods, need_generator: bool = True) -> Models:
    paths = config["eval"]["checkpoints"]
    G = load_checkpoint(paths["generator"]) if need_generator else None
    encoders = {}
    for method in methods:
        if method in ("ge0", "ge1"):
            encoders[method] = load_checkpoint(paths[f"{method}_encoder"])
    return Models(G, encoders)


def cmd_eval(args, config: Dict, out: str) -> Dict:
    if args.data:
        config["eval"]["data"] = args.data
    ev = EvalConfig.from_config(config)
    images = load_image_set(config["eval"]["data"], jobs=ev.jobs)
    test = _test_images(images, ev.seed, ev.n_test)

    if args.action == "compare":
        models = _eval_models(config, ev.methods, need_generator=any(m != "lasso" for m in ev.methods))
        report = compare_methods(test, ev.methods, ev.budgets, models, ev, outdir=out)
        report.save(out)
        print(report.summary().to_string(index=False))
        return {"timings_ms": report.timings()}

    variant = args.variant
    if args.action == "decompose":
        models = _eval_models(config, [variant])
        result = error_decomposition(models.generator, models.encoders[variant], ev.solve, test, ev.n_fake,
                                     ev.seed, jobs=ev.jobs)
        result.report.save(out)
        print(f"📊 fake mse={result.fake_mse:.6f} real mse={result.real_mse:.6f} ratio={result.ratio:.4f}")
        return {"timings_ms": result.report.timings()}

    if args.action == "sweep":
        models = _eval_models(config, [])
        train = _train_images(images, ev.seed)
        # cached encoders are only valid for the same autoenc settings, seed and generator
        key = f"{config_hash({**config['autoenc'], 'seed': ev.seed})[:12]}-{models.generator.parameter_hash()[:12]}"
        cache = os.path.join(config["eval"]["encoder_dir"], key)

        def encoder_for(m: int) -> Network:
            path = os.path.join(cache, f"m{m}", "encoder.gec")
            if os.path.exists(path):
                return load_checkpoint(path)
            EN, _, history, _ = fit_ge1_encoder(train, models.generator, m, config["autoenc"], ev.seed)
            save_checkpoint(EN, path, config=config["autoenc"], seed=ev.seed)
            history.to_csv(os.path.join(cache, f"m{m}", "history.csv"), index=False)
            return EN

        curve = sweep_measurements(ev.sweep_budgets, encoder_for, models.generator, test, ev, outdir=out)
        print(curve.to_string(index=False))
        return {"encoder_cache": cache}

    models = _eval_models(config, [variant])
    rows = evaluate_tasks(models.generator, models.encoders[variant], test, ev.tasks, ev, outdir=out)
    rows.to_csv(os.path.join(out, "tasks.csv"), index=False)
    summary = task_summary(rows)
    summary.to_csv(os.path.join(out, "task_summary.csv"), index=False)
    print(summary.to_string(index=False))
    return {}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-gan": cmd_train_gan,
    "train-ae": cmd_train_ae,
    "solve": cmd_solve,
    "baseline-lasso": cmd_baseline_lasso,
    "eval": cmd_eval,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (default: config/ge_config.json or $GE_CONFIG)")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--jobs", type=int, help="worker threads for per-image / per-restart work")
    common.add_argument("--out", required=True, help="output directory")

    parser = argparse.ArgumentParser(
        description="Generative Encoder toolkit: GAN + autoencoder priors for image restoration",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python ge_toolkit.py gen-data --n 1000 --size 16 --out data/blobs
  python ge_toolkit.py train-gan --data data/blobs --out runs/gan
  python ge_toolkit.py train-ae --data data/blobs --generator runs/gan/generator.gec --m 8 --out runs/ae_ge1
  python ge_toolkit.py solve --task denoise --input img.png --generator runs/gan/generator.gec \\
         --encoder runs/ae_ge1/encoder.gec --out runs/solve
  python ge_toolkit.py eval compare --out runs/eval
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a PNG dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--max-blobs", type=int)
    p.add_argument("--from-dir", help="normalize an existing PNG directory instead of drawing blobs")

    p = sub.add_parser("train-gan", parents=[common], help="train the BEGAN generator/discriminator")
    p.add_argument("--data", required=True)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-k", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("train-ae", parents=[common], help="train (ge1) or extract (ge0) an encoder")
    p.add_argument("--data")
    p.add_argument("--generator")
    p.add_argument("--discriminator")
    p.add_argument("--fake-ratio", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--variant", choices=["ge0", "ge1"])
    p.add_argument("--d", type=int)
    p.add_argument("--f", type=int)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("solve", parents=[common], help="restore one image with the GE (or GA) solver")
    p.add_argument("--task", choices=TASKS, required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--encoder")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--blur-sigma", type=float)
    p.add_argument("--blur-size", type=int)
    p.add_argument("--factor", type=int)
    p.add_argument("--mask-rect", type=int, nargs=4, metavar=("X", "Y", "W", "H"))
    p.add_argument("--mask-png")
    p.add_argument("--sensing", type=_sensing_flag, default="encoder")
    p.add_argument("--no-degrade", action="store_true", help="input is already degraded")

    p = sub.add_parser("baseline-lasso", parents=[common], help="DCT-dictionary lasso reconstruction")
    p.add_argument("--input", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--overcomplete", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--fista", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="evaluation reports")
    p.add_argument("action", choices=["compare", "decompose", "sweep", "tasks"])
    p.add_argument("--data", help="dataset directory (overrides eval.data)")
    p.add_argument("--variant", choices=["ge0", "ge1"], default="ge1")
    return parser


def main(argv=None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging("ge_toolkit")
    try:
        config = load_config(args.config)
        merge_overrides(config, "runtime", {"seed": args.seed, "jobs": args.jobs})
        command = args.command if args.command != "eval" else f"eval {args.action}"
        logger.info(f"Running {command} -> {args.out}")

        start = time.perf_counter()
        with staged_output(args.out) as tmp:
            extra = COMMANDS[args.command](args, config, tmp)
            write_run_record(tmp, command, config, time.perf_counter() - start, extra)
        print(f"✅ {command} finished in {time.perf_counter() - start:.1f}s")
        return 0
    except GEError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {e}")
        return e.exit_code


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
