# cli.py

import argparse
import csv
import logging
import os
import sys
import threading

import numpy as np

from config import ConfigError, output_path, resolve_config
from constants import MAX_ITERS, SUPERVISED_BATCH_SIZE, SUPERVISED_ITERS, SUPERVISED_LR, TASKS
from data_eval import (
    EvalRecord, build_dataset, evaluate, load_image, make_phantom, save_image, write_eval_csv,
)
from file_formats import FormatError, read_raw, write_raw
from forward_models import (
    MeasurementSimConfig, UnsupportedOperatorError, full_mask, load_mask, make_dealiasing_mask,
    make_random_mask, make_sr_mask, make_task_mask, save_mask, simulate_measurement,
)
from fourier import from_planar, to_planar
from prior_net import NetConfig, load_checkpoint, save_checkpoint
from rendering import CAPTIONS, MONTAGE_ORDER, montage_panels, render_montage, run_viewer
from solvers import (
    METHODS, DivergenceError, FitConfig, reconstruct, ssl_fit, supervised_apply,
    supervised_train, task_preset, tv_reconstruct,
)

logger = logging.getLogger(__name__)

MASK_KINDS = ("sr", "dealias", "random", "full")
DEMO_FILES = ("gt.pgm", "corrupted.pgm", "tv.pgm", "ssl.pgm", "report.csv", "montage.png")


def parse_shape(text):
    """'64' or '64x32' -> (H, W)."""
    parts = text.lower().split('x')
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected N or HxW")
    if len(dims) == 1:
        dims = dims * 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}, expected N or HxW")
    return dims


# Commands

def cmd_mask(task, af, shape, out_path, center_fraction=None, seed=0):
    """Write a PBM mask and print its sampled fraction."""
    if task in ("sr", "dealias") and af != int(af):
        raise ValueError(f"{task} masks need an integer acceleration, got {af}")
    if task == "sr":
        mask = make_sr_mask(shape, int(af))
    elif task == "dealias":
        mask = make_dealiasing_mask(shape, int(af), center_fraction)
    elif task == "random":
        mask = make_random_mask(shape, af, center_fraction or 0.0, seed)
    elif task == "full":
        if af != 1:
            raise ValueError("a full mask has acceleration 1")
        mask = full_mask(shape)
    else:
        raise ValueError(f"unknown mask kind '{task}', expected one of {', '.join(MASK_KINDS)}")
    path = output_path(out_path)
    save_mask(mask, path)
    print(f"sampled fraction: {mask.sampled_fraction:.6g}")
    print(f"wrote {path}")
    return mask


def cmd_simulate(image_path, mask_path, noise_std, seed, out_path):
    """
    Simulate y = F(x) + η; writes the two raw planes and a magnitude preview PGM.

    :return: (measurement path, preview path)
    """
    image = load_image(image_path)
    mask = load_mask(mask_path)
    y = simulate_measurement(image, mask, MeasurementSimConfig(noise_std, seed))
    base = os.path.splitext(output_path(out_path))[0]
    measurement_path, preview_path = base + ".raw", base + ".pgm"
    write_raw(measurement_path, to_planar(y))
    save_image(preview_path, np.abs(y))
    print(f"wrote {measurement_path}")
    print(f"wrote {preview_path}")
    return measurement_path, preview_path


def load_measurement(path):
    planes = read_raw(path)
    if planes.ndim != 3 or planes.shape[0] != 2:
        raise FormatError(f"{path}: expected two raw planes (real, imag), got shape {planes.shape}")
    return from_planar(planes)


def cmd_reconstruct(method, measurement_path, mask_path, config_path=None, out_prefix="recon",
                    overrides=None, ground_truth_path=None):
    """
    Reconstruct one measurement; writes <prefix>.pgm, <prefix>.raw, <prefix>_loss.csv
    and <prefix>_summary.txt.
    """
    overrides = dict(overrides or {})
    overrides["method"] = method
    cfg = resolve_config(config_path, overrides)
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method '{cfg.method}', expected one of {', '.join(METHODS)}")
    echo = cfg.echo()
    print(echo)

    # Load the inputs
    y = load_measurement(measurement_path)
    mask = load_mask(mask_path)
    ground_truth = load_image(ground_truth_path) if ground_truth_path else None
    params = None
    if cfg.method == "supervised-apply":
        if not cfg.checkpoint:
            raise ConfigError("supervised-apply needs a checkpoint")
        params = load_checkpoint(cfg.checkpoint)

    x_hat, report = reconstruct(cfg.method, y, mask, task=cfg.task, weights=cfg.loss_weights(),
                                net_cfg=cfg.net_config(), fit_cfg=cfg.fit_config(),
                                tv_weight=cfg.tv_weight, tv_iters=cfg.tv_iters,
                                params=params, ground_truth=ground_truth)

    # Write the estimate and its report
    prefix = output_path(out_prefix)
    save_image(prefix + ".pgm", x_hat)
    save_image(prefix + ".raw", x_hat)
    report.write_csv(prefix + "_loss.csv")
    report.write_summary(prefix + "_summary.txt", echo)
    print(report.summary().rstrip())
    return x_hat, report


def cmd_eval(ref_path, test_paths, out_csv):
    """
    Append (path, psnr, ssim) rows for every test image against the reference.

    :return: (records, number of files that failed)
    """
    ref = load_image(ref_path)
    records = []
    failures = 0
    for path in test_paths:
        try:
            value_psnr, value_ssim = evaluate(ref, load_image(path))
        except (ValueError, OSError) as e:
            logger.error("Skipping %s: %s", path, e)
            failures += 1
            continue
        records.append(EvalRecord(task="", method="", psnr=value_psnr, ssim=value_ssim, path=path))
        print(f"{path}: psnr {value_psnr:.4f} dB, ssim {value_ssim:.4f}")
    write_eval_csv(records, output_path(out_csv), columns=("path", "psnr", "ssim"), append=True)
    return records, failures


def _run_concurrently(jobs):
    """Run name -> callable jobs on threads; re-raises the first failure."""
    results = {}
    lock = threading.Lock()

    def worker(name, job):
        try:
            outcome = job()
        except Exception as e:
            outcome = e
        with lock:
            results[name] = outcome

    # Start the worker threads and wait for all of them
    threads = [threading.Thread(target=worker, args=item) for item in jobs.items()]
    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()
    # Report failures in job order
    for name in jobs:
        if isinstance(results[name], Exception):
            raise results[name]
    return results


def cmd_demo(task, size, seed, out_dir, max_iters=MAX_ITERS, noise_std=0.0, progress=False):
    """
    Phantom -> mask -> measurement -> TV and SSL reconstructions -> report.csv and montage.png.

    :return: list of EvalRecords (corrupted, tv, ssl)
    """
    x = make_phantom(size, "ellipses", seed)
    mask = make_task_mask(task, (size, size))
    y = simulate_measurement(x, mask, MeasurementSimConfig(noise_std, seed))
    weights, mode = task_preset(task)
    net_cfg = NetConfig(input_mode=mode, seed=seed)
    fit_cfg = FitConfig(max_iters=max_iters, seed=seed, progress=progress)
    logger.info("Demo %s: %dx%d phantom, sampled fraction %.4f", task, size, size, mask.sampled_fraction)

    # TV and SSL run side by side
    results = _run_concurrently({
        "tv": lambda: tv_reconstruct(y, mask, ground_truth=x),
        "ssl": lambda: ssl_fit(y, mask, net_cfg, weights, fit_cfg, ground_truth=x),
    })
    images = {"gt": x, "corrupted": np.abs(y), "tv": results["tv"][0], "ssl": results["ssl"][0]}

    # Outputs go under out_dir
    out_dir = output_path(os.path.join(out_dir, ""))
    records = []
    for name in MONTAGE_ORDER:
        path = os.path.join(out_dir, f"{name}.pgm")
        save_image(path, images[name])
        if name != "gt":
            records.append(EvalRecord(task, name, *evaluate(x, images[name]), path=path))
    write_eval_csv(records, os.path.join(out_dir, "report.csv"))
    render_montage([images[name] for name in MONTAGE_ORDER], [CAPTIONS[name] for name in MONTAGE_ORDER],
                   os.path.join(out_dir, "montage.png"))
    for record in records:
        print(f"{record.method:>10}: psnr {record.psnr:.4f} dB, ssim {record.ssim:.4f}")
    print(f"wrote {out_dir}")
    return records


def cmd_train_supervised(task, n, size, seed, out_checkpoint, max_iters=SUPERVISED_ITERS, lr=SUPERVISED_LR,
                         batch_size=SUPERVISED_BATCH_SIZE, progress=False):
    """Simulate n training pairs for a task, train the supervised baseline and save it."""
    mask = make_task_mask(task, (size, size))
    pairs = build_dataset(n, size, mask, seed)
    fit_cfg = FitConfig(max_iters=max_iters, lr=lr, seed=seed, batch_size=batch_size, progress=progress)
    params, report = supervised_train(pairs, NetConfig(input_mode="stacked", seed=seed), fit_cfg)
    path = output_path(out_checkpoint)
    save_checkpoint(params, path)
    print(f"final training loss: {report.final_loss:.6g}")
    print(f"wrote {path}")
    return params, report


def cmd_table(size, seed, out_csv, with_supervised=False, n_train=50, max_iters=MAX_ITERS,
              supervised_iters=SUPERVISED_ITERS, supervised_lr=SUPERVISED_LR,
              batch_size=SUPERVISED_BATCH_SIZE):
    """
    Sweep the four undersampling tasks and write task, method, psnr, ssim rows.

    With with_supervised, a baseline is trained per task on n_train simulated pairs using
    minibatches of batch_size at supervised_lr for supervised_iters steps.
    """
    records = []
    # One test phantom for every task
    x = make_phantom(size, "ellipses", seed)
    for task in TASKS[:4]:
        mask = make_task_mask(task, (size, size))
        y = simulate_measurement(x, mask)
        weights, mode = task_preset(task)
        estimates = {"corrupted": np.abs(y)}
        estimates["tv"] = tv_reconstruct(y, mask)[0]
        estimates["ssl"] = ssl_fit(y, mask, NetConfig(input_mode=mode, seed=seed), weights,
                                   FitConfig(max_iters=max_iters, seed=seed))[0]
        if with_supervised:
            # training phantoms come from a different seed than the test phantom
            pairs = build_dataset(n_train, size, mask, seed + 1)
            sup_cfg = FitConfig(max_iters=supervised_iters, lr=supervised_lr, seed=seed, batch_size=batch_size)
            params, _ = supervised_train(pairs, NetConfig(input_mode="stacked", seed=seed), sup_cfg)
            estimates["supervised"] = supervised_apply(params, y)
        for method, estimate in estimates.items():
            record = EvalRecord(task, method, *evaluate(x, estimate))
            records.append(record)
            print(f"{task:>9} {method:>10}: psnr {record.psnr:.4f} dB, ssim {record.ssim:.4f}")
    write_eval_csv(records, output_path(out_csv))
    return records


def read_report_metrics(path):
    """method -> overlay lines from a demo report.csv."""
    metrics = {}
    if not os.path.exists(path):
        return metrics
    with open(path, newline='') as f:
        for row in csv.DictReader(f):
            metrics[row["method"]] = [f"PSNR {float(row['psnr']):.2f} dB", f"SSIM {float(row['ssim']):.4f}"]
    return metrics


def cmd_view(out_dir):
    panels = montage_panels(out_dir, load_image)
    if not panels:
        raise FormatError(f"{out_dir}: no demo images found")
    run_viewer(panels, read_report_metrics(os.path.join(out_dir, "report.csv")))


# Entry point

def build_parser():
    parser = argparse.ArgumentParser(prog="sslrecon", description="Self-supervised MRI reconstruction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    # One subparser per command
    p = sub.add_parser("mask", help="write a k-space sampling mask")
    p.add_argument("--task", required=True, choices=MASK_KINDS)
    p.add_argument("--af", type=float, required=True)
    p.add_argument("--shape", type=parse_shape, default=(64, 64))
    p.add_argument("--center-fraction", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="simulate an undersampled measurement")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="reconstruct a measurement")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--measurement", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--config")
    p.add_argument("--out", default="recon")
    p.add_argument("--ground-truth")
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--input-mode")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--tv-weight", type=float)
    p.add_argument("--tv-iters", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--progress", action="store_true", default=None)

    p = sub.add_parser("eval", help="PSNR/SSIM of images against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("tests", nargs="+")

    p = sub.add_parser("train-supervised", help="train the supervised baseline")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=SUPERVISED_ITERS)
    p.add_argument("--lr", type=float, default=SUPERVISED_LR)
    p.add_argument("--batch-size", type=int, default=SUPERVISED_BATCH_SIZE)
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("demo", help="end-to-end phantom demo")
    p.add_argument("--task", default="sr4", choices=TASKS)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=MAX_ITERS)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--progress", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("table", help="sweep all tasks and methods into one CSV")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--max-iters", type=int, default=MAX_ITERS)
    p.add_argument("--supervised", action="store_true")
    p.add_argument("--n-train", type=int, default=50)
    p.add_argument("--supervised-iters", type=int, default=SUPERVISED_ITERS)
    p.add_argument("--supervised-lr", type=float, default=SUPERVISED_LR)
    p.add_argument("--batch-size", type=int, default=SUPERVISED_BATCH_SIZE)
    p.add_argument("--out", required=True)

    p = sub.add_parser("view", help="browse a demo directory")
    p.add_argument("out_dir")
    return parser


class CommandProcessor:
    """
    Dispatch parsed command lines to the command functions.
    """

    def __init__(self):
        self.parser = build_parser()
        self.commands = {
            'mask': self.mask,
            'simulate': self.simulate,
            'reconstruct': self.reconstruct,
            'eval': self.eval,
            'train-supervised': self.train_supervised,
            'demo': self.demo,
            'table': self.table,
            'view': self.view,
        }

    def get_commands(self):
        return list(self.commands.keys())

    def process_command(self, argv=None):
        """
        Parse argv and run the command.

        :return: exit status; 0 iff every requested output was written.
        """
        args = self.parser.parse_args(argv)
        # Parse errors exit with status 2 inside argparse
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        try:
            return self.commands[args.command](args) or 0
        except (DivergenceError, FormatError, UnsupportedOperatorError, OSError) as e:
            logger.error("Error executing command '%s': %s", args.command, e)
            return 1
        except ValueError as e:
            logger.error("Invalid arguments for '%s': %s", args.command, e)
            return 2

    def mask(self, args):
        cmd_mask(args.task, args.af, args.shape, args.out, args.center_fraction, args.seed)

    def simulate(self, args):
        cmd_simulate(args.image, args.mask, args.noise_std, args.seed, args.out)

    def reconstruct(self, args):
        overrides = {
            "seed": args.seed, "task": args.task, "alpha": args.alpha, "beta": args.beta,
            "gamma": args.gamma, "input_mode": args.input_mode, "max_iters": args.max_iters,
            "lr": args.lr, "tv_weight": args.tv_weight, "tv_iters": args.tv_iters,
            "checkpoint": args.checkpoint, "progress": args.progress,
        }
        cmd_reconstruct(args.method, args.measurement, args.mask, args.config, args.out,
                        overrides, args.ground_truth)

    def eval(self, args):
        _, failures = cmd_eval(args.ref, args.tests, args.out)
        return 1 if failures else 0

    def train_supervised(self, args):
        cmd_train_supervised(args.task, args.n, args.size, args.seed, args.out, args.max_iters,
                             args.lr, args.batch_size, args.progress)

    def demo(self, args):
        cmd_demo(args.task, args.size, args.seed, args.out, args.max_iters, args.noise_std, args.progress)

    def table(self, args):
        cmd_table(args.size, args.seed, args.out, args.supervised, args.n_train, args.max_iters,
                  args.supervised_iters, args.supervised_lr, args.batch_size)

    def view(self, args):
        cmd_view(args.out_dir)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s: %(message)s")
    return CommandProcessor().process_command(argv)


if __name__ == "__main__":
    sys.exit(main())
