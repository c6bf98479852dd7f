"""``dropgp`` command line: train, predict, convert, check, gen-data.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Set ``DROPGP_LOG``
(DEBUG, INFO, WARNING, ...) to control log verbosity on stderr.
"""
import argparse
import csv
from dataclasses import replace
import logging
import os
import sys

import numpy as np

from dropgp import checkpoint as ckpt_io
from dropgp import config as config_io
from dropgp.checks import SUITES, format_rows
from dropgp.data import DataError, read_csv, sine_with_gap, two_blobs, two_moons, write_csv
from dropgp.gp import mapped_hyperparams, tau_from_weight_decay, weight_decay_from_tau
from dropgp.network import (
    HyperParams,
    NetworkSpec,
    Schedule,
    data_loss,
    init_params,
    log_softmax_true,
    normalize_keep_probs,
    sgd_train,
    weight_average_forward,
)
from dropgp.numerics import ContractError, DomainError, RngState, logsumexp
from dropgp.uncertainty import (
    CalibrationTable,
    McConfig,
    calibration_percentile,
    predictive_log_likelihood,
    sample_outputs,
    write_predictions_csv,
)

log = logging.getLogger("dropgp")

# stream ids under the run seed
INIT_STREAM, TRAIN_STREAM, CALIB_STREAM, PREDICT_STREAM = 1, 2, 3, 4

RUNTIME_ERRORS = (DataError, ckpt_io.CheckpointError, config_io.ConfigError, DomainError,
                  ContractError, FloatingPointError, OSError)


def _setup_logging():
    level = os.environ.get("DROPGP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


# ---------------------------------------------------------------- model plumbing

def build_model(cfg, data):
    """NetworkSpec and HyperParams for a config and a training set."""
    Q = data.X.shape[1]
    D = data.Y.shape[1] if data.task == "regression" else int(data.labels.max())
    if data.task != cfg.task:
        raise DataError(f"config task is {cfg.task} but the data file holds {data.task} targets")
    if data.task == "classification" and D < 2:
        raise DataError("classification needs at least two classes")
    spec = NetworkSpec((Q,) + tuple(cfg.hidden) + (D,), cfg.nonlinearity,
                       cfg.scale_features, cfg.output_bias)
    keep = normalize_keep_probs(spec, cfg.keep_probs())
    if cfg.tau is not None:
        hyper = mapped_hyperparams(spec, keep, data.n, cfg.tau, cfg.lengthscale, cfg.bias_lengthscale,
                                   use_K_scaling=not cfg.scale_features, task=cfg.task)
    else:
        # uniform decay on every weight and hidden bias; tau follows from the first layer
        tau = tau_from_weight_decay(cfg.lengthscale, keep[0], data.n, cfg.weight_decay)
        hyper = HyperParams(tau=tau, weight_decay=cfg.weight_decay, bias_decay=cfg.weight_decay,
                            lengthscale=cfg.lengthscale, bias_lengthscale=cfg.bias_lengthscale)
    return spec, keep, hyper


def mc_outputs(spec, params, keep, tau, task, X, samples, seed, stream):
    """Per-row means and stds (and raw samples) for regression or classification."""
    S = sample_outputs(spec, params, McConfig(samples, seed, keep, tau, stream), X)
    if task == "classification":
        S = np.exp(S - logsumexp(S, axis=2)[..., None])
        means = S.mean(axis=1)
        var = ((S - means[:, None, :]) ** 2).mean(axis=1)
    else:
        means = S.mean(axis=1)
        var = ((S - means[:, None, :]) ** 2).mean(axis=1) + 1.0 / tau
    return means, np.sqrt(np.maximum(var, 0.0)), S


def _write_loss_csv(path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for t, v in enumerate(losses):
            w.writerow([t, repr(float(v))])


def _write_table_csv(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "std"])
        for i, v in enumerate(table.values):
            w.writerow([i, repr(float(v))])


# ---------------------------------------------------------------- commands

def cmd_train(args):
    cfg = config_io.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.samples is not None:
        cfg = replace(cfg, samples=args.samples)
    data, _, _ = read_csv(args.data)
    spec, keep, hyper = build_model(cfg, data)
    log.info("network widths %s, keep %s, tau %.6g", spec.widths, keep, hyper.tau)
    params = init_params(spec, RngState(cfg.seed, INIT_STREAM))
    schedule = Schedule(cfg.base_lr, cfg.gamma, cfg.power, cfg.momentum, cfg.iterations)
    batch = cfg.batch_size or data.n
    if batch > data.n:
        raise ContractError(f"batch_size {batch} exceeds the {data.n} training points")
    result = sgd_train(spec, params, hyper, data, schedule, batch, keep, RngState(cfg.seed, TRAIN_STREAM))
    final = data_loss(spec, data, weight_average_forward(spec, result.params, keep, data.X))

    table = None
    if cfg.calibrate:
        _, stds, _ = mc_outputs(spec, result.params, keep, hyper.tau, cfg.task, data.X,
                                cfg.samples, cfg.seed, CALIB_STREAM)
        table = CalibrationTable.from_stds(stds)
    ckpt_io.save(args.out, ckpt_io.Checkpoint(spec, result.params, keep, hyper.tau, cfg.task, table))
    loss_path = args.loss_out or args.out + ".loss.csv"
    _write_loss_csv(loss_path, result.losses)
    if table is not None:
        _write_table_csv(args.calibration_out or args.out + ".calibration.csv", table)
    print(f"final training loss {final:.6g}")
    print(f"checkpoint written to {args.out}; loss trace in {loss_path}")
    return 0


def cmd_predict(args):
    ck = ckpt_io.load(args.checkpoint)
    data, X, _ = read_csv(args.data, require_targets=False)
    if X.shape[1] != ck.spec.input_dim:
        raise DataError(f"data has {X.shape[1]} input columns but the checkpoint expects {ck.spec.input_dim}")
    T = args.samples if args.samples is not None else 100
    seed = args.seed if args.seed is not None else 0
    means, stds, S = mc_outputs(ck.spec, ck.params, ck.keep_probs, ck.tau, ck.task, X, T, seed, PREDICT_STREAM)
    percentiles = None
    if ck.calibration is not None:
        percentiles = [calibration_percentile(ck.calibration, float(s)) for s in stds.mean(axis=1)]
    loglik = None
    if data is not None:
        if data.task != ck.task:
            raise DataError(f"checkpoint task is {ck.task} but the data holds {data.task} targets")
        if ck.task == "regression":
            if data.Y.shape[1] != ck.spec.output_dim:
                raise DataError(f"data has {data.Y.shape[1]} targets, checkpoint outputs {ck.spec.output_dim}")
            loglik = [predictive_log_likelihood(S[n], data.Y[n], ck.tau) for n in range(X.shape[0])]
        else:
            if data.labels.max() > ck.spec.output_dim:
                raise DataError("labels exceed the checkpoint's class count")
            loglik = log_softmax_true(np.log(np.maximum(means, 1e-300)), data.labels)
    write_predictions_csv(args.out, means, stds, percentiles, loglik, S if args.keep_samples else None)
    print(f"wrote {X.shape[0]} predictions to {args.out}")
    return 0


def cmd_convert(args):
    l, p1, n = args.lengthscale, args.p1, args.n
    if args.weight_decay is not None:
        tau = tau_from_weight_decay(l, p1, n, args.weight_decay)
        print(f"tau = {tau!r}")
        print(f"tau = l^2 p1 / (2 N lambda) = {l!r}^2 * {p1!r} / (2 * {n!r} * {args.weight_decay!r})")
    else:
        lam = weight_decay_from_tau(l, p1, n, args.tau)
        print(f"lambda = {lam!r}")
        print(f"lambda = l^2 p1 / (2 N tau) = {l!r}^2 * {p1!r} / (2 * {n!r} * {args.tau!r})")
    return 0


def cmd_check(args):
    rows = SUITES[args.suite]()
    print(format_rows(rows))
    failed = [r for r in rows if not r.passed]
    print(f"{args.suite}: {len(rows) - len(failed)}/{len(rows)} passed")
    return 1 if failed else 0


def cmd_gen_data(args):
    seed = args.seed if args.seed is not None else 0
    if args.kind == "sine":
        if args.grid:
            write_csv(args.out, np.linspace(-8.0, 8.0, 161)[:, None])
        else:
            X, Y = sine_with_gap(args.n or 120, seed=seed)
            write_csv(args.out, X, Y=Y)
    else:
        gen = two_moons if args.kind == "moons" else two_blobs
        X, labels = gen(args.n or 200, seed=seed)
        write_csv(args.out, X, labels=labels)
    print(f"wrote {args.kind} data to {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    ap = argparse.ArgumentParser(prog="dropgp", description="Dropout networks as approximate Gaussian processes.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a dropout network")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int, help="MC samples T for the calibration table")
    p.add_argument("--loss-out", help="loss trace CSV (default OUT.loss.csv)")
    p.add_argument("--calibration-out", help="calibration table CSV (default OUT.calibration.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="MC-dropout predictions with uncertainty")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="input CSV (targets optional)")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, help="MC samples T (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--keep-samples", action="store_true", help="append every sampled output")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("convert", help="convert between weight decay and precision")
    p.add_argument("--lengthscale", type=float, required=True)
    p.add_argument("--p1", type=float, required=True, help="first-layer keep probability")
    p.add_argument("--n", type=float, required=True, help="number of training points")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("check", help="run a self-check suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("gen-data", help="write a bundled synthetic dataset")
    p.add_argument("kind", choices=("sine", "moons", "blobs"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--grid", action="store_true", help="sine only: evaluation grid on [-8, 8]")
    p.set_defaults(func=cmd_gen_data)
    return ap


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("samples", "n"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            parser.error(f"--{name} must be positive")
    try:
        return args.func(args)
    except RUNTIME_ERRORS as exc:
        print(f"dropgp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
