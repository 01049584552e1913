"""Command-line entry point: simulate -> embed -> train -> eval -> report.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O or file format,
5 remote-estimator protocol failure.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import config as cfgmod
from . import embedding, evaluation, nn, sde, training
from .errors import CoarsegrainError, ConfigError, ConfigHashMismatchError, FormatError, ProtocolError

log = logging.getLogger("coarsegrain")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO, EXIT_PROTOCOL = 0, 2, 3, 4, 5


def _out_dir(args, cfg):
    out = args.out or cfg.out
    os.makedirs(out, exist_ok=True)
    return out


def _load(args):
    overrides = list(args.set or [])
    for flag, key in (("steps", "simulation.n_steps"), ("dt", "simulation.dt")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return cfgmod.load_config(args.config, overrides)


def _seeds(args, cfg):
    return cfgmod.parse_seeds(args.seeds) if getattr(args, "seeds", None) else cfg.seeds


def cmd_simulate(args):
    cfg = _load(args)
    traj = sde.euler_maruyama(sde.double_well_system(), cfg.sim)
    path = os.path.join(_out_dir(args, cfg), "trajectory.csv")
    sde.write_trajectory_csv(traj, path, meta={"config_hash": cfg.dataset_hash()})
    print(json.dumps({"trajectory": path, "rows": len(traj)}))


def cmd_embed(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    traj_path = args.trajectory or os.path.join(out, "trajectory.csv")
    traj, meta = sde.read_trajectory_csv(traj_path)
    ds = embedding.embed_trajectory(traj, cfg.blob, config_hash=meta.get("config_hash", cfg.dataset_hash()))
    head, _ = embedding.save_dataset(ds, os.path.join(out, "dataset"))
    embedding.write_argmax_csv(ds, os.path.join(out, "argmax.csv"))
    print(json.dumps({"dataset": head, "frames": len(ds)}))


def _train_one(raw, seed, dataset_path, out):
    """Train one seed; module-level so it can run in a worker process."""
    cfg = cfgmod.build(raw)
    ds = embedding.load_dataset(dataset_path)
    tcfg = cfg.train_config(seed)
    seed_dir = os.path.join(out, f"seed_{seed}")
    os.makedirs(seed_dir, exist_ok=True)
    extra = {"dataset_hash": ds.config_hash, "config_hash": cfg.train_hash(seed)}

    def checkpoint(step, params, trace):
        if tcfg.checkpoint_every and (step + 1) % tcfg.checkpoint_every == 0:
            nn.save_checkpoint(params, os.path.join(seed_dir, f"checkpoint_{step + 1:06d}"), seed, step + 1, extra)

    params, trace = training.train(ds.flat, ds.dt, tcfg, callback=checkpoint)
    head, _ = nn.save_checkpoint(params, os.path.join(seed_dir, "checkpoint"), seed, len(trace), extra)
    trace.write_csv(os.path.join(seed_dir, "trace.csv"), meta={"config_hash": extra["config_hash"]})
    return {"seed": seed, "checkpoint": head, "initial_loss": trace.loss[0] if len(trace) else None,
            "final_loss": trace.loss[-1] if len(trace) else None}


def cmd_train(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    dataset_path = args.dataset or os.path.join(out, "dataset.json")
    embedding.load_dataset(dataset_path)  # validate before spawning workers
    seeds = _seeds(args, cfg)
    jobs = args.jobs or cfg.jobs
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_one, [cfg.raw] * len(seeds), seeds,
                                    [dataset_path] * len(seeds), [out] * len(seeds)))
    else:
        results = [_train_one(cfg.raw, s, dataset_path, out) for s in seeds]
    print(json.dumps(results))


def read_trace_csv(path):
    losses = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("step"):
                continue
            losses.append(float(line.split(",")[1]))
    return losses


def cmd_eval(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    dataset_path = args.dataset or os.path.join(out, "dataset.json")
    ds = embedding.load_dataset(dataset_path)
    reports = []
    for seed in _seeds(args, cfg):
        ckpt = args.checkpoint if args.checkpoint else os.path.join(out, f"seed_{seed}", "checkpoint.json")
        params, header = nn.load_checkpoint(ckpt)
        if header.get("dataset_hash") != ds.config_hash:
            raise ConfigHashMismatchError(
                f"checkpoint {ckpt} was trained on dataset {header.get('dataset_hash')!r}, "
                f"not {ds.config_hash!r}")
        seed_dir = os.path.dirname(os.path.abspath(ckpt))
        trace = training.LossTrace()
        trace_path = os.path.join(seed_dir, "trace.csv")
        if os.path.exists(trace_path):
            trace.loss = read_trace_csv(trace_path)
        report = evaluation.evaluate_run(params, ds, grid_spec=cfg.grid, context_size=cfg.eval_context_size,
                                         seed=header.get("seed"), trace=trace, final_window=cfg.final_window)
        report.loss_trace = trace_path if os.path.exists(trace_path) else ""
        report.config_hash = header.get("config_hash", "")
        report.save(os.path.join(seed_dir, "report.json"))
        report.write_curves_csv(os.path.join(seed_dir, "curves.csv"))
        from .plotting import plot_run

        plot_run(report, os.path.join(seed_dir, "fields.svg"), frame=ds.frames[:100].mean(axis=0))
        reports.append({"seed": report.seed, "corr": report.corr, "drift_zero_crossings": report.drift_zero_crossings,
                        "recon_mse_per_pixel": report.recon_mse_per_pixel,
                        "report": os.path.join(seed_dir, "report.json")})
        if args.checkpoint:
            break
    print(json.dumps(reports))


def cmd_report(args):
    cfg = _load(args)
    paths = args.reports
    if not paths:
        out = args.out or cfg.out
        paths = [os.path.join(out, f"seed_{s}", "report.json") for s in _seeds(args, cfg)]
        paths = [p for p in paths if os.path.exists(p)]
    if len(paths) < 2:
        raise ConfigError("need >= 2 reports")
    reports = [evaluation.RunReport.load(p) for p in paths]
    summary = evaluation.aggregate_runs(reports)
    summary["config_hash"] = cfgmod.config_hash(sorted(r.config_hash for r in reports))
    out = _out_dir(args, cfg)
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    traces = [read_trace_csv(r.loss_trace) for r in reports if r.loss_trace and os.path.exists(r.loss_trace)]
    from .plotting import plot_aggregate

    plot_aggregate(summary, traces, os.path.join(out, "summary.svg"))
    print(json.dumps({"summary": os.path.join(out, "summary.json"), "n_runs": len(reports),
                      "metrics": summary["summary"]}))


def cmd_protocol_check(args):
    from .remote import protocol_check

    ok, message = protocol_check(args.endpoint, timeout=args.timeout)
    print(json.dumps({"ok": ok, "message": message}))
    if not ok:
        raise ProtocolError(message)


def cmd_serve(args):
    from .remote import EstimatorServer, echo_fields, kernel_fields

    responder = {"echo": echo_fields, "kernel": kernel_fields}[args.mode]
    server = EstimatorServer(responder, host=args.host, port=args.port)
    print(json.dumps({"endpoint": server.endpoint, "mode": args.mode}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


def cmd_pipeline(args):
    for fn in (cmd_simulate, cmd_embed, cmd_train, cmd_eval):
        fn(args)
    if len(_seeds(args, _load(args))) >= 2:
        args.reports = None
        cmd_report(args)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults are built in)")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override")
    common.add_argument("--seeds", help="training seeds, e.g. 0..9 or 0,3,5 (overrides run.seeds)")

    p = argparse.ArgumentParser(prog="coarsegrain", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate the double-well latent trajectory")
    s.add_argument("--steps", type=int)
    s.add_argument("--dt", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("embed", parents=[common], help="render the trajectory as blob video")
    s.add_argument("--trajectory")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("train", parents=[common], help="train encoder/decoder pairs")
    s.add_argument("--dataset")
    s.add_argument("--jobs", type=int, default=0, help="parallel workers, one per seed")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate checkpoints against ground truth")
    s.add_argument("--dataset")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="aggregate run reports")
    s.add_argument("reports", nargs="*")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("protocol-check", help="handshake with a remote estimator")
    s.add_argument("--endpoint", help="omit to test against the bundled echo double")
    s.add_argument("--timeout", type=float, default=5.0)
    s.set_defaults(func=cmd_protocol_check)

    s = sub.add_parser("serve", help="run a protocol server (echo double or kernel estimator)")
    s.add_argument("--mode", choices=["echo", "kernel"], default="kernel")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("pipeline", parents=[common], help="simulate, embed, train, eval and report")
    s.add_argument("--jobs", type=int, default=0)
    s.add_argument("--steps", type=int, dest="steps", default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_pipeline, trajectory=None, dataset=None, checkpoint=None, dt=None)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CoarsegrainError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}),
              file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": EXIT_IO}), file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
