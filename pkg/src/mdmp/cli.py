"""Command-line interface.

Subcommands: gen-toy, train, sample, eval, plot.  Options resolve in
three layers: built-in defaults, then a JSON config file given with
--config, then explicit flags.  Exit codes: 0 on success, 2 for usage,
configuration, or file-format problems, 3 when a computation diverges.

The MDMP_THREADS environment variable (or --threads) sets the default
BLAS thread count; it must be applied before numpy spins up its thread
pools, which is why the heavy imports in this module live inside the
command functions.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_threads(flag_value) -> None:
    raw = flag_value if flag_value is not None else os.environ.get("MDMP_THREADS")
    if raw is None or raw == "":
        return
    try:
        n = int(raw)
    except (TypeError, ValueError):
        raise ValueError(f"thread count must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError(f"thread count must be positive, got {n}")
    for var in _THREAD_VARS:
        os.environ.setdefault(var, str(n))


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    from .errors import FormatError

    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON ({e})")
    if not isinstance(config, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return config


def _resolve(args, config: dict, defaults: dict):
    """Fill argparse Nones from the config file, then from defaults."""
    unknown = set(config) - set(defaults)
    if unknown:
        raise ValueError(
            f"unknown config keys: {', '.join(sorted(unknown))}"
        )
    out = {}
    for key, fallback in defaults.items():
        given = getattr(args, key, None)
        out[key] = given if given is not None else config.get(key, fallback)
    return argparse.Namespace(**out)


def _onoff(value: str) -> str:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {value!r}")
    return value


# -- gen-toy ----------------------------------------------------------------

_GEN_DEFAULTS = dict(
    out=None,
    sequences=512,
    frames=120,
    fps=20.0,
    split=50,
    seed=0,
    test_sequences=16,
)


def cmd_gen_toy(args, config):
    opts = _resolve(args, config, _GEN_DEFAULTS)
    if opts.out is None:
        raise ValueError("gen-toy needs --out")
    from .data import (
        ToyGenConfig,
        default_toy_tree,
        generate_toy_dataset,
        save_dataset,
    )
    from .kinematics import save_joint_tree

    if not 0 < opts.test_sequences < opts.sequences:
        raise ValueError(
            f"test split of {opts.test_sequences} needs 0 < test < "
            f"{opts.sequences} total sequences"
        )
    cfg = ToyGenConfig(
        num_sequences=opts.sequences,
        frames=opts.frames,
        fps=opts.fps,
        split=opts.split,
        seed=opts.seed,
    )
    records = generate_toy_dataset(cfg)
    train_records = records[: -opts.test_sequences]
    test_records = records[-opts.test_sequences :]
    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    train_manifest = save_dataset(train_records, out / "train")
    test_manifest = save_dataset(test_records, out / "test")
    save_joint_tree(out / "tree.json", default_toy_tree())
    print(f"wrote {len(train_records)} training sequences: {train_manifest}")
    print(f"wrote {len(test_records)} test sequences: {test_manifest}")
    print(f"wrote joint tree: {out / 'tree.json'}")
    return 0


# -- train -------------------------------------------------------------------

_TRAIN_DEFAULTS = dict(
    data=None,
    out=None,
    loss_csv=None,
    steps=5000,
    T=50,
    batch_size=64,
    learning_rate=1e-4,
    prefix=50,
    seed=0,
    lambda_vlb=0.001,
    mask_prob=0.1,
    guidance=2.5,
    latent=512,
    layers=8,
    heads=4,
    gcn_hidden=8,
    dropout=0.1,
    encoder="gcn",
    variance_learning="on",
)


def cmd_train(args, config):
    opts = _resolve(args, config, _TRAIN_DEFAULTS)
    if opts.data is None or opts.out is None:
        raise ValueError("train needs --data and --out")
    from .data import load_dataset
    from .denoiser import DenoiserConfig, init_params, save_checkpoint
    from .diffusion import TrainConfig, train, write_loss_csv
    from .schedule import build_cosine_schedule

    records = load_dataset(opts.data)
    if not records:
        raise ValueError(f"{opts.data}: dataset is empty")
    first = records[0].motion
    model_cfg = DenoiserConfig(
        feature_width=first.width,
        latent=opts.latent,
        layers=opts.layers,
        heads=opts.heads,
        gcn_hidden=opts.gcn_hidden,
        dropout=opts.dropout,
        variance_learning=opts.variance_learning == "on",
        encoder=opts.encoder,
    )
    train_cfg = TrainConfig(
        steps=opts.steps,
        T=opts.T,
        lambda_vlb=opts.lambda_vlb,
        guidance_scale=opts.guidance,
        text_mask_prob=opts.mask_prob,
        batch_size=opts.batch_size,
        learning_rate=opts.learning_rate,
        prefix_len=opts.prefix,
        seed=opts.seed,
    )
    sched = build_cosine_schedule(train_cfg.T)
    params = init_params(model_cfg, seed=train_cfg.seed)
    params, history = train(records, train_cfg, params, model_cfg, sched)
    extra = {
        "T": train_cfg.T,
        "frames": first.frame_count,
        "prefix_len": train_cfg.prefix_len,
        "fps": first.fps,
        "layout": first.layout,
        "guidance": train_cfg.guidance_scale,
        "seed": train_cfg.seed,
        "steps_trained": train_cfg.steps,
    }
    out = Path(opts.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, params, model_cfg, extra=extra)
    print(f"trained {train_cfg.steps} steps; checkpoint: {out}")
    if opts.loss_csv is not None:
        write_loss_csv(opts.loss_csv, history)
        print(f"loss history: {opts.loss_csv}")
    if history:
        last = history[-1]
        print(
            f"final losses: L_simple={last[1]:.6f} L_VLB={last[2]:.6f} "
            f"L_hybrid={last[3]:.6f}"
        )
    return 0


# -- sample -------------------------------------------------------------------

_SAMPLE_DEFAULTS = dict(
    checkpoint=None,
    data=None,
    id=None,
    all=None,
    prefix_container=None,
    prompt=None,
    out=None,
    chains=8,
    guidance=None,
    steps=None,
    frames=None,
    seed=0,
    window=None,
    no_text=None,
    no_motion=None,
)


def _joint_map_for(container, width):
    from .data import LAYOUT_POSITIONS_3D, LAYOUT_RICH_263
    from .kinematics import positions_joint_map, rich_pose_layout
    import numpy as np

    if container.layout == LAYOUT_POSITIONS_3D:
        return positions_joint_map(width)
    if container.layout == LAYOUT_RICH_263:
        return rich_pose_layout().joint_map()
    return np.arange(width)  # raw: every channel is its own column


def _sample_one(record, params, model_cfg, extra, opts, out_dir):
    import numpy as np

    from .data import MotionContainer, write_container
    from .denoiser import Conditioning
    from .diffusion import TrainConfig, sample
    from .schedule import build_cosine_schedule
    from .textcond import stub_encode
    from .uncertainty import (
        denoising_fluctuations,
        mode_divergence,
        predicted_variance,
        save_uncertainty_csv,
    )

    container = record.motion
    motion = container.data.astype(np.float64)
    T = opts.steps if opts.steps is not None else int(extra.get("T", 50))
    frames = (
        opts.frames
        if opts.frames is not None
        else int(extra.get("frames", motion.shape[0]))
    )
    prefix_len = 0 if opts.no_motion else int(extra.get("prefix_len", 50))
    if prefix_len > motion.shape[0]:
        raise ValueError(
            f"{record.id}: prefix of {prefix_len} frames exceeds the "
            f"{motion.shape[0]} available"
        )
    guidance = (
        opts.guidance
        if opts.guidance is not None
        else float(extra.get("guidance", 2.5))
    )
    prompt = opts.prompt if opts.prompt is not None else record.prompts[0]
    cond = Conditioning(
        prefix=motion[:prefix_len],
        text_embedding=stub_encode(prompt).vector,
        text_masked=bool(opts.no_text),
    )
    sample_cfg = TrainConfig(
        steps=1,
        T=T,
        guidance_scale=guidance,
        prefix_len=prefix_len,
    )
    sched = build_cosine_schedule(T)
    traces = sample(
        cond,
        params,
        model_cfg,
        sched,
        sample_cfg,
        rng_seed=opts.seed,
        num_chains=opts.chains,
        num_frames=frames,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    for c, trace in enumerate(traces):
        out = MotionContainer(
            data=trace.final.astype(np.float32),
            fps=container.fps,
            layout=container.layout,
        )
        write_container(out_dir / f"chain_{c:02d}.mdmp", out)

    joint_map = _joint_map_for(container, motion.shape[1])
    window = opts.window if opts.window is not None else min(20, T)
    grid = denoising_fluctuations(traces[0], joint_map, window=window)
    save_uncertainty_csv(out_dir / "fluctuations.csv", grid)
    if traces[0].final_variance is not None:
        grid = predicted_variance(traces[0].final_variance, joint_map)
        save_uncertainty_csv(out_dir / "predicted_variance.csv", grid)
    if opts.chains >= 2:
        grid = mode_divergence([t.final for t in traces], joint_map)
        save_uncertainty_csv(out_dir / "mode_divergence.csv", grid)
    else:
        print(
            f"{record.id}: single chain, skipping the mode-divergence index",
            file=sys.stderr,
        )


def cmd_sample(args, config):
    opts = _resolve(args, config, _SAMPLE_DEFAULTS)
    if opts.checkpoint is None or opts.out is None:
        raise ValueError("sample needs --checkpoint and --out")
    from .data import DatasetRecord, load_dataset, read_container
    from .denoiser import load_checkpoint

    params, model_cfg, extra = load_checkpoint(opts.checkpoint)
    out = Path(opts.out)
    if opts.prefix_container is not None:
        if opts.prompt is None:
            raise ValueError("--prefix-container also needs --prompt")
        container = read_container(opts.prefix_container)
        stem = Path(opts.prefix_container).stem
        record = DatasetRecord(
            id=stem, motion=container, prompts=[opts.prompt]
        )
        _sample_one(record, params, model_cfg, extra, opts, out / stem)
        print(f"sampled {opts.chains} chains for {stem}: {out / stem}")
        return 0
    if opts.data is None:
        raise ValueError("sample needs --data (or --prefix-container)")
    records = load_dataset(opts.data)
    if opts.all:
        chosen = records
    else:
        if opts.id is None:
            raise ValueError("pick a record with --id, or pass --all")
        by_id = {r.id: r for r in records}
        if opts.id not in by_id:
            raise ValueError(f"record id {opts.id!r} not in {opts.data}")
        chosen = [by_id[opts.id]]
    for record in chosen:
        _sample_one(record, params, model_cfg, extra, opts, out / record.id)
    print(f"sampled {opts.chains} chains for {len(chosen)} record(s): {out}")
    return 0


# -- eval ----------------------------------------------------------------------

_EVAL_DEFAULTS = dict(
    data=None,
    samples=None,
    out=None,
    tree=None,
    sparsification=None,
    index="mode",
    M=20,
    seed=0,
)


def _positions_of(container, tree):
    from .data import LAYOUT_POSITIONS_3D, LAYOUT_RICH_263
    from .kinematics import as_joint_positions, features_to_positions
    import numpy as np

    data = container.data.astype(np.float64)
    if container.layout == LAYOUT_POSITIONS_3D:
        return as_joint_positions(data)
    if container.layout == LAYOUT_RICH_263:
        if tree is None:
            raise ValueError("rich-layout data needs --tree for positions")
        flat = features_to_positions(data, tree)
        return as_joint_positions(flat)
    raise ValueError("raw-layout containers carry no joint positions")


def cmd_eval(args, config):
    opts = _resolve(args, config, _EVAL_DEFAULTS)
    if opts.data is None or opts.samples is None or opts.out is None:
        raise ValueError("eval needs --data, --samples, and --out")
    import numpy as np

    from .data import load_dataset, read_container
    from .evaluation import evaluate_mpjpe, sparsification, write_horizon_csv
    from .kinematics import load_joint_tree
    from .uncertainty import IndexKind, load_uncertainty_csv, mode_divergence

    records = load_dataset(opts.data)
    samples_root = Path(opts.samples)
    tree = load_joint_tree(opts.tree) if opts.tree else None

    missing = [
        r.id
        for r in records
        if not (samples_root / r.id).is_dir()
        or not sorted((samples_root / r.id).glob("chain_*.mdmp"))
    ]
    if missing:
        raise ValueError(
            "no samples for record ids: " + ", ".join(sorted(missing))
        )

    prefix_len = None
    fps = records[0].motion.fps
    pairs = []
    pooled_err = []
    pooled_unc = []
    for record in records:
        gt_pos = _positions_of(record.motion, tree)
        chain_paths = sorted((samples_root / record.id).glob("chain_*.mdmp"))
        chains = [read_container(p) for p in chain_paths]
        positions = [_positions_of(c, tree) for c in chains]
        if prefix_len is None:
            # recover the observed span: leading frames bit-equal to the
            # ground truth in every chain
            n = 0
            first = chains[0].data
            gt_raw = record.motion.data
            while n < first.shape[0] and np.array_equal(
                first[n], gt_raw[n]
            ):
                n += 1
            prefix_len = n if n < first.shape[0] else 0
        for pos in positions:
            pairs.append((pos, gt_pos))
        if opts.sparsification:
            per_joint = [
                np.linalg.norm(pos - gt_pos, axis=-1)[prefix_len:]
                for pos in positions
            ]
            if opts.index == "mode":
                if len(chains) < 2:
                    raise ValueError(
                        f"{record.id}: mode divergence needs at least 2 chains"
                    )
                joint_map = _joint_map_for(
                    chains[0], chains[0].data.shape[1]
                )
                grid = mode_divergence(
                    [c.data.astype(np.float64) for c in chains], joint_map
                )
            else:
                name = (
                    "fluctuations.csv"
                    if opts.index == "fluct"
                    else "predicted_variance.csv"
                )
                csv_path = samples_root / record.id / name
                if not csv_path.exists():
                    raise ValueError(
                        f"{record.id}: {name} was not written at sample time"
                    )
                kind = (
                    IndexKind.DENOISING_FLUCTUATIONS
                    if opts.index == "fluct"
                    else IndexKind.PREDICTED_VARIANCE
                )
                grid = load_uncertainty_csv(csv_path, kind)
            unc = grid.values[prefix_len:]
            for err in per_joint:
                pooled_err.append(err.ravel())
                pooled_unc.append(unc.ravel())

    out = Path(opts.out)
    out.mkdir(parents=True, exist_ok=True)
    table = evaluate_mpjpe(pairs, fps=fps, prefix_len=prefix_len)
    write_horizon_csv(out / "mpjpe.csv", table)
    print(f"mpjpe over {len(pairs)} prediction(s): {out / 'mpjpe.csv'}")
    for edge, err in zip(table.edges, table.mpjpe_mm):
        print(f"  horizon {edge:4.1f} s: {err:10.2f} mm")

    if opts.sparsification:
        res = sparsification(
            np.concatenate(pooled_err),
            np.concatenate(pooled_unc),
            M=opts.M,
            seed=opts.seed,
        )
        with open(out / "sparsification.csv", "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write("fraction,remaining,oracle,random\n")
            for row in zip(
                res.fractions, res.curve, res.oracle_curve, res.random_curve
            ):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        summary = {
            "index": opts.index,
            "sparsification_error": res.sparsification_error,
        }
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(
            f"sparsification error ({opts.index}): "
            f"{res.sparsification_error:.6f}"
        )
    return 0


# -- plot -----------------------------------------------------------------------

_PLOT_DEFAULTS = dict(loss=None, mpjpe=None, sparsification=None, out=None)


def cmd_plot(args, config):
    opts = _resolve(args, config, _PLOT_DEFAULTS)
    if opts.out is None:
        raise ValueError("plot needs --out")
    chosen = [
        k
        for k in ("loss", "mpjpe", "sparsification")
        if getattr(opts, k) is not None
    ]
    if len(chosen) != 1:
        raise ValueError(
            "pass exactly one of --loss, --mpjpe, --sparsification"
        )
    import numpy as np

    from .evaluation import write_line_plot

    kind = chosen[0]
    if kind == "loss":
        from .diffusion import read_loss_csv

        rows = read_loss_csv(opts.loss)
        steps = np.array([r[0] for r in rows], dtype=np.float64)
        series = [
            ("L_simple", steps, np.array([r[1] for r in rows])),
            ("L_hybrid", steps, np.array([r[3] for r in rows])),
        ]
        write_line_plot(
            opts.out, series, title="training loss", x_label="step",
            y_label="loss",
        )
    elif kind == "mpjpe":
        edges, errs = [], []
        with open(opts.mpjpe, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "horizon_s,mpjpe_mm,frames":
                raise ValueError(f"{opts.mpjpe}: unexpected header {header!r}")
            for line in fh:
                e, m, _ = line.strip().split(",")
                edges.append(float(e))
                errs.append(float(m))
        series = [("mpjpe", np.array(edges), np.array(errs))]
        write_line_plot(
            opts.out, series, title="prediction error by horizon",
            x_label="horizon (s)", y_label="mpjpe (mm)",
        )
    else:
        rows = []
        with open(opts.sparsification, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "fraction,remaining,oracle,random":
                raise ValueError(
                    f"{opts.sparsification}: unexpected header {header!r}"
                )
            for line in fh:
                rows.append([float(v) for v in line.strip().split(",")])
        arr = np.array(rows)
        series = [
            ("by uncertainty", arr[:, 0], arr[:, 1]),
            ("oracle", arr[:, 0], arr[:, 2]),
            ("random", arr[:, 0], arr[:, 3]),
        ]
        write_line_plot(
            opts.out, series, title="sparsification",
            x_label="fraction removed", y_label="remaining error",
        )
    print(f"wrote {opts.out}")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mdmp",
        description="Motion-prediction diffusion: data, training, "
        "sampling, and evaluation.",
    )
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument(
        "--threads",
        help="BLAS thread count (default from MDMP_THREADS)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="write the synthetic walking dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--sequences", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--split", type=int, help="frame where classes diverge")
    p.add_argument("--seed", type=int)
    p.add_argument("--test-sequences", type=int, dest="test_sequences")
    p.set_defaults(func=cmd_gen_toy)

    p = sub.add_parser("train", help="train a denoiser on a dataset")
    p.add_argument("--data", help="dataset manifest")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--loss-csv", dest="loss_csv")
    p.add_argument("--steps", type=int)
    p.add_argument("--T", type=int, dest="T", help="diffusion steps (50 or 1000)")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--prefix", type=int, help="observed frames per sequence")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda-vlb", type=float, dest="lambda_vlb")
    p.add_argument("--mask-prob", type=float, dest="mask_prob")
    p.add_argument("--guidance", type=float)
    p.add_argument("--latent", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--gcn-hidden", type=int, dest="gcn_hidden")
    p.add_argument("--dropout", type=float)
    p.add_argument("--encoder", choices=("gcn", "linear"))
    p.add_argument(
        "--variance-learning",
        type=_onoff,
        dest="variance_learning",
        help="on or off",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample futures from a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset manifest with prefixes")
    p.add_argument("--id", help="record id to condition on")
    p.add_argument("--all", action="store_true", default=None,
                   help="sample every record in the manifest")
    p.add_argument("--prefix-container", dest="prefix_container",
                   help="condition on a single motion container")
    p.add_argument("--prompt", help="text prompt (defaults to the record's)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--chains", type=int, help="independent samples")
    p.add_argument("--guidance", type=float)
    p.add_argument("--steps", type=int, help="diffusion steps at sampling")
    p.add_argument("--frames", type=int, help="frames to generate")
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int,
                   help="steps for the fluctuation index")
    p.add_argument("--no-text", dest="no_text", action="store_true",
                   default=None, help="mask the text conditioning")
    p.add_argument("--no-motion", dest="no_motion", action="store_true",
                   default=None, help="drop the motion prefix")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score samples against ground truth")
    p.add_argument("--data", help="ground-truth manifest")
    p.add_argument("--samples", help="directory written by sample --all")
    p.add_argument("--out", help="output directory")
    p.add_argument("--tree", help="joint tree JSON for rich-layout data")
    p.add_argument("--sparsification", action="store_true", default=None)
    p.add_argument("--index", choices=("mode", "fluct", "var"))
    p.add_argument("--M", type=int, dest="M", help="sparsification fractions")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render a CSV report as SVG")
    p.add_argument("--loss", help="loss history CSV")
    p.add_argument("--mpjpe", help="horizon table CSV")
    p.add_argument("--sparsification", help="sparsification CSV")
    p.add_argument("--out", help="SVG path")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import FormatError, NumericalError

    try:
        _apply_threads(args.threads)
        config = _load_config_file(args.config)
        return args.func(args, config)
    except NumericalError as e:
        print(f"mdmp: numerical failure: {e}", file=sys.stderr)
        return 3
    except (FormatError, ValueError, KeyError, OSError) as e:
        print(f"mdmp: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
