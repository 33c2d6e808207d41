"""Command-line entry point.

Exit codes: 0 success, 1 domain error (bad config, unreadable file, bad input),
2 usage error. Results go to stdout or to the named output paths; logs go to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import MODEL_FORMAT_VERSION, __version__
from .config import RunConfig, parse_config
from .errors import RiskCnnError
from .imageio import read_pfm, read_ppm, write_pfm
from .rmc import classify, risk_value
from .scenario import Scene
from .stereo import StereoPair, compute_disparity, validate_pair

log = logging.getLogger("riskcnn")


def _config(args) -> RunConfig:
    return parse_config(args.config) if getattr(args, "config", None) else RunConfig()


def _dump(obj) -> None:
    sys.stdout.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _pair(args) -> StereoPair:
    return StereoPair(read_ppm(args.left), read_ppm(args.right))


def cmd_gen_data(args) -> int:
    from .pipeline.dataset import build_dataset

    cfg = _config(args)
    m = build_dataset(args.out, cfg, n_samples=args.n, master_seed=args.seed, workers=args.threads)
    _dump({
        "records": len(m.records),
        "excluded": len(m.excluded),
        "splits": {s: len(m.split(s)) for s in ("train", "val", "test")},
        "config_digest": m.config_digest,
    })
    return 0


def cmd_disparity(args) -> int:
    cfg = _config(args)
    disp = compute_disparity(_pair(args), cfg.sgm)
    write_pfm(args.out, disp.astype(np.float32))
    return 0


def cmd_qc(args) -> int:
    _dump(validate_pair(_pair(args)).to_dict())
    return 0


def cmd_train(args) -> int:
    from .pipeline.dataset import DatasetManifest
    from .pipeline.modelfile import save_model
    from .pipeline.training import train
    from .nn import RISK_NET

    cfg = _config(args)
    manifest = DatasetManifest.read(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best, report = train(manifest, args.data, cfg, RISK_NET, out_dir=out)
    save_model(out / "model.bin", best, RISK_NET, float(cfg.sgm.d_max))
    with open(out / "train.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    _dump(report.to_dict())
    return 0


def cmd_eval(args) -> int:
    from .pipeline.dataset import DatasetManifest, load_split
    from .pipeline.evaluation import evaluate
    from .pipeline.experiment import write_report
    from .pipeline.modelfile import load_model

    cfg = _config(args)
    params, arch, header = load_model(args.model)
    manifest = DatasetManifest.read(args.data)
    x, y, _ = load_split(args.data, manifest, args.split, int(header["disparity_scale"]))
    if len(y) == 0:
        raise RiskCnnError(f"split {args.split!r} is empty")
    report = evaluate(params, x, y, arch, cfg.eval.threshold_headway)
    if args.out:
        write_report(args.out, report)
    _dump(report.to_dict())
    return 0


def cmd_predict(args) -> int:
    from .nn import model_forward
    from .pipeline.dataset import stack_input
    from .pipeline.modelfile import load_model

    params, arch, header = load_model(args.model)
    x = stack_input(read_ppm(args.left), read_pfm(args.disparity), int(header["disparity_scale"]))
    raw = model_forward(params, x, arch)
    sys.stdout.write(f"{min(max(raw, 0.0), 1.0)!r}\n")
    return 0


def cmd_risk(args) -> int:
    cfg = _config(args)
    with open(args.scene) as fh:
        scene = Scene.from_json(fh.read())
    label = risk_value(scene, cfg.grid)
    th = None if math.isinf(label.time_headway) else round(label.time_headway, 6)
    _dump({
        "risk": round(label.value, 6),
        "time_headway": th,
        "critical": classify(label, cfg.eval.threshold_headway) == "critical",
        "target_id": label.target_id,
    })
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskcnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"riskcnn {__version__} (model format {MODEL_FORMAT_VERSION})")
    p.add_argument("--threads", type=int, default=1, help="upper bound on worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "build a labelled dataset")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, help="number of samples (overrides config)")
    sp.add_argument("--seed", type=int, help="master seed (overrides config)")

    for name, fn, help_ in (("disparity", cmd_disparity, "SGM disparity of a stereo pair"), ("qc", cmd_qc, "stereo pair quality check")):
        sp = add(name, fn, help_)
        sp.add_argument("--left", required=True)
        sp.add_argument("--right", required=True)
        if name == "disparity":
            sp.add_argument("--config")
            sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the network on a built dataset")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "evaluate a model on a split")
    sp.add_argument("--config")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--out")

    sp = add("predict", cmd_predict, "risk estimate for one image and disparity map")
    sp.add_argument("--model", required=True)
    sp.add_argument("--left", required=True)
    sp.add_argument("--disparity", required=True)

    sp = add("risk", cmd_risk, "risk label of a scene")
    sp.add_argument("--config")
    sp.add_argument("--scene", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    if args.threads < 1:
        print("riskcnn: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (RiskCnnError, ValueError, KeyError, OSError) as exc:
        print(f"riskcnn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
