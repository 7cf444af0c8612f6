"""Command-line entry point: ``cbldm <command> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from ..diffusion import SkipPlan, tune_skip
from ..geomrecover import recover_coords
from ..graphrep import symmetrize
from ..pdfsim import damping_envelope, pdf_from_structure
from ..structgen import AtomCloud, DatasetSpec, generate_dataset
from . import train as T
from .checkpoint import CheckpointError
from .data import generate_pdfs, load_training_set
from .evaluate import evaluate_dirs
from .io import read_pdf, write_pdf, write_xyz
from .predict import AllCandidatesDroppedError, Predictor, tune_evaluator
from .profiles import ProfileError, load_profile

log = logging.getLogger("cbldm")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors as a single diagnostic line."""

    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def read_plan(path):
    kv = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line and not line.lstrip().startswith("#"):
                k, v = line.split("=", 1)
                kv[k.strip()] = int(v)
    if "t1" not in kv or "t2" not in kv:
        raise CliError(f"{path}: plan file needs t1= and t2= lines")
    return SkipPlan(kv["t1"], kv["t2"])


def write_plan(path, plan: SkipPlan):
    with open(path, "w") as fh:
        fh.write(f"t1={plan.t1}\nt2={plan.t2}\n")


def _profile(args):
    return load_profile(args.profile, args.config)


def _training_data(args, profile):
    split = None if args.split == "all" else args.split
    data = load_training_set(args.data, profile, split=split)
    if args.limit and args.limit < len(data):
        # evenly spaced, so a small subset still covers every kind
        data = data.subset(sorted(set(np.linspace(0, len(data) - 1, args.limit).round().astype(int))))
    return data


def _pdf_inputs(path):
    if os.path.isdir(path):
        sub = os.path.join(path, "pdf")
        path = sub if os.path.isdir(sub) else path
        files = sorted(os.path.join(path, f) for f in os.listdir(path) if f.endswith(".gr"))
        if not files:
            raise CliError(f"{path}: no .gr files")
        return files
    return [path]


# ------------------------------------------------------------------ commands

def cmd_gen_structures(args):
    spec = DatasetSpec.from_file(args.spec)
    if args.seed is not None:
        spec = DatasetSpec(**{**spec.__dict__, "seed": args.seed})
    records = generate_dataset(spec, args.out)
    print(f"wrote {len(records)} structures to {args.out}")


def cmd_gen_pdf(args):
    n = generate_pdfs(args.input, _profile(args), 42 if args.seed is None else args.seed)
    print(f"wrote {n} PDFs to {os.path.join(args.input, 'pdf')}")


def _stage_input(args, stage):
    path = getattr(args, stage) or os.path.join(os.path.dirname(os.path.abspath(args.out)), f"{stage}.ckpt")
    if not os.path.exists(path):
        raise T.StageOrderError(f"stage order: {stage} checkpoint {path} not found; train {stage} first")
    return path


def cmd_train(args):
    profile = _profile(args)
    seed = args.seed or 0
    data = _training_data(args, profile)
    if args.stage == "cvae":
        model, meta = T.train_cvae(profile, data, seed)
    else:
        cvae, cmeta = T.load_stage(_stage_input(args, "cvae"), "cvae", profile, seed)
        if args.stage == "xvae":
            model, meta = T.train_xvae(profile, data, cvae, seed, cvae_meta=cmeta)
        else:
            xvae, xmeta = T.load_stage(_stage_input(args, "xvae"), "xvae", profile, seed)
            model, meta = T.train_ddm(profile, data, cvae, xvae, seed, xvae_meta=xmeta)
    T.save_stage(args.out, model, meta, profile)
    print(f"{args.stage}: " + " ".join(f"{k}={v:.4g}" for k, v in meta.items()) + f" -> {args.out}")


def cmd_tune_skip(args):
    profile = _profile(args)
    pred = Predictor.from_checkpoints(args.ckpt, profile)
    data = _training_data(args, profile)
    grid = profile.with_(skip_grid=args.grid).grid() if args.grid else profile.grid()
    k = args.k if args.k is not None else profile.tune_k
    evaluate = tune_evaluator(pred, data.pdfs, k, args.seed or 0)
    best, rows = tune_skip(evaluate, grid, profile.T, profile.slack, args.report)
    write_plan(args.out, best)
    print(f"selected T1={best.t1} T2={best.t2} from {len(rows)} plans -> {args.out}")


def cmd_predict(args):
    profile = _profile(args)
    pred = Predictor.from_checkpoints(args.ckpt, profile)
    plan = read_plan(args.plan) if args.plan else SkipPlan(profile.T, profile.T)
    os.makedirs(args.out, exist_ok=True)
    r = profile.debye().r_grid()
    failed = []
    for path in _pdf_inputs(args.pdf):
        stem = os.path.splitext(os.path.basename(path))[0]
        _, g, head = read_pdf(path, r)
        try:
            report = pred.predict(g, args.k, plan, args.seed or 0)
        except AllCandidatesDroppedError as exc:
            with open(os.path.join(args.out, stem + ".tsv"), "w") as fh:
                fh.write("rank\tindex\tn_atoms\trwp\tq_damp\tlaplacian_mse\n")
                fh.write(f"# all dropped: {exc}\n")
            print(f"{stem}: every candidate dropped")
            failed.append(stem)
            continue
        with open(os.path.join(args.out, stem + ".tsv"), "w") as fh:
            fh.write("rank\tindex\tn_atoms\trwp\tq_damp\tlaplacian_mse\n")
            for rank, (i, n, score, q, mse) in enumerate(report.rows()):
                fh.write(f"{rank}\t{i}\t{n}\t{score:.6g}\t{q:.4f}\t{mse:.3e}\n")
            for i, reason in report.dropped:
                fh.write(f"# dropped {i}: {reason}\n")
        for rank, c in enumerate(report.candidates):
            write_xyz(os.path.join(args.out, f"{stem}_c{rank}.xyz"), c.cloud,
                      f"kind=predicted rank={rank} rwp={c.rwp:.6g}")
        if report.best is not None:
            best = report.best
            gb = pdf_from_structure(best.cloud, profile.debye(0.0)).g * damping_envelope(r, best.q_damp)
            gb = gb / max(np.max(np.abs(gb)), 1e-300)
            write_pdf(os.path.join(args.out, stem + ".gr"), r, gb,
                      {"kind": head.get("kind", "UNK"), "natoms": best.n_atoms, "q_damp": f"{best.q_damp:.4f}",
                       "rwp": f"{best.rwp:.6g}", "seconds": f"{report.seconds:.3f}", "source": path})
            print(f"{stem}: best R_wp {best.rwp:.4f} ({best.n_atoms} atoms, "
                  f"{len(report.candidates)} kept, {len(report.dropped)} dropped)")
        else:
            print(f"{stem}: k=0, nothing to do")
    if failed:
        raise AllCandidatesDroppedError(f"no usable candidate for {len(failed)} curve(s): {', '.join(failed)}")


def cmd_recover(args):
    profile = _profile(args)
    if args.laplacian.endswith(".npy"):
        mat = np.load(args.laplacian)
    else:
        mat = np.loadtxt(args.laplacian)
    sigma = args.sigma if args.sigma is not None else profile.sigma
    img = symmetrize(mat, sigma, args.norm)
    fit = recover_coords(img)
    write_xyz(args.out, AtomCloud(fit.coords - fit.coords.mean(0), "recovered", 0.0),
              f"kind=recovered laplacian_mse={fit.final_mse:.3e}")
    print(f"recovered {img.n_atoms} atoms, Laplacian MSE {fit.final_mse:.3e} -> {args.out}")


def cmd_eval(args):
    t0 = time.time()
    rep = evaluate_dirs(args.pred, args.truth)
    rep.seconds = time.time() - t0
    rep.write(args.report)
    meds = rep.medians()
    print(" ".join(f"{k}={v:.4f}" for k, v in meds.items()) + f" -> {args.report}")


# ------------------------------------------------------------------ parser

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--profile", default="desk")
    common.add_argument("--config", default=None, help="INI file with [profile.<name>] sections")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cbldm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen", help="generate structures or PDFs")
    gsub = gen.add_subparsers(dest="what", required=True, parser_class=_Parser)
    gs = gsub.add_parser("structures", parents=[common])
    gs.add_argument("--spec", required=True)
    gs.add_argument("--out", required=True)
    gs.set_defaults(func=cmd_gen_structures)
    gp = gsub.add_parser("pdf", parents=[common])
    gp.add_argument("--in", dest="input", required=True)
    gp.set_defaults(func=cmd_gen_pdf)

    tr = sub.add_parser("train", parents=[common], help="train one stage")
    tr.add_argument("stage", choices=["cvae", "xvae", "ddm"])
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--cvae", default=None, help="cvae checkpoint (default: next to --out)")
    tr.add_argument("--xvae", default=None, help="xvae checkpoint (default: next to --out)")
    tr.add_argument("--split", default="train", help='manifest split, or "all"')
    tr.add_argument("--limit", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    ts = sub.add_parser("tune-skip", parents=[common], help="choose the skip plan")
    ts.add_argument("--grid", default=None, help='"T1:T2,..."; default from the profile')
    ts.add_argument("--ckpt", required=True)
    ts.add_argument("--data", required=True)
    ts.add_argument("--out", required=True, help="plan file to write")
    ts.add_argument("--report", default=None)
    ts.add_argument("-k", type=int, default=None)
    ts.add_argument("--split", default="train", help='manifest split, or "all"')
    ts.add_argument("--limit", type=int, default=0)
    ts.set_defaults(func=cmd_tune_skip)

    pr = sub.add_parser("predict", parents=[common], help="structures from PDFs")
    pr.add_argument("--pdf", required=True, help="a .gr file or a directory of them")
    pr.add_argument("-k", type=int, default=8)
    pr.add_argument("--plan", default=None)
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    rc = sub.add_parser("recover", parents=[common], help="coordinates from a Laplacian")
    rc.add_argument("--laplacian", required=True, help="text or .npy matrix")
    rc.add_argument("--out", required=True)
    rc.add_argument("--sigma", type=float, default=None)
    rc.add_argument("--norm", type=float, default=1.0, help="normalisation the matrix was divided by")
    rc.set_defaults(func=cmd_recover)

    ev = sub.add_parser("eval", parents=[common], help="R_wp report")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--truth", required=True)
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, CheckpointError, ProfileError, T.StageOrderError, FileNotFoundError,
            ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"cbldm: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
