"""Command-line entry point: ``binfisher <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bmm, fisher
from . import io as bio
from .bitdesc import FeatureSet
from .bmm import BmmModel, EmConfig, fit_em
from .bovw import DEFAULT_K, encode_bow, train_codebook
from .errors import BinFisherError, DimensionError, FormatError, ValidationError
from .evaluation import RetrievalIndex, evaluate, rank
from .normalize import DEFAULT_ALPHA, SCHEMES
from .pipeline import FisherEncoder
from .synth import SynthConfig, synth_dataset

log = logging.getLogger("binfisher")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_NUMERIC = 5


class NumericFailure(BinFisherError):
    """A numeric self-check did not pass."""


@dataclass
class RunConfig:
    subcommand: str
    components: int = 32
    bits: int | None = None
    norm: str = "intra"
    alpha: float = DEFAULT_ALPHA
    approx: bool = False
    seed: int = 0
    max_iters: int = 100
    rel_tol: float = 1e-5
    K: int = DEFAULT_K
    threads: int | None = None
    paths: dict = field(default_factory=dict)

    def validate(self):
        if self.components < 1:
            raise ValidationError("components", "must be >= 1")
        if self.bits is not None and self.bits < 1:
            raise ValidationError("bits", "must be >= 1")
        if self.norm not in SCHEMES:
            raise ValidationError("norm", f"expected one of {'|'.join(SCHEMES)}")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha", "must be in (0, 1]")
        if self.max_iters < 1:
            raise ValidationError("max_iters", "must be >= 1")
        if self.rel_tol < 0:
            raise ValidationError("rel_tol", "must be >= 0")
        if self.K < 1:
            raise ValidationError("K", "must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ValidationError("threads", "must be >= 1")


def _run_config(args) -> RunConfig:
    paths = {k: (str(v) if not isinstance(v, list) else [str(x) for x in v])
             for k, v in vars(args).items()
             if v is not None and k in ("features", "manifest", "model", "codebook", "vectors",
                                        "index", "out", "hex", "records")}
    return RunConfig(
        subcommand=args.command,
        components=getattr(args, "components", 32),
        bits=getattr(args, "bits", None),
        norm=getattr(args, "norm", "intra"),
        alpha=getattr(args, "alpha", DEFAULT_ALPHA),
        approx=getattr(args, "approx", False),
        seed=getattr(args, "seed", 0),
        max_iters=getattr(args, "max_iters", 100),
        rel_tol=getattr(args, "rel_tol", 1e-5),
        K=getattr(args, "K", DEFAULT_K),
        threads=args.threads,
        paths=paths,
    )


# feature loading helpers ----------------------------------------------------------


def _load_feature_inputs(args, roles=("reference",)) -> list[tuple[str, FeatureSet]]:
    """(id, FeatureSet) pairs from ``--features`` files or a ``--manifest``."""
    if getattr(args, "manifest", None):
        m = bio.load_manifest(args.manifest)
        return [(e.id, bio.read_features(m.resolve(e))) for e in m.entries if e.role in roles]
    if not args.features:
        raise ValidationError("features", "give --features or --manifest")
    return [(Path(p).stem, bio.read_features(p)) for p in args.features]


def _pooled(pairs) -> FeatureSet:
    sets = [fs for _, fs in pairs]
    out = sets[0]
    for fs in sets[1:]:
        out = out.concat(fs)
    return out


# subcommands --------------------------------------------------------------------


def cmd_synth(args, cfg):
    ds = synth_dataset(SynthConfig(
        n_classes=args.classes, refs_per_class=args.refs, queries_per_class=args.queries,
        T=args.T, D=args.D, flip_rate=args.flip_rate, seed=args.seed, n_distractors=args.distractors))
    out = Path(args.out)
    (out / "features").mkdir(parents=True, exist_ok=True)
    entries = []
    for role, sets in (("reference", ds.references), ("query", ds.queries), ("distractor", ds.distractors)):
        for i, fs in sets.items():
            rel = f"features/{i}.bfv"
            bio.write_features(out / rel, fs)
            entries.append(bio.ManifestEntry(i, ds.classes[i], rel, role))
    bio.save_manifest(out / "manifest.json", bio.Manifest(entries, ds.truth))
    print(f"wrote {len(entries)} feature files and {out / 'manifest.json'}")


def cmd_convert(args, cfg):
    fs = bio.read_hex_lines(args.hex, args.dims)
    bio.write_features(args.out, fs)
    print(f"wrote {fs.T} descriptors of {fs.D} bits to {args.out}")


def cmd_train(args, cfg):
    data = _pooled(_load_feature_inputs(args))
    if cfg.bits is not None:
        data = data.truncate(cfg.bits)
    em = EmConfig(max_iters=cfg.max_iters, rel_tol=cfg.rel_tol, seed=cfg.seed, eps=args.eps)
    model, report = fit_em(data, cfg.components, em)
    bio.save_model(args.out, model)
    trace = report.log_likelihood_trace
    print(f"trained N={model.N} D={model.D} on T={data.T} descriptors")
    print(f"iterations {report.iterations_run}  converged {report.converged}  reseeds {len(report.reseed_events)}")
    print(f"mean log-likelihood {trace[0]:.6f} -> {trace[-1]:.6f}")
    print(f"model written to {args.out}")


def cmd_codebook(args, cfg):
    data = _pooled(_load_feature_inputs(args))
    if cfg.bits is not None:
        data = data.truncate(cfg.bits)
    cb = train_codebook(data, cfg.K, seed=cfg.seed, max_iters=cfg.max_iters)
    bio.save_codebook(args.out, cb)
    print(f"trained K={cb.K} centroids on T={data.T} descriptors; written to {args.out}")


def cmd_encode(args, cfg):
    if bool(args.model) == bool(args.codebook):
        raise ValidationError("model", "give exactly one of --model or --codebook")
    pairs = _load_feature_inputs(args, roles=bio.ROLES)
    if args.model:
        model = bio.load_model(args.model)
        if cfg.bits is not None and cfg.bits > model.D:
            raise DimensionError(f"--bits {cfg.bits} exceeds model D={model.D}")
        enc = FisherEncoder(model, cfg.norm, cfg.alpha, cfg.approx, cfg.bits, info_t=args.info_t)
    else:
        cb = bio.load_codebook(args.codebook)
        enc = lambda fs: encode_bow(cb, fs.truncate(cb.D) if fs.D > cb.D else fs)  # noqa: E731
    ids, vecs = [], []
    for i, fs in pairs:
        ids.append(i)
        vecs.append(enc(fs))
    bio.save_vectors(args.out, ids, vecs)
    zero = sum(1 for v in vecs if v.zero_blocks)
    print(f"encoded {len(vecs)} vectors of length {len(vecs[0].values)} ({vecs[0].norm_state}); written to {args.out}")
    if zero:
        print(f"note: {zero} vectors had all-zero blocks left unnormalized")


def cmd_index(args, cfg):
    parts = [bio.load_vectors(p) for p in args.vectors]
    if args.manifest:
        m = bio.load_manifest(args.manifest, check_paths=False)
        keep = {e.id for e in m.entries if e.role in ("reference", "distractor")}
    else:
        keep = None
    ids, rows, states, blocks = [], [], set(), set()
    for part in parts:
        states.add(part.norm_state)
        blocks.add(part.n_blocks)
        for i, row in zip(part.ids, part.vectors):
            if keep is None or i in keep:
                ids.append(i)
                rows.append(row)
    if len(states) > 1:
        raise ValidationError("norm_state", f"mixed norm states: {sorted(states)}")
    if len(blocks) > 1 or len({len(r) for r in rows}) > 1:
        raise DimensionError("vector files have different layouts")
    if not rows:
        raise ValidationError("vectors", "nothing to index")
    index = RetrievalIndex(tuple(ids), np.stack(rows), states.pop(), blocks.pop())
    bio.save_index(args.out, index)
    print(f"indexed {len(index)} vectors of length {index.dim}; written to {args.out}")


def cmd_query(args, cfg):
    index = bio.load_vectors(args.index)
    qs = bio.load_vectors(args.vectors)
    if qs.norm_state != index.norm_state:
        raise ValidationError("norm_state", f"query is {qs.norm_state}, index is {index.norm_state}")
    qids = [args.id] if args.id else list(qs.ids)
    for qid in qids:
        if qid not in qs.ids:
            raise ValidationError("id", f"{qid!r} not found in {args.vectors}")
        print(f"query {qid}")
        for r, (i, dist) in enumerate(rank(index, qs.vector(qid))[: args.top], start=1):
            print(f"  {r:4d}  {i}  {dist:.6f}")


def cmd_eval(args, cfg):
    m = bio.load_manifest(args.manifest, check_paths=False)
    vecs = bio.load_vectors(args.vectors)
    have = set(vecs.ids)
    db_ids = [e.id for e in m.entries if e.role in ("reference", "distractor")]
    missing = [i for i in db_ids if i not in have]
    if missing:
        raise ValidationError("vectors", f"{len(missing)} database images have no vector, e.g. {missing[0]!r}")
    index = vecs.subset(db_ids)
    queries = [(e.id, vecs.vector(e.id)) for e in m.by_role("query") if e.id in have]
    if not queries:
        raise ValidationError("vectors", "no query vectors found")
    res = evaluate(index, queries, m.truth, m.classes)
    sys.stdout.write(res.to_table())
    if args.records:
        Path(args.records).write_text(res.to_records())
        print(f"records written to {args.records}")


def _random_model(n: int, d: int, seed: int) -> BmmModel:
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(n))
    return BmmModel.clamped(w / w.sum(), rng.uniform(0.05, 0.95, size=(n, d)), seed=seed)


def _model_arg(args) -> BmmModel:
    if args.model:
        return bio.load_model(args.model)
    return _random_model(args.components, args.D, args.seed)


def cmd_bench(args, cfg):
    model = _model_arg(args)
    rng = np.random.default_rng(cfg.seed)
    bits, _ = model.sample(args.T, rng)
    X = FeatureSet.from_bits(bits)
    codebook = fisher.representative_codebook(model)

    def timed(fn):
        fn()  # warm-up (JIT compile, caches)
        out = []
        for _ in range(args.reps):
            t0 = time.perf_counter()
            fn()
            out.append(time.perf_counter() - t0)
        return statistics.median(out)

    t_exact = timed(lambda: fisher.encode(model, X))
    t_approx = timed(lambda: fisher.encode_approx(model, codebook, X))
    print(f"N={model.N} D={model.D} T={X.T} reps={args.reps}")
    print(f"{'method':<8} {'median ms':>10}")
    print(f"{'exact':<8} {t_exact * 1e3:>10.3f}")
    print(f"{'approx':<8} {t_approx * 1e3:>10.3f}")
    print(f"ratio exact/approx {t_exact / t_approx:.2f}")


def gradient_check(model: BmmModel, X: FeatureSet, entries, h: float = 1e-6) -> float:
    """Max over ``entries`` of |central difference - analytic| / max |analytic|."""
    analytic = fisher.fisher_score(model, X).reshape(model.N, model.D)
    eps = min(model.eps, h / 10)
    errs, scale = [], 0.0
    for i, d in entries:
        fd = []
        for sgn in (1, -1):
            mu = model.mu.copy()
            mu[i, d] += sgn * h
            fd.append(bmm.mean_log_likelihood(BmmModel(model.weights, mu, eps=eps), X))
        errs.append(abs((fd[0] - fd[1]) / (2 * h) - analytic[i, d]))
        scale = max(scale, abs(analytic[i, d]))
    return max(errs) / scale if scale > 0 else max(errs)


def cmd_verify(args, cfg):
    model = _model_arg(args)
    rng = np.random.default_rng(cfg.seed)
    ok = True
    print(f"verifying model N={model.N} D={model.D}")

    # gradient check on a random subset of (i, d), skipping entries at the clamp
    bits, _ = model.sample(16, rng)
    X = FeatureSet.from_bits(bits)
    free = np.argwhere((model.mu > model.eps + 1e-5) & (model.mu < 1 - model.eps - 1e-5))
    pick = free[rng.permutation(len(free))[:24]]
    err = gradient_check(model, X, [tuple(p) for p in pick])
    passed = err <= 1e-5
    ok &= passed
    print(f"gradient check ({len(pick)} entries): max rel err {err:.2e}  {'PASS' if passed else 'FAIL'}")

    # enumeration oracle on at most the first 10 bits
    sub = model if model.D <= 10 else model.truncate(10)
    print(f"enumeration over {2 ** sub.D} bit vectors (first {sub.D} bits):")
    print(f"  {'i':>4} {'d':>3} {'enum x_d=1':>12} {'w_i*mu_id':>12} {'printed rhs':>12} {'enum x_d=0':>12} {'printed rhs':>12}")
    worst = 0.0
    for i in range(min(sub.N, 4)):
        for d in range(min(sub.D, 2)):
            r = fisher.integral_identity_oracle(sub, i, d)
            target1 = sub.weights[i] * sub.mu[i, d]
            target0 = sub.weights[i] * (1 - sub.mu[i, d])
            worst = max(worst, abs(r.enumerated_bit1 - target1), abs(r.enumerated_bit0 - target0))
            print(f"  {i:>4} {d:>3} {r.enumerated_bit1:>12.6g} {target1:>12.6g} {r.printed_rhs_bit1:>12.6g} "
                  f"{r.enumerated_bit0:>12.6g} {r.printed_rhs_bit0:>12.6g}")
    passed = worst <= 1e-12
    ok &= passed
    print(f"enumerated mass vs w_i*mu_id: max abs err {worst:.2e}  {'PASS' if passed else 'FAIL'}")

    # Monte-Carlo Fisher information vs the closed form (report only)
    info = fisher.fisher_information_unit(model)
    print("Fisher information, Monte-Carlo vs closed form (T=1):")
    for i, d in [(0, 0), (model.N - 1, model.D - 1)]:
        est, se = fisher.fisher_information_empirical(model, i, d, 20000, seed=cfg.seed, return_stderr=True)
        print(f"  ({i},{d}) mc {est:.6g} +- {se:.2g}  closed form {info[i, d]:.6g}")

    bits, _ = model.sample(args.T, rng)
    rep = fisher.posterior_peakedness(model, FeatureSet.from_bits(bits), bins=10)
    print(f"peakedness on {args.T} sampled descriptors; argmin-Hamming == argmax-posterior: {rep.agreement:.3f}")
    for lo, hi, c in zip(rep.edges[:-1], rep.edges[1:], rep.counts):
        print(f"  max gamma in [{lo:.1f}, {hi:.1f}{']' if hi == 1 else ')'} {c:6d}")
    if not ok:
        raise NumericFailure("verification failed")
    print("verify: PASS")


# argument parsing ----------------------------------------------------------------


def _add_em(p):
    p.add_argument("-N", "--components", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--rel-tol", type=float, default=1e-5)
    p.add_argument("--eps", type=float, default=bmm.DEFAULT_EPS)


def _add_inputs(p):
    p.add_argument("--features", nargs="+", help="feature files (.bfv)")
    p.add_argument("--manifest", help="dataset manifest; selects its images instead of --features")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="binfisher", description=__doc__)
    ap.add_argument("--threads", type=int, help="cap on worker threads")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--refs", type=int, default=12)
    p.add_argument("--queries", type=int, default=4)
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--D", type=int, default=64)
    p.add_argument("--flip-rate", type=float, default=0.05)
    p.add_argument("--distractors", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("convert", help="hex-lines text to a feature file")
    p.add_argument("--hex", required=True)
    p.add_argument("--dims", type=int, required=True)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("train", help="fit a Bernoulli mixture by EM")
    _add_inputs(p)
    _add_em(p)
    p.add_argument("--bits", type=int)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("codebook", help="train a k-majority codebook")
    _add_inputs(p)
    p.add_argument("-K", type=int, default=DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--bits", type=int)
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("encode", help="Fisher vectors (or BoBW histograms)")
    _add_inputs(p)
    p.add_argument("--model")
    p.add_argument("--codebook")
    p.add_argument("--norm", default="intra", choices=SCHEMES)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--approx", action="store_true")
    p.add_argument("--bits", type=int)
    p.add_argument("--info-t", default="image", choices=("image", "unit"))
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("index", help="merge vector files into one database")
    p.add_argument("--vectors", nargs="+", required=True)
    p.add_argument("--manifest", help="keep only reference and distractor ids")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("query", help="rank an index against query vectors")
    p.add_argument("--index", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--id")
    p.add_argument("--top", type=int, default=10)

    p = sub.add_parser("eval", help="MAP of a vectors file under a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--records", help="also write one JSON record per query here")

    for name, hlp in (("bench", "time exact vs approximate encoding"),
                      ("verify", "numeric self-checks of a model")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--model", help="model file; omit for a random model")
        p.add_argument("-N", "--components", type=int, default=512 if name == "bench" else 8)
        p.add_argument("--D", type=int, default=256 if name == "bench" else 10)
        p.add_argument("--T", type=int, default=900)
        p.add_argument("--seed", type=int, default=0)
        if name == "bench":
            p.add_argument("--reps", type=int, default=20)
    return ap


COMMANDS = {
    "synth": cmd_synth, "convert": cmd_convert, "train": cmd_train, "codebook": cmd_codebook,
    "encode": cmd_encode, "index": cmd_index, "query": cmd_query, "eval": cmd_eval,
    "bench": cmd_bench, "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        cfg.validate()
        print("# config " + json.dumps(asdict(cfg), sort_keys=True))
        if cfg.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=cfg.threads):
                COMMANDS[args.command](args, cfg)
        else:
            COMMANDS[args.command](args, cfg)
    except NumericFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, DimensionError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
