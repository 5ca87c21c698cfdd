"""``hinspec`` command line: project, assess, combine, eval, pipeline (and synth).

Every command writes into a staging directory under the output directory and
moves its files into place only once it has succeeded, so a failed run leaves
no partial outputs behind.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import warnings

import numpy as np
import scipy

from . import __version__
from .assess import AssessConfig, InsufficientSpectrumError, assess_projections, write_spectrum_curves
from .combine import (
    AutoencoderConfig,
    TrainingDiverged,
    concat_embeddings,
    encode,
    group_norms,
    preprocess,
    read_embedding_tsv,
    save_model,
    train,
)
from .config import ConfigError, PipelineConfig, load_config, override
from .eval import class_links, classify, link_predict, random_label_baseline
from .hin import HINError, load_hin, load_labels
from .metagraph import (
    MetaGraphSyntaxError,
    parse_metagraph,
    project,
    read_metagraph_list,
    read_projected,
    write_projected,
)
from .spectral import ConvergenceError, EmptySpectrumError, read_spectrum, spectral_embedding, write_spectrum

log = logging.getLogger("hinspec")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
STAGES = ("project", "spectrum", "assess", "combine", "eval")


class MissingArtifact(FileNotFoundError):
    pass


def safe_name(metagraph: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in metagraph)


def sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Staged outputs of one invocation plus the manifest entries they produce."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.out_dir
        os.makedirs(self.out, exist_ok=True)
        self.staging = tempfile.mkdtemp(prefix=".staging-", dir=self.out)
        self.stages: dict[str, list[str]] = {}
        self.inputs: dict[str, str] = {}

    def write_path(self, rel: str) -> str:
        path = os.path.join(self.staging, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    def write_dir(self, rel: str) -> str:
        path = os.path.join(self.staging, rel)
        os.makedirs(path, exist_ok=True)
        return path

    def read_path(self, rel: str, producer: str) -> str:
        """Prefer this run's staged copy, then a committed one."""
        for base in (self.staging, self.out):
            path = os.path.join(base, rel)
            if os.path.exists(path):
                return path
        raise MissingArtifact(f"missing artifact {rel!r} in {self.out}; run `hinspec {producer}` first")

    def record(self, stage: str, rels: list[str]) -> None:
        self.stages.setdefault(stage, []).extend(rels)

    def input(self, key: str) -> str:
        path = self.cfg.path(key)
        if path is None:
            raise ConfigError(f"paths.{key} is required for this command")
        if not os.path.exists(path):
            raise MissingArtifact(f"input file {path} (paths.{key}) does not exist")
        self.inputs[key] = path
        return path

    def commit(self) -> None:
        for rels in self.stages.values():
            for rel in rels:
                dst = os.path.join(self.out, rel)
                os.makedirs(os.path.dirname(dst), exist_ok=True)
                os.replace(os.path.join(self.staging, rel), dst)
        self._write_manifest()
        self.abort()

    def abort(self) -> None:
        shutil.rmtree(self.staging, ignore_errors=True)

    def _write_manifest(self) -> None:
        path = os.path.join(self.out, "manifest.json")
        manifest = {}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                manifest = json.load(fh)
        stages = {s["stage"]: s for s in manifest.get("stages", [])}
        for stage, rels in self.stages.items():
            stages[stage] = {
                "stage": stage,
                "outputs": {rel: sha256(os.path.join(self.out, rel)) for rel in sorted(rels)},
            }
        inputs = manifest.get("inputs", {})
        for key, p in sorted(self.inputs.items()):
            inputs[key] = {"file": os.path.basename(p), "sha256": sha256(p)}
        cfg = self.cfg
        manifest = {
            "package": {"name": "hinspec", "version": __version__},
            "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__},
            "seeds": {"global": cfg.seed, "combine": cfg.stage_seed("combine"), "eval": cfg.stage_seed("eval")},
            "config": {k: v for k, v in cfg.snapshot().items() if k != "paths"},
            "inputs": dict(sorted(inputs.items())),
            "stages": [stages[s] for s in STAGES if s in stages],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _metagraph_names(run: Run) -> list[str]:
    names = read_metagraph_list(run.input("metagraphs"))
    if not names:
        raise HINError("the meta-graph list is empty")
    return names


def _load_network(run: Run):
    schema = run.input("schema") if run.cfg.path("schema") else None
    labels = run.input("labels") if run.cfg.path("labels") else None
    return load_hin(run.input("nodes"), run.input("edges"), schema, labels)


# -- commands ----------------------------------------------------------------


def cmd_project(run: Run) -> None:
    hin = _load_network(run)
    listing = []
    rels = []
    for expr in _metagraph_names(run):
        mg = parse_metagraph(expr, hin)
        pn = project(hin, mg)
        base = f"projected/{safe_name(mg.display_name)}"
        write_projected(pn, run.write_path(base + ".tsv"), run.write_path(base + ".json"))
        rels += [base + ".tsv", base + ".json"]
        listing.append({"metagraph": mg.display_name, "expression": expr, "files": base})
        log.info("projected %s: %d vertices, %d edges", mg.display_name, pn.n_vertices, pn.n_edges)
    _write_json(run.write_path("projected/index.json"), listing)
    run.record("project", rels + ["projected/index.json"])


def _assess_config(cfg: PipelineConfig) -> AssessConfig:
    sp, ac = cfg["spectral"], cfg["assess"]
    return AssessConfig(
        k=sp["k"],
        extra=sp["extra"],
        m=ac["m"],
        lambda_cap=ac["lambda_cap"],
        budget=ac["budget"],
        zero_tol=sp["zero_tol"],
        tol=sp["tol"],
        seed=cfg.seed,
        threads=cfg.effective_threads(),
    )


def cmd_assess(run: Run) -> None:
    with open(run.read_path("projected/index.json", "project"), encoding="utf-8") as fh:
        listing = json.load(fh)
    projections = [
        read_projected(run.read_path(e["files"] + ".tsv", "project"), run.read_path(e["files"] + ".json", "project"))
        for e in listing
    ]
    report = assess_projections(projections, _assess_config(run.cfg))
    spec_rels = []
    for name, s in report.spectra.items():
        base = f"spectra/{safe_name(name)}"
        write_spectrum(s, run.write_path(base + ".json"), run.write_path(base + ".bin"))
        spec_rels += [base + ".json", base + ".bin"]
    run.record("spectrum", spec_rels)
    report.write(run.write_path("assess_report.json"))
    curves = write_spectrum_curves(report, run.write_dir("curves"))
    run.record("assess", ["assess_report.json"] + [os.path.relpath(p, run.staging) for p in curves])
    log.info("ranking: %s", ", ".join(report.ranking))


def _load_assessment(run: Run):
    with open(run.read_path("assess_report.json", "assess"), encoding="utf-8") as fh:
        report = json.load(fh)
    spectra = {}
    for e in report["metagraphs"]:
        base = f"spectra/{safe_name(e['metagraph'])}"
        spectra[e["metagraph"]] = read_spectrum(
            run.read_path(base + ".json", "assess"), run.read_path(base + ".bin", "assess")
        )
    return report, spectra


def _embeddings(report, spectra, dims_mode: str):
    out = []
    for e in report["metagraphs"]:
        s = spectra[e["metagraph"]]
        dims = e["selected_dims"] if dims_mode == "selected" else None
        out.append(spectral_embedding(s, dims))
    return out


def _universe(report, spectra) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for e in report["metagraphs"]:
        s = spectra[e["metagraph"]]
        for v in s.all_vertex_ids or s.vertex_ids:
            seen.setdefault(v, None)
    return tuple(seen)


def cmd_combine(run: Run) -> None:
    cfg = run.cfg
    c = cfg["combine"]
    report, spectra = _load_assessment(run)
    embs = _embeddings(report, spectra, c["dims"])
    grouped = concat_embeddings(embs, _universe(report, spectra))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        data, stats = preprocess(grouped, c["preprocess"])
    D = data.data.shape[1]
    if c["Q"] >= D:
        raise ConfigError(f"combine.Q = {c['Q']} must be below the input width {D}")
    ae = AutoencoderConfig(
        encoding_dim=c["Q"],
        layers=c["P"],
        dropout=c["dropout"],
        slope=c["slope"],
        epochs=c["epochs"],
        batch_size=c["batch"],
        lr=c["lr"],
        loss=c["loss"],
        seed=cfg.stage_seed("combine"),
        smooth_eps=c["smooth_eps"],
        linear_output=c["linear_output"],
    )
    model = train(data, ae, stats)
    emb = encode(model, data)
    norms = group_norms(model, data)
    save_model(model, run.write_path("model.bin"))
    emb.write(run.write_path("embedding.tsv"))
    sidecar = {
        "dims": c["Q"],
        "n_vertices": len(emb.vertex_ids),
        "seed": ae.seed,
        "loss": ae.loss,
        "final_loss": model.history[-1][1],
        "groups": [{"metagraph": n, "start": s, "stop": e} for n, s, e in grouped.layout],
        "group_norms": norms,
        "selection_ranking": sorted(norms, key=lambda k: (norms[k], k)),
        "preprocessing": stats.to_json(),
    }
    _write_json(run.write_path("embedding.json"), sidecar)
    run.record("combine", ["model.bin", "embedding.tsv", "embedding.json"])
    log.info("combined %d groups into %d dims; final loss %.6g", len(grouped.groups), c["Q"], model.history[-1][1])


def cmd_eval(run: Run) -> None:
    cfg = run.cfg
    e = cfg["eval"]
    seed = cfg.stage_seed("eval")
    threads = cfg.effective_threads()
    ids, rows = read_embedding_tsv(run.read_path("embedding.tsv", "combine"))
    labels = load_labels(run.input("labels"))
    kw = dict(split_ratio=e["split"], repeats=e["repeats"], seed=seed, threads=threads)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        combined = classify((ids, rows), labels, **kw)
        known = set(ids)
        links = [p for p in class_links(labels, e["link_cap"], seed) if p[0] in known and p[1] in known]
        lp = link_predict((ids, rows), links, e["K"])
        single = {}
        try:
            report, spectra = _load_assessment(run)
        except MissingArtifact:
            report = None
        if report is not None:
            universe = _universe(report, spectra)
            for emb in _embeddings(report, spectra, cfg["combine"]["dims"]):
                if emb.k:
                    single[emb.metagraph] = classify(concat_embeddings([emb], universe), labels, **kw).to_json()
        baseline = random_label_baseline(labels, **kw)
    results = {
        "classification": combined.to_json(),
        "link_prediction": lp.to_json(),
        "single_metagraph": single,
        "random_baseline": baseline.to_json(),
    }
    _write_json(run.write_path("eval.json"), results)
    combined.write(run.write_path("eval_classification.json"), run.write_path("eval_repeats.tsv"))
    run.record("eval", ["eval.json", "eval_classification.json", "eval_repeats.tsv"])
    log.info("macro-F1 %.4f (random baseline %.4f)", combined.mean("macro_f1"), baseline.mean("macro_f1"))


def cmd_pipeline(run: Run) -> None:
    cmd_project(run)
    cmd_assess(run)
    cmd_combine(run)
    cmd_eval(run)


COMMANDS = {
    "project": cmd_project,
    "assess": cmd_assess,
    "combine": cmd_combine,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


HELP = {
    "project": "project the network along every listed meta-graph",
    "assess": "compute spectra and rank the projections",
    "combine": "train the autoencoder on the selected dimensions",
    "eval": "score the combined embedding on classification and link prediction",
    "pipeline": "run project, assess, combine and eval in order",
}


def cmd_synth(args) -> None:
    from .synthetic import planted_hin

    out = args.out or "synthetic"
    n = args.authors
    paths = planted_hin(n_authors=n, n_papers=2 * n, n_terms=n, n_keywords=3 * n // 4, seed=args.seed or 0).write(out)
    for k, p in paths.items():
        print(f"{k}\t{p}")


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="override every stage seed")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--out", help="output directory (overrides paths.out)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="hinspec", description="Meta-graph spectral embedding of heterogeneous networks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        sub.add_parser(name, parents=[common], help=text)
    synth = sub.add_parser("synth", parents=[common], help="write a planted synthetic network")
    synth.add_argument("--authors", type=int, default=800)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (ConvergenceError, TrainingDiverged, InsufficientSpectrumError, FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (HINError, MetaGraphSyntaxError, EmptySpectrumError, OSError, ValueError, KeyError)):
        return EXIT_DATA
    return EXIT_NUMERIC if isinstance(exc, ArithmeticError) else EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "synth":
        cmd_synth(args)
        return EXIT_OK
    run = None
    try:
        cfg = override(load_config(args.config), args.seed, args.threads, args.out)
        run = Run(cfg)
        COMMANDS[args.command](run)
        run.commit()
    except Exception as exc:  # mapped to documented exit codes
        if run is not None:
            run.abort()
        code = _exit_code(exc)
        print(f"hinspec {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
