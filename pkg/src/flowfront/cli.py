"""Command-line entry point.

Every subcommand accepts ``--config``, ``--preset``, ``--seed``,
``--override section.key=value`` (repeatable) and ``--out-dir``.  The
resolved configuration and seed are logged before any work starts.  Exit
status is 0 on success, 1 on domain errors and 2 on usage errors.
Verbosity comes from the ``RFK_LOG`` environment variable (a level name
such as ``DEBUG`` or ``WARNING``; default ``INFO``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import trainer
from .asr import Vocabulary
from .autodiff import Tensor, checkpoint
from .config import PRESETS, Config, dump_toml, resolve
from .datasim import Utterance, build_corpus, load_audio, read_manifest, write_manifest
from .dsp import Waveform, istft, write_wav
from .errors import ConfigurationError, FlowfrontError
from .scoring import error_rate, sdr, tokens

log = logging.getLogger("flowfront")

MODEL_FILE = "model.rfk"
FLOW_FILE = "flow.rfk"


class UsageError(Exception):
    """Bad invocation detected after argument parsing (exit status 2)."""


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, _value):
        pass


def setup_logging() -> None:
    level = os.environ.get("RFK_LOG", "INFO").upper()
    numeric = logging.getLevelName(level) if not level.isdigit() else int(level)
    if not isinstance(numeric, int):
        numeric = logging.INFO
    log.setLevel(numeric)
    if not any(isinstance(h, _StderrHandler) for h in log.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)


# -- argument parsing ----------------------------------------------------------


def common_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML file layered over the preset")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="built-in defaults (default: desk)")
    p.add_argument("--seed", type=int, help="overrides trainer.seed and the corpus seed")
    p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="dotted-key override, repeatable; highest precedence")
    p.add_argument("--out-dir", default=".", help="directory for outputs (default: current directory)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowfront", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = [common_flags()]

    sub.add_parser("simulate", parents=common, help="write the synthetic corpus and manifest")

    p = sub.add_parser("pretrain-flow", parents=common, help="fit the density estimator on clean speech")
    p.add_argument("--steps", type=int, help="step budget (default: trainer.flow_pretrain_steps)")

    p = sub.add_parser("train", parents=common, help="joint training; streams step reports as JSON lines")
    p.add_argument("--baseline", action="store_true", help="ASR objective only (no density estimator)")
    p.add_argument("--init-flow", help="warm-start the density estimator from a pretrain-flow checkpoint")
    p.add_argument("--audit", action="store_true", help="add parameter checksums to every step report")

    for name, text in (
        ("enhance", "beamform multi-channel utterances to mono WAVs"),
        ("decode", "transcribe utterances to a TSV"),
        ("likelihood", "per-utterance generative loss as a TSV"),
    ):
        p = sub.add_parser(name, parents=common, help=text)
        p.add_argument("--model", required=True, help="trained model checkpoint")
        p.add_argument("--manifest", required=True, help="corpus manifest")
        p.add_argument("--split", default="eval", help="manifest split to process (default: eval)")
        if name == "enhance":
            p.add_argument("--diagnostics", action="store_true", help="also write masks, PSD summaries and weights")

    p = sub.add_parser("score", parents=common, help="error rates or SDR against a reference manifest")
    p.add_argument("--ref", required=True, help="reference manifest")
    p.add_argument("--hyp", required=True, help="hypothesis TSV (utt_id, text) or a manifest of estimate WAVs")
    p.add_argument("--unit", choices=("char", "word"), default="char")
    p.add_argument("--audio", action="store_true", help="score WAV pairs by SDR instead of transcripts")

    sub.add_parser("experiment", parents=common, help="baseline vs proposed comparison grid")
    return parser


def load_config(args) -> Config:
    if args.config is not None and not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    try:
        return resolve(args.preset, args.config, args.override, args.seed)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc


def model_config(args, model_path) -> Config:
    """Prefer the configuration saved next to a checkpoint unless one is given."""
    saved = Path(model_path).parent / "config.toml"
    if args.config is None and saved.is_file():
        args = argparse.Namespace(**{**vars(args), "config": str(saved)})
    return load_config(args)


def out_dir(args) -> Path:
    path = Path(args.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_tsv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def select(manifest, split: str) -> list[Utterance]:
    utts = [u for u in read_manifest(manifest) if u.split == split]
    if not utts:
        raise FlowfrontError(f"{manifest}: no utterances in split {split!r}")
    return utts


# -- subcommands -----------------------------------------------------------------


def cmd_simulate(args, cfg: Config) -> None:
    seed = cfg.trainer.seed if args.seed is None else args.seed
    manifest = build_corpus(out_dir(args), cfg.corpus, cfg.mix, cfg.synth, seed)
    log.info("wrote %s", manifest)
    print(manifest)


def cmd_pretrain_flow(args, cfg: Config) -> None:
    tcfg = cfg.trainer
    steps = tcfg.flow_pretrain_steps if args.steps is None else args.steps
    vocab = trainer.vocabulary(cfg)
    clean_path, _ = trainer.resolve_manifests(replace(tcfg, noisy_manifest=tcfg.noisy_manifest or "-"))
    clean = trainer.load_examples(clean_path, tcfg.clean_split, cfg, vocab)
    if not clean:
        raise FlowfrontError(f"{clean_path}: no utterances in split {tcfg.clean_split!r}")
    norm = trainer.FeatureNorm.fit([ex.channel_mels[0] for ex in clean])
    models = trainer.build_models(cfg, vocab, norm=norm)
    mels = [norm(ex.channel_mels[0]) for ex in clean]
    labels = [ex.label for ex in clean] if models.conditioned else None
    initial = trainer.mean_nll(models.de, mels, labels)
    history = trainer.pretrain_density(models.de, mels, labels, steps, tcfg.flow_lr,
                                       trainer.stream(tcfg.seed, "pretrain"), tcfg.clip_norm)
    final = trainer.mean_nll(models.de, mels, labels)
    out = out_dir(args)
    state = {f"de.{k}": v for k, v in models.de.state_dict().items()}
    state.update(norm.state())
    checkpoint.save(out / FLOW_FILE, state)
    (out / "config.toml").write_text(dump_toml(cfg), encoding="utf-8")
    (out / "pretrain.tsv").write_text(
        "step\tnll\n" + "".join(f"{k}\t{v!r}\n" for k, v in enumerate(history)), encoding="utf-8"
    )
    log.info("pretrained %d steps: NLL %.4f -> %.4f nats/cell", steps, initial, final)
    print(out / FLOW_FILE)


def cmd_train(args, cfg: Config) -> None:
    vocab = trainer.vocabulary(cfg)
    corpus = trainer.load_corpus(cfg, vocab)
    flow_state = None
    if args.init_flow:
        flow_state = checkpoint.load(args.init_flow)
        if "norm.mean" in flow_state:
            corpus.norm = trainer.FeatureNorm(flow_state["norm.mean"], flow_state["norm.std"])
    if args.baseline:
        cfg = replace(cfg, trainer=replace(cfg.trainer, beta=0.0))
    out = out_dir(args)
    (out / "config.toml").write_text(dump_toml(cfg), encoding="utf-8")
    with (out / "steps.jsonl").open("w", encoding="utf-8") as fh:
        models, reports = trainer.fit(
            cfg, corpus, with_flow=not args.baseline, audit=args.audit, flow_state=flow_state,
            on_report=lambda r: fh.write(r.to_json() + "\n"),
        )
    trainer.save_models(models, out / MODEL_FILE)
    vocab.save(out / "vocab.txt")
    log.info("trained %d steps; model in %s", len(reports), out / MODEL_FILE)
    print(out / MODEL_FILE)


def _examples(args, cfg, vocab, with_reference=False):
    return [trainer.make_example(args.manifest, u, cfg, vocab, with_reference) for u in select(args.manifest, args.split)]


def _load(args):
    cfg = model_config(args, args.model)
    log.info("resolved config: %s", cfg.to_json())
    models = trainer.load_models(cfg, args.model)
    vocab_file = Path(args.model).parent / "vocab.txt"
    if vocab_file.is_file():
        models.vocab = models.asr.vocab = Vocabulary.load(vocab_file)
    models.train(False)
    return cfg, models


def cmd_enhance(args, cfg: Config) -> None:
    cfg, models = _load(args)
    out = out_dir(args)
    utts = select(args.manifest, args.split)
    written = []
    diag = (out / "diagnostics.jsonl").open("w", encoding="utf-8") if args.diagnostics else None
    try:
        for utt in utts:
            ex = trainer.make_example(args.manifest, utt, cfg, models.vocab)
            if ex.kind != "noisy":
                raise FlowfrontError(f"{utt.utt_id}: enhancement needs a multi-channel utterance")
            y, d = models.nb.enhance(ex.spec)
            wave_ = istft(y, length=load_audio(args.manifest, utt).num_samples)
            peak = np.max(np.abs(wave_.samples))
            samples = wave_.samples / peak if peak > 1 else wave_.samples
            rel = f"{utt.utt_id}.wav"
            write_wav(out / rel, Waveform(samples, wave_.sample_rate))
            written.append(Utterance(utt.utt_id, utt.transcript, rel, 1, utt.split, utt.snr_db))
            if diag is not None:
                diag.write(json.dumps({"utt_id": utt.utt_id, **d.to_json()}) + "\n")
    finally:
        if diag is not None:
            diag.close()
    write_manifest(out / "manifest.jsonl", written)
    print(out / "manifest.jsonl")


def cmd_decode(args, cfg: Config) -> None:
    cfg, models = _load(args)
    rows = []
    for ex in _examples(args, cfg, models.vocab):
        hyp = trainer.decode_example(models, ex, cfg)
        rows.append((ex.utt_id, hyp))
        print(f"{ex.utt_id}\t{hyp}")
    write_tsv(out_dir(args) / "hyp.tsv", ("utt_id", "hyp"), rows)


def cmd_likelihood(args, cfg: Config) -> None:
    cfg, models = _load(args)
    if models.de is None:
        raise FlowfrontError(f"{args.model} has no density estimator (baseline model)")
    rows = []
    for ex in _examples(args, cfg, models.vocab):
        if ex.kind == "clean":
            mel = Tensor(models.norm(ex.channel_mels[0]))
        else:
            mel = Tensor(trainer.enhanced_mel(models, ex, cfg).data)
        label = ex.label if models.conditioned else None
        value = float(models.de.nll(mel, label=label).data)
        rows.append((ex.utt_id, f"{value:.6f}"))
        print(f"{ex.utt_id}\t{value:.6f}")
    write_tsv(out_dir(args) / "likelihood.tsv", ("utt_id", "l_gen"), rows)


def read_hypotheses(path) -> dict[str, str]:
    path = Path(path)
    if path.suffix == ".jsonl":
        return {u.utt_id: u.transcript for u in read_manifest(path)}
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if rows and rows[0][:1] == ["utt_id"]:
        rows = rows[1:]
    return {r[0]: (r[1] if len(r) > 1 else "") for r in rows if r}


def cmd_score(args, cfg: Config) -> None:
    refs = {u.utt_id: u for u in read_manifest(args.ref)}
    out = out_dir(args)
    if args.audio:
        hyps = {u.utt_id: u for u in read_manifest(args.hyp)}
        rows, values = [], []
        for utt_id, h in hyps.items():
            if utt_id not in refs:
                raise FlowfrontError(f"{utt_id}: not in reference manifest")
            r = refs[utt_id]
            ref = load_audio(args.ref, r, clean_ref=r.clean_ref is not None).samples
            est = load_audio(args.hyp, h).samples
            n = min(ref.shape[-1], est.shape[-1])
            value = sdr(ref[..., :n], est[..., :n])
            values.append(value)
            rows.append((utt_id, f"{value:.3f}"))
        rows.append(("ALL", f"{np.mean(values):.3f}"))
        write_tsv(out / "score.tsv", ("utt_id", "sdr_db"), rows)
    else:
        hyps = read_hypotheses(args.hyp)
        rows, totals = [], np.zeros(4, dtype=int)
        for utt_id, hyp in hyps.items():
            if utt_id not in refs:
                raise FlowfrontError(f"{utt_id}: not in reference manifest")
            rep = error_rate(tokens(refs[utt_id].transcript, args.unit), tokens(hyp, args.unit))
            totals += (rep.substitutions, rep.deletions, rep.insertions, rep.ref_length)
            rows.append((utt_id, rep.substitutions, rep.deletions, rep.insertions, rep.ref_length, f"{rep.rate:.4f}"))
        if totals[3] == 0:
            raise FlowfrontError("no hypotheses to score")
        rows.append(("ALL", *totals.tolist(), f"{totals[:3].sum() / totals[3]:.4f}"))
        write_tsv(out / "score.tsv", ("utt_id", "sub", "del", "ins", "ref_len", "rate"), rows)
    for row in rows:
        print("\t".join(str(x) for x in row))


def cmd_experiment(args, cfg: Config) -> None:
    out = out_dir(args)
    tcfg = cfg.trainer
    if not (tcfg.manifest or (tcfg.clean_manifest and tcfg.noisy_manifest)):
        manifest = build_corpus(out / "corpus", cfg.corpus, cfg.mix, cfg.synth, tcfg.seed)
        log.info("no manifest configured; simulated corpus at %s", manifest)
        cfg = replace(cfg, trainer=replace(tcfg, manifest=str(manifest)))
    (out / "config.toml").write_text(dump_toml(cfg), encoding="utf-8")
    rows = trainer.run_experiment(cfg, out)
    sys.stdout.write(trainer.format_table(rows))


COMMANDS = {
    "simulate": cmd_simulate,
    "pretrain-flow": cmd_pretrain_flow,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "decode": cmd_decode,
    "likelihood": cmd_likelihood,
    "score": cmd_score,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args)
        log.info("command %s, seed %d", args.command, cfg.trainer.seed)
        log.info("resolved config: %s", cfg.to_json())
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"flowfront {args.command}: {exc}", file=sys.stderr)
        return 2
    except (FlowfrontError, checkpoint.CheckpointError, OSError) as exc:
        print(f"flowfront {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
