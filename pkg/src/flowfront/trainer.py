"""Joint training with density estimation on non-parallel clean and noisy data.

One step routes a homogeneous mini-batch:

* clean (single channel): ASR loss and flow NLL on the clean log-mel;
  the recognizer and the density estimator are updated.
* noisy (multi-channel): the beamformer enhances the batch; with
  probability 0.5 the recognizer hears one random raw channel instead of the
  enhanced signal.  The flow NLL is always taken on the enhanced log-mel.
  The recognizer and the beamformer are updated; the flow is only evaluated.

The total loss is ``L_ASR + beta * L_gen``.  Every module owns its optimiser,
so a module that must stay fixed on a branch is simply never stepped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .asr import AsrModel, Vocabulary
from .autodiff import Adam, Module, Tensor, global_grad_norm
from .autodiff import checkpoint
from .autodiff import tensor as T
from .beamformer import NeuralBeamformer
from .config import Config, TrainConfig
from .datasim import Utterance, load_audio, read_manifest
from .dsp import ComplexSpectrogram, istft, log_mel, stft
from .errors import ContractViolation
from .melflow import LOG_2PI, MelFlow
from .scoring import corpus_error_rate, sdr

log = logging.getLogger(__name__)

CLEAN, NOISY_RANDOM, NOISY_ENHANCED = "clean", "noisy-random-channel", "noisy-enhanced"
MODULES = ("asr", "nb", "de")

# independent random streams per purpose so that variants sharing a seed
# see the same initialisation, data order and branch draws
STREAMS = {"asr": 1, "nb": 2, "de": 3, "schedule": 4, "branch": 5, "pretrain": 6}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, STREAMS[name]]))


# -- features --------------------------------------------------------------


@dataclass
class FeatureNorm:
    """Per-mel-bin standardisation with statistics from clean training speech."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def identity(cls, n_mels: int) -> "FeatureNorm":
        return cls(np.zeros(n_mels), np.ones(n_mels))

    @classmethod
    def fit(cls, mels: Sequence[np.ndarray]) -> "FeatureNorm":
        stacked = np.concatenate(list(mels), axis=1)
        return cls(stacked.mean(axis=1), np.maximum(stacked.std(axis=1), 1e-3))

    def __call__(self, mel):
        if isinstance(mel, Tensor):
            return (mel - self.mean[:, None]) * Tensor(1.0 / self.std[:, None])
        return (np.asarray(mel) - self.mean[:, None]) / self.std[:, None]

    def state(self) -> dict[str, np.ndarray]:
        return {"norm.mean": self.mean, "norm.std": self.std}


@dataclass
class Example:
    utt_id: str
    transcript: str
    label: list
    kind: str  # "clean" or "noisy"
    spec: ComplexSpectrogram
    channel_mels: np.ndarray  # (C, F_mel, T) un-normalised log-mels of the raw channels
    clean_ref: np.ndarray | None = None  # hidden reference waveform (dev/eval only)
    ref_mel: np.ndarray | None = None


def featurize(wave_, cfg: Config) -> tuple[ComplexSpectrogram, np.ndarray]:
    s = cfg.stft
    spec = stft(wave_, s.window_ms, s.shift_ms, s.fft_size)
    mels = np.stack(
        [log_mel(spec, c, cfg.mel.n_mels, cfg.mel.fmin, cfg.mel.fmax).data for c in range(spec.channels)]
    )
    return spec, mels


def load_examples(
    manifest, split: str, cfg: Config, vocab: Vocabulary, with_reference: bool = False
) -> list[Example]:
    out = []
    for utt in read_manifest(manifest):
        if utt.split != split:
            continue
        out.append(make_example(manifest, utt, cfg, vocab, with_reference))
    return out


def make_example(manifest, utt: Utterance, cfg: Config, vocab: Vocabulary, with_reference=False) -> Example:
    wave_ = load_audio(manifest, utt)
    spec, mels = featurize(wave_, cfg)
    ref = ref_mel = None
    if with_reference and utt.clean_ref is not None:
        ref_wave = load_audio(manifest, utt, clean_ref=True)
        ref = ref_wave.samples
        ref_mel = featurize(ref_wave, cfg)[1][0]
    kind = "clean" if wave_.channels == 1 else "noisy"
    return Example(utt.utt_id, utt.transcript, vocab.encode(utt.transcript), kind, spec, mels, ref, ref_mel)


# -- models and optimisers ----------------------------------------------------


@dataclass
class Models:
    asr: AsrModel
    nb: NeuralBeamformer
    de: MelFlow | None
    norm: FeatureNorm
    vocab: Vocabulary
    conditioned: bool = False

    def modules(self) -> dict[str, Module]:
        out = {"asr": self.asr, "nb": self.nb}
        if self.de is not None:
            out["de"] = self.de
        return out

    def train(self, mode: bool = True) -> None:
        for m in self.modules().values():
            m.train(mode)

    def zero_grad(self) -> None:
        for m in self.modules().values():
            m.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for name, m in self.modules().items():
            out.update({f"{name}.{k}": v for k, v in m.state_dict().items()})
        out.update(self.norm.state())
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, m in self.modules().items():
            prefix = f"{name}."
            m.load_state_dict({k[len(prefix) :]: v for k, v in state.items() if k.startswith(prefix)})
        if "norm.mean" in state:
            self.norm = FeatureNorm(np.asarray(state["norm.mean"]), np.asarray(state["norm.std"]))


def vocabulary(cfg: Config) -> Vocabulary:
    return Vocabulary(list(cfg.synth.chars))


def flow_config(cfg: Config, vocab: Vocabulary, conditioned: bool):
    return replace(cfg.flow, n_mels=cfg.mel.n_mels, conditioned=conditioned, vocab_size=len(vocab))


def build_models(
    cfg: Config,
    vocab: Vocabulary | None = None,
    with_flow: bool = True,
    conditioned: bool | None = None,
    norm: FeatureNorm | None = None,
) -> Models:
    """Initialise all modules from the seed; the baseline passes ``with_flow=False``."""
    vocab = vocab or vocabulary(cfg)
    seed = cfg.trainer.seed
    conditioned = cfg.trainer.label_condition if conditioned is None else conditioned
    n_freq = cfg.stft.fft_size // 2 + 1
    asr = AsrModel(vocab, cfg.mel.n_mels, replace(cfg.asr, ctc_weight=cfg.trainer.ctc_weight), stream(seed, "asr"))
    nb = NeuralBeamformer(n_freq, cfg.beamformer, stream(seed, "nb"))
    de = MelFlow(flow_config(cfg, vocab, conditioned), stream(seed, "de")) if with_flow else None
    return Models(asr, nb, de, norm or FeatureNorm.identity(cfg.mel.n_mels), vocab, conditioned and with_flow)


def make_optimizers(models: Models, tcfg: TrainConfig) -> dict[str, Adam]:
    opts = {
        "asr": Adam(models.asr.parameters(), lr=tcfg.lr, clip_norm=tcfg.clip_norm),
        "nb": Adam(models.nb.parameters(), lr=tcfg.lr, clip_norm=tcfg.clip_norm),
    }
    if models.de is not None:
        opts["de"] = Adam(models.de.parameters(), lr=tcfg.flow_lr, clip_norm=tcfg.clip_norm)
    return opts


LR_FLOOR = 0.05


def lr_factor(tcfg: TrainConfig, step: int, steps: int) -> float:
    """Multiplier on the base learning rates at ``step`` of ``steps``."""
    if tcfg.lr_decay == "constant" or steps <= 1:
        return 1.0
    progress = min(step / (steps - 1), 1.0)
    return LR_FLOOR + (1.0 - LR_FLOOR) * 0.5 * (1.0 + math.cos(math.pi * progress))


def checksum(module: Module | None) -> str:
    """Digest of a module's parameter bytes (empty string for an absent module)."""
    if module is None:
        return ""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()[:16]


# -- one step -----------------------------------------------------------------


@dataclass
class StepReport:
    step: int
    branch: str
    utt_ids: list
    beta: float
    l_asr: float
    l_gen: float
    l_tot: float
    grad_norms: dict
    u: float | None = None
    channel: int | None = None
    gen_grad_norm_nb: float | None = None
    updated: list = field(default_factory=list)
    checksums: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def total_loss(l_asr, l_gen, beta: float):
    """L_ASR + beta * L_gen (works on floats and tensors)."""
    if isinstance(l_asr, Tensor) or isinstance(l_gen, Tensor):
        return T.as_tensor(l_asr) + T.as_tensor(l_gen) * float(beta)
    return l_asr + beta * l_gen


def enhanced_mel(models: Models, ex: Example, cfg: Config) -> Tensor:
    y, _ = models.nb.enhance(ex.spec)
    return models.norm(log_mel(y, 0, cfg.mel.n_mels, cfg.mel.fmin, cfg.mel.fmax))


def _batch_mean(values: list[Tensor]) -> Tensor:
    total = values[0]
    for v in values[1:]:
        total = total + v
    return total * (1.0 / len(values)) if len(values) > 1 else total


def train_step(
    batch: Sequence[Example],
    models: Models,
    optimizers: dict[str, Adam],
    cfg: Config,
    rng: np.random.Generator,
    step: int = 0,
    audit: bool = False,
) -> StepReport:
    """One joint update on a homogeneous batch.  ``rng`` supplies the branch draws.

    With ``audit`` the report carries parameter checksums after the update and,
    on noisy steps, the beamformer gradient norm of ``beta * L_gen`` alone.
    """
    tcfg = cfg.trainer
    if not batch:
        raise ContractViolation("empty batch")
    kinds = {ex.kind for ex in batch}
    if len(kinds) != 1:
        raise ContractViolation(f"batch mixes clean and noisy utterances: {sorted(kinds)}")
    for ex in batch:
        if not ex.label:
            raise ContractViolation(f"{ex.utt_id}: missing label")
    start = time.perf_counter()
    kind = kinds.pop()
    beta = tcfg.beta
    de = models.de
    models.train(True)
    models.zero_grad()

    u = channel = None
    asr_losses, gen_losses = [], []
    if kind == "clean":
        branch = CLEAN
        for ex in batch:
            mel = Tensor(models.norm(ex.channel_mels[0]))
            asr_losses.append(models.asr.loss(models.asr.encode(mel), ex.label, tcfg.ctc_weight))
            if de is not None:
                gen_losses.append(de.nll(mel, label=ex.label if models.conditioned else None))
        to_update = ["asr", "de"]
    else:
        u = float(rng.uniform())
        channels = batch[0].spec.channels
        use_random = u < tcfg.random_channel_prob
        if use_random:
            channel = int(rng.integers(channels))
        branch = NOISY_RANDOM if use_random else NOISY_ENHANCED
        for ex in batch:
            # the enhanced mel feeds L_gen always and the recognizer on the enhanced branch
            mel_enh = enhanced_mel(models, ex, cfg) if (de is not None or not use_random) else None
            asr_in = Tensor(models.norm(ex.channel_mels[channel])) if use_random else mel_enh
            asr_losses.append(models.asr.loss(models.asr.encode(asr_in), ex.label, tcfg.ctc_weight))
            if de is not None:
                gen_losses.append(de.nll(mel_enh, label=ex.label if models.conditioned else None))
        to_update = ["asr", "nb"]

    l_asr = _batch_mean(asr_losses)
    l_gen = _batch_mean(gen_losses) if gen_losses else None
    l_tot = total_loss(l_asr, l_gen, beta) if l_gen is not None else l_asr

    gen_nb = None
    if audit and kind == "noisy" and l_gen is not None and beta > 0:
        (l_gen * float(beta)).backward()
        gen_nb = global_grad_norm(models.nb.parameters())
        models.zero_grad()

    # with beta = 0 the generative term is left out of the graph entirely, so the
    # update matches an ASR-only step bit for bit (no zero gradients reach Adam)
    objective = l_asr if beta == 0 else l_tot
    objective.backward()
    norms = {name: global_grad_norm(m.parameters()) for name, m in models.modules().items()}
    updated = []
    for name in to_update:
        if name in optimizers and name not in tcfg.freeze:
            optimizers[name].step()
            updated.append(name)
    models.zero_grad()

    report = StepReport(
        step=step,
        branch=branch,
        utt_ids=[ex.utt_id for ex in batch],
        beta=beta,
        l_asr=float(l_asr.data),
        l_gen=float(l_gen.data) if l_gen is not None else 0.0,
        l_tot=float(l_tot.data),
        grad_norms=norms,
        u=u,
        channel=channel,
        gen_grad_norm_nb=gen_nb,
        updated=updated,
        seconds=time.perf_counter() - start,
    )
    if audit:
        report.checksums = {name: checksum(m) for name, m in models.modules().items()}
    return report


# -- schedules and loops -------------------------------------------------------


class Schedule:
    """Seeded stream of homogeneous batches.

    Each step is clean with probability ``clean_ratio``; each pool is walked
    in a fresh random order per pass.
    """

    def __init__(self, clean: Sequence, noisy: Sequence, tcfg: TrainConfig, rng: np.random.Generator):
        if tcfg.clean_ratio > 0 and not clean:
            raise ContractViolation("clean batches scheduled but no clean utterances loaded")
        if tcfg.clean_ratio < 1 and not noisy:
            raise ContractViolation("noisy batches scheduled but no noisy utterances loaded")
        self.pools = {"clean": list(clean), "noisy": list(noisy)}
        self.order = {"clean": [], "noisy": []}
        self.tcfg = tcfg
        self.rng = rng

    def _take(self, kind: str) -> object:
        if not self.order[kind]:
            self.order[kind] = list(self.rng.permutation(len(self.pools[kind])))
        return self.pools[kind][self.order[kind].pop()]

    def next_batch(self) -> list:
        kind = "clean" if self.rng.uniform() < self.tcfg.clean_ratio else "noisy"
        return [self._take(kind) for _ in range(self.tcfg.batch_size)]


def train(
    models: Models,
    clean: Sequence[Example],
    noisy: Sequence[Example],
    cfg: Config,
    steps: int | None = None,
    on_report: Callable[[StepReport], None] | None = None,
    audit: bool = False,
) -> list[StepReport]:
    tcfg = cfg.trainer
    steps = tcfg.steps if steps is None else steps
    opts = make_optimizers(models, tcfg)
    schedule = Schedule(clean, noisy, tcfg, stream(tcfg.seed, "schedule"))
    branch_rng = stream(tcfg.seed, "branch")
    base = {name: opt.lr for name, opt in opts.items()}
    reports = []
    for k in range(steps):
        factor = lr_factor(tcfg, k, steps)
        for name, opt in opts.items():
            opt.lr = base[name] * factor
        rep = train_step(schedule.next_batch(), models, opts, cfg, branch_rng, step=k, audit=audit)
        reports.append(rep)
        if on_report is not None:
            on_report(rep)
        if tcfg.log_every and (k + 1) % tcfg.log_every == 0:
            recent = reports[-tcfg.log_every :]
            log.info(
                "step %d  L_ASR %.3f  L_gen %.3f  %.2fs/step",
                k + 1,
                np.mean([r.l_asr for r in recent]),
                np.mean([r.l_gen for r in recent]),
                np.mean([r.seconds for r in recent]),
            )
    return reports


def standard_normal_nll(mels: Sequence[np.ndarray]) -> float:
    """Mean per-cell NLL under the identity flow."""
    return float(np.mean([0.5 * LOG_2PI + 0.5 * np.mean(m**2) for m in mels]))


def mean_nll(flow: MelFlow, mels: Sequence[np.ndarray], labels=None) -> float:
    vals = []
    for i, m in enumerate(mels):
        label = None if labels is None else labels[i]
        vals.append(float(flow.nll(m, label=label).data))
    return float(np.mean(vals))


def pretrain_density(
    flow: MelFlow,
    mels: Sequence[np.ndarray],
    labels: Sequence | None,
    steps: int,
    lr: float,
    rng: np.random.Generator,
    clip_norm: float = 5.0,
) -> list[float]:
    """Fit the flow alone on (normalised) clean mels; returns the per-step NLL."""
    if steps and not mels:
        raise ContractViolation("no clean utterances to pretrain on")
    opt = Adam(flow.parameters(), lr=lr, clip_norm=clip_norm)
    history = []
    order: list[int] = []
    flow.train(True)
    for _ in range(steps):
        if not order:
            order = list(rng.permutation(len(mels)))
        i = order.pop()
        flow.zero_grad()
        loss = flow.nll(mels[i], label=None if labels is None else labels[i])
        loss.backward()
        opt.step()
        history.append(float(loss.data))
    flow.zero_grad()
    return history


# -- evaluation ----------------------------------------------------------------


@dataclass
class EvalResult:
    cer: float
    hyps: dict
    clean_cer: float | None = None
    sdr_enhanced: float | None = None
    sdr_raw: float | None = None


def decode_example(models: Models, ex: Example, cfg: Config) -> str:
    models.train(False)
    if ex.kind == "clean":
        mel = Tensor(models.norm(ex.channel_mels[0]))
    else:
        mel = Tensor(enhanced_mel(models, ex, cfg).data)
    return models.asr.transcribe(mel)


def evaluate(models: Models, examples: Sequence[Example], cfg: Config, clean_eval: bool = True, score_sdr: bool = True) -> EvalResult:
    """CER on the examples as given (enhanced when multi-channel), on their hidden clean
    references, and the SDR of the enhanced signal against the reference."""
    models.train(False)
    hyps, pairs, clean_pairs = {}, [], []
    sdr_enh, sdr_raw = [], []
    for ex in examples:
        hyp = decode_example(models, ex, cfg)
        hyps[ex.utt_id] = hyp
        pairs.append((ex.transcript, hyp))
        if clean_eval and ex.ref_mel is not None:
            clean_hyp = models.asr.transcribe(Tensor(models.norm(ex.ref_mel)))
            clean_pairs.append((ex.transcript, clean_hyp))
        if score_sdr and ex.clean_ref is not None and ex.kind == "noisy":
            y, _ = models.nb.enhance(ex.spec)
            n = ex.clean_ref.shape[-1]
            est = istft(y, length=n).samples
            sdr_enh.append(sdr(ex.clean_ref, est))
            raw = istft(ex.spec.channel(0), length=n).samples
            sdr_raw.append(sdr(ex.clean_ref, raw))
    models.train(True)
    return EvalResult(
        cer=corpus_error_rate(pairs),
        hyps=hyps,
        clean_cer=corpus_error_rate(clean_pairs) if clean_pairs else None,
        sdr_enhanced=float(np.mean(sdr_enh)) if sdr_enh else None,
        sdr_raw=float(np.mean(sdr_raw)) if sdr_raw else None,
    )


# -- whole runs ----------------------------------------------------------------


@dataclass
class Corpus:
    clean: list
    noisy: list
    eval: list
    norm: FeatureNorm


def resolve_manifests(tcfg: TrainConfig) -> tuple[str, str]:
    clean = tcfg.clean_manifest or tcfg.manifest
    noisy = tcfg.noisy_manifest or tcfg.manifest
    if not clean or not noisy:
        raise ContractViolation("trainer.manifest (or clean_manifest/noisy_manifest) must be set")
    return clean, noisy


def load_corpus(cfg: Config, vocab: Vocabulary, eval_split: str | None = None) -> Corpus:
    clean_path, noisy_path = resolve_manifests(cfg.trainer)
    clean = load_examples(clean_path, cfg.trainer.clean_split, cfg, vocab)
    noisy = load_examples(noisy_path, cfg.trainer.noisy_split, cfg, vocab)
    held = load_examples(noisy_path, eval_split, cfg, vocab, with_reference=True) if eval_split else []
    norm = FeatureNorm.fit([ex.channel_mels[0] for ex in clean]) if clean else FeatureNorm.identity(cfg.mel.n_mels)
    return Corpus(clean, noisy, held, norm)


def fit(
    cfg: Config,
    corpus: Corpus,
    with_flow: bool,
    conditioned: bool | None = None,
    on_report=None,
    audit: bool = False,
    flow_state: dict | None = None,
) -> tuple[Models, list[StepReport]]:
    """Initialise, warm-start or pretrain the flow, then run joint training.

    ``flow_state`` holds ``de.*`` parameters (for instance from a
    ``pretrain-flow`` checkpoint) and takes precedence over in-run pretraining.
    """
    vocab = vocabulary(cfg)
    models = build_models(cfg, vocab, with_flow=with_flow, conditioned=conditioned, norm=corpus.norm)
    tcfg = cfg.trainer
    if with_flow and flow_state is not None:
        models.de.load_state_dict({k[3:]: v for k, v in flow_state.items() if k.startswith("de.")})
    elif with_flow and tcfg.flow_pretrain_steps:
        mels = [corpus.norm(ex.channel_mels[0]) for ex in corpus.clean]
        labels = [ex.label for ex in corpus.clean] if models.conditioned else None
        pretrain_density(models.de, mels, labels, tcfg.flow_pretrain_steps, tcfg.flow_lr,
                         stream(tcfg.seed, "pretrain"), tcfg.clip_norm)
    reports = train(models, corpus.clean, corpus.noisy, cfg, on_report=on_report, audit=audit)
    return models, reports


def save_models(models: Models, path) -> None:
    checkpoint.save(path, models.state_dict())


def load_models(cfg: Config, path, with_flow: bool | None = None, conditioned: bool | None = None) -> Models:
    state = checkpoint.load(path)
    has_flow = any(k.startswith("de.") for k in state)
    with_flow = has_flow if with_flow is None else with_flow
    if conditioned is None:
        conditioned = any(k.startswith("de.embedder.") for k in state)
    models = build_models(cfg, with_flow=with_flow, conditioned=conditioned)
    models.load_state_dict(state)
    return models


@dataclass
class ExperimentRow:
    model: str
    beta: float | None
    label_condition: bool | None
    seed: int
    cer_noisy: float
    cer_clean: float | None
    sdr_enhanced: float | None
    sdr_raw: float | None
    steps: int
    seconds: float


def variants(cfg: Config) -> list[tuple[str, float | None, bool | None]]:
    """Baseline first, then one proposed model per (beta, label condition)."""
    out: list[tuple[str, float | None, bool | None]] = [("baseline", None, None)]
    for cond in cfg.experiment.label_conditions:
        for beta in cfg.experiment.betas:
            out.append(("proposed", float(beta), bool(cond)))
    return out


def run_experiment(cfg: Config, out_dir=None, corpus: Corpus | None = None) -> list[ExperimentRow]:
    """Train the baseline and every proposed variant per seed and score them.

    Writes ``metrics.tsv`` (one row per run plus mean rows) and ``table.txt``
    under ``out_dir`` when given.
    """
    vocab = vocabulary(cfg)
    corpus = corpus or load_corpus(cfg, vocab, cfg.experiment.eval_split)
    rows = []
    for seed in cfg.experiment.seeds:
        for name, beta, cond in variants(cfg):
            tcfg = replace(cfg.trainer, seed=int(seed), beta=0.0 if beta is None else beta)
            run_cfg = replace(cfg, trainer=tcfg)
            start = time.perf_counter()
            models, _ = fit(run_cfg, corpus, with_flow=name != "baseline", conditioned=cond)
            res = evaluate(models, corpus.eval, run_cfg, cfg.experiment.clean_eval, cfg.experiment.score_sdr)
            row = ExperimentRow(name, beta, cond, int(seed), res.cer, res.clean_cer, res.sdr_enhanced,
                                res.sdr_raw, tcfg.steps, time.perf_counter() - start)
            log.info("%s", row)
            rows.append(row)
    if out_dir is not None:
        write_report(rows, out_dir)
    return rows


def summarize(rows: Sequence[ExperimentRow]) -> list[dict]:
    """Mean metrics per variant across seeds, in first-seen order."""
    groups: dict[tuple, list[ExperimentRow]] = {}
    for r in rows:
        groups.setdefault((r.model, r.beta, r.label_condition), []).append(r)

    def avg(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    out = []
    for (model, beta, cond), rs in groups.items():
        out.append({
            "model": model, "beta": beta, "label_condition": cond, "seeds": len(rs),
            "cer_noisy": avg(r.cer_noisy for r in rs), "cer_clean": avg(r.cer_clean for r in rs),
            "sdr_enhanced": avg(r.sdr_enhanced for r in rs), "sdr_raw": avg(r.sdr_raw for r in rs),
        })
    return out


def _fmt(v, pct=False) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    return f"{100 * v:.1f}" if pct else f"{v:.3g}" if isinstance(v, float) else str(v)


def format_table(rows: Sequence[ExperimentRow]) -> str:
    head = f"{'model':<10} {'beta':>6} {'label':>6} {'seeds':>5} {'CER noisy %':>12} {'CER clean %':>12} {'SDR enh':>8} {'SDR raw':>8}"
    lines = [head, "-" * len(head)]
    for s in summarize(rows):
        lines.append(
            f"{s['model']:<10} {_fmt(s['beta']):>6} {_fmt(s['label_condition']):>6} {s['seeds']:>5} "
            f"{_fmt(s['cer_noisy'], True):>12} {_fmt(s['cer_clean'], True):>12} "
            f"{_fmt(s['sdr_enhanced']):>8} {_fmt(s['sdr_raw']):>8}"
        )
    return "\n".join(lines) + "\n"


TSV_COLUMNS = ("model", "beta", "label_condition", "seed", "cer_noisy", "cer_clean", "sdr_enhanced", "sdr_raw", "steps", "seconds")


def write_report(rows: Sequence[ExperimentRow], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(TSV_COLUMNS)]
    for r in rows:
        d = asdict(r)
        lines.append("\t".join("" if d[c] is None else str(d[c]) for c in TSV_COLUMNS))
    for s in summarize(rows):
        d = dict(s, seed="mean", steps="", seconds="")
        lines.append("\t".join("" if d.get(c) is None else str(d.get(c)) for c in TSV_COLUMNS))
    (out_dir / "metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out_dir / "table.txt").write_text(format_table(rows), encoding="utf-8")
