"""Phase runner: data, triage, specialists, stratification, attending, evaluation, theory, report.

Every phase reads and writes artifacts under the output directory, so each
can be rerun on its own and a full run resumes from whatever already exists.
"""

import csv
import json
import os
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .agents import (
    consult_specialists,
    default_profiles,
    init_attending,
    init_triage,
    plan_for_ablation,
    route,
    train_attending,
    train_triage,
)
from .checkpoint import read_checkpoint, write_checkpoint
from .config import RunConfig
from .core import (
    CmarlError,
    DataError,
    PhaseError,
    Vocabulary,
    case_index,
    derive_stream,
    ordered_map,
)
from .curriculum import StagePlan, specialist_accuracy, stratify
from .data import TEST, TRAIN, generate_synthetic, read_dataset, write_dataset
from .grpo import BatchMetrics, CmarlConfig
from .logger import get_logger
from .metrics import MetricsLog, MetricsRecord
from .pipeline import copy_baseline_accuracy, routing_accuracy, run_evaluation, write_eval_report
from .plots import render_report
from .theorylab import TheoryInstance, compare, make_quadratic_family

logger = get_logger(__name__)

PHASES = (
    "gen-data",
    "train-triage",
    "run-specialists",
    "stratify",
    "train-attending",
    "evaluate",
    "theory",
    "report",
)


def write_json(path: str, payload: dict) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)


def read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise DataError(f"missing artifact: {path}")
    with open(path) as f:
        return json.load(f)


@dataclass(frozen=True)
class ArtifactPaths:
    root: str

    def _join(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    @property
    def dataset(self) -> str:
        return self._join("data", "dataset.jsonl")

    @property
    def consulted(self) -> str:
        return self._join("data", "consulted.jsonl")

    @property
    def plan(self) -> str:
        return self._join("plan.json")

    @property
    def triage_checkpoint(self) -> str:
        return self._join("checkpoints", "triage.ckpt")

    @property
    def attending_checkpoint(self) -> str:
        return self._join("checkpoints", "attending.ckpt")

    @property
    def metrics(self) -> str:
        return self._join("metrics.jsonl")

    @property
    def log(self) -> str:
        return self._join("cmarl.log")

    def report(self, name: str) -> str:
        return self._join("reports", name)


class Experiment:
    """One run of the full workflow for a RunConfig."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.paths = ArtifactPaths(config.output_dir)
        self.vocab = Vocabulary(config.num_options, config.num_fillers)
        self.run_id = f"seed{config.seed}"
        self.profiles = default_profiles(
            config.num_specialists,
            in_specialty_accuracy=config.in_specialty_accuracy,
            out_of_specialty_accuracy=config.out_of_specialty_accuracy,
            malformed_rate=config.malformed_rate,
        )
        self._phases: Dict[str, Callable[[], None]] = {
            "gen-data": self.generate_data,
            "train-triage": self.train_triage,
            "run-specialists": self.run_specialists,
            "stratify": self.stratify,
            "train-attending": self.train_attending,
            "evaluate": self.evaluate,
            "theory": self.theory,
            "report": self.report,
        }

    # --- plumbing -----------------------------------------------------------

    def outputs(self, phase: str) -> List[str]:
        p = self.paths
        return {
            "gen-data": [p.dataset],
            "train-triage": [p.triage_checkpoint],
            "run-specialists": [p.consulted],
            "stratify": [p.plan],
            "train-attending": [p.attending_checkpoint],
            "evaluate": [p.report("eval_n1.json"), p.report("eval_tts.json"), p.report("copy_baseline.json")],
            "theory": [p.report("theory.csv"), p.report("theory.txt")],
            "report": [],
        }[phase]

    def is_complete(self, phase: str) -> bool:
        outputs = self.outputs(phase)
        return bool(outputs) and all(os.path.exists(path) for path in outputs)

    def run_phase(self, phase: str, force: bool = True) -> bool:
        """Run one phase; returns False when skipped because its artifacts exist."""
        if phase not in self._phases:
            raise PhaseError(phase, KeyError(f"unknown phase; expected one of {PHASES}"))
        if not force and self.is_complete(phase):
            logger.info(f"Phase {phase}: artifacts present, skipping")
            return False
        logger.info(f"Phase {phase}: start")
        started = time.perf_counter()
        try:
            self._phases[phase]()
        except PhaseError:
            raise
        except (CmarlError, OSError, ValueError, KeyError) as e:
            logger.debug(f"Phase {phase} failed", exc_info=True)
            raise PhaseError(phase, e) from e
        logger.info(f"Phase {phase}: done in {time.perf_counter() - started:.2f}s")
        return True

    def run_all(self, force: bool = False) -> None:
        for phase in PHASES:
            self.run_phase(phase, force=force)

    def stream(self, purpose: str, *indices: int):
        return derive_stream(self.config.seed, purpose, indices)

    def grpo_config(self, stage: int = 0, learning_rate: Optional[float] = None) -> CmarlConfig:
        c = self.config
        return CmarlConfig(
            clip_epsilon=c.clip_epsilon,
            kl_beta=c.kl_betas[stage],
            entropy_gamma=c.entropy_gammas[stage],
            temperature=c.temperature,
            learning_rate=c.attending_learning_rates[stage] if learning_rate is None else learning_rate,
            group_size=c.group_size,
            std_guard=c.std_guard,
        )

    def _metrics_callback(self):
        log = MetricsLog(self.paths.metrics, self.run_id)
        offsets: Dict[str, int] = {}
        clock = {"last": time.perf_counter()}

        def on_step(phase: str, step: int, metrics: BatchMetrics) -> None:
            if phase not in offsets:
                offsets[phase] = log.next_step(phase)
            now = time.perf_counter()
            wall_ms = (now - clock["last"]) * 1000.0
            clock["last"] = now
            log.append(MetricsRecord.from_batch(self.run_id, phase, offsets[phase] + step, metrics, wall_ms))
            logger.debug(
                f"{phase} step {step}: reward={metrics.mean_reward:.4f} acc={metrics.mean_accuracy:.4f} "
                f"entropy={metrics.mean_entropy:.4f}"
            )

        return on_step

    def _expected_shape(self, conditioning_dim: int):
        c = self.config
        return self.vocab.size, c.feature_dim + self.vocab.size + 1 + conditioning_dim

    def load_triage(self):
        return read_checkpoint(self.paths.triage_checkpoint, self._expected_shape(0))

    def load_attending(self):
        return read_checkpoint(self.paths.attending_checkpoint, self._expected_shape(self.config.num_options))

    # --- phases -------------------------------------------------------------

    def generate_data(self) -> None:
        dataset = generate_synthetic(self.config, self.stream("data"))
        write_dataset(dataset, self.paths.dataset)

    def train_triage(self) -> None:
        c = self.config
        dataset = read_dataset(self.paths.dataset)
        initial = init_triage(
            self.vocab, c.feature_dim, c.max_length, self.stream("triage-init"), c.init_scale, c.prior_strength
        )
        params = train_triage(
            dataset.split(TRAIN),
            self.grpo_config(0, c.triage_learning_rate),
            self.stream("triage"),
            self.vocab,
            c.triage_steps,
            c.batch_size,
            initial,
            self._metrics_callback(),
            c.threads,
        )
        write_checkpoint(params, self.paths.triage_checkpoint)

    def run_specialists(self) -> None:
        c = self.config
        dataset = read_dataset(self.paths.dataset)
        triage = self.load_triage() if c.routing == "triage" else None

        def _consult(case):
            routed = route(case, triage, self.vocab, c.routing, self.stream("routing", case_index(case.id)))
            reports = consult_specialists(case, self.profiles, routed, c.seed)
            return reports, specialist_accuracy(reports, case.gold_index)

        results = ordered_map(_consult, dataset.cases, c.threads)
        for case, (reports, s) in zip(dataset.cases, results):
            dataset.reports_by_case[case.id] = reports
            dataset.s_by_case[case.id] = s
        write_dataset(dataset, self.paths.consulted)
        logger.info(f"Specialists answered {len(dataset.cases)} cases")

    def stratify(self) -> None:
        c = self.config
        dataset = read_dataset(self.paths.consulted)
        strata = stratify(dataset.split(TRAIN), dataset.reports_by_case, c.num_specialists)
        plan = plan_for_ablation(
            strata,
            c.ablation,
            c.attending_steps,
            c.entropy_gammas,
            c.kl_betas,
            c.attending_learning_rates,
            self.stream("plan"),
        )
        payload = plan.to_dict()
        payload["ablation"] = c.ablation
        payload["counts"] = {k.value: v for k, v in strata.counts().items()}
        write_json(self.paths.plan, payload)

    def train_attending(self) -> None:
        c = self.config
        dataset = read_dataset(self.paths.consulted)
        plan = StagePlan.from_dict(read_json(self.paths.plan))
        initial = init_attending(
            self.vocab, c.feature_dim, c.max_length, self.stream("attending-init"), c.init_scale, c.prior_strength,
            c.format_penalty, c.consensus_prior,
        )
        params = train_attending(
            plan,
            dataset.by_id,
            dataset.reports_by_case,
            self.grpo_config(0),
            self.stream("attending"),
            self.vocab,
            initial,
            c.batch_size,
            self._metrics_callback(),
            c.threads,
        )
        write_checkpoint(params, self.paths.attending_checkpoint)

    def evaluate(self) -> None:
        c = self.config
        dataset = read_dataset(self.paths.consulted)
        attending = self.load_attending()
        test = dataset.split(TEST)
        for name, n_samples in (("eval_n1.json", 1), ("eval_tts.json", c.tts_samples)):
            report, consultations = run_evaluation(
                test,
                dataset.reports_by_case,
                dataset.s_by_case,
                attending,
                self.vocab,
                n_samples,
                self.stream("eval", n_samples),
                c.eval_temperature,
                c.threads,
            )
            write_eval_report(report, self.paths.report(name))
            for consultation in consultations:
                logger.debug(f"consultation {json.dumps(consultation.to_dict(self.vocab), sort_keys=True)}")
        baseline = copy_baseline_accuracy(test, dataset.reports_by_case, dataset.s_by_case)
        write_eval_report(baseline, self.paths.report("copy_baseline.json"))
        if os.path.exists(self.paths.triage_checkpoint):
            accuracy = routing_accuracy(test, self.load_triage(), self.vocab, c.threads)
            write_json(self.paths.report("routing.json"), {"routing_accuracy": accuracy, "cases": len(test)})

    def theory_instance(self) -> TheoryInstance:
        c = self.config
        stars = np.zeros((len(c.theory_stage_optima), c.theory_dim))
        stars[:, 0] = c.theory_stage_optima
        stages = len(c.theory_stage_optima)
        return TheoryInstance(
            make_quadratic_family(stars, c.theory_sigma),
            n=(c.theory_samples,) * stages,
            eta=c.theory_eta,
            K=(c.theory_iterations,) * stages,
            epsilon1=c.theory_epsilon1,
            U1=c.theory_u1,
            batch_size=c.theory_batch_size or None,
        )

    def theory(self) -> None:
        c = self.config
        report = compare(self.theory_instance(), c.theory_trials, self.stream("theory"), c.threads)
        path = self.paths.report("theory.csv")
        os.makedirs(os.path.dirname(path), exist_ok=True)
        rows = report.rows()
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        with open(self.paths.report("theory.txt"), "w") as f:
            f.write(report.summary() + "\n")

    def report(self) -> None:
        render_report(self.paths.root)


def run_experiment(config: RunConfig, force: bool = False) -> int:
    """Run every phase, skipping those whose artifacts already exist; 0 on success."""
    Experiment(config).run_all(force=force)
    return 0
