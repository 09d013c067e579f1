# HANLAB
# ***
# Training pipeline: the five stages as a state graph with a gated, retried balance stage

import os
import operator
from typing import Annotated, Any, Dict, List, Optional, Sequence, Tuple, TypedDict

import pandas as pd

from hanlab.ahe.bundle import ModelBundle, build_models
from hanlab.ahe.config import AheConfig
from hanlab.errors import GateFailureError
from hanlab.templates import BasePipeline, create_staged_pipeline_graph
from hanlab.tools.checkpoint import load_checkpoint, save_checkpoint
from hanlab.tools.logging import log_records, unique_file_name
from hanlab.tools.runtime import resolve_device
from hanlab.training.config import SecurityGate, TrainConfig
from hanlab.training.evaluation import security_table
from hanlab.training.stages import (
    STAGE_NAMES,
    StageReport,
    balance_attempt,
    new_balance_report,
    next_lambda,
    security_gate,
    stage1_pretrain,
    stage2_security,
    stage3_assess,
    stage5_align,
)

STAGE_NODE_NAMES = [STAGE_NAMES[k] for k in sorted(STAGE_NAMES)]
GATE_NODE_NAME = "security_gate"
CHECKPOINT_TEMPLATE = "stage{stage}.hans"


class HansTrainingPipeline(BasePipeline):
    """
    Runs the five training stages of a HANs model bundle as a state graph.

    Stages run in order; the balance-adjustment stage is followed by a security gate
    that routes back to it while retries remain. With ``checkpoint_dir`` set, a
    checkpoint is written after every completed stage, so a failed run keeps the last
    good one and can be resumed from it.

    Parameters
    ----------
    bundle : ModelBundle
        The models to train, updated in place.
    train_cfg : TrainConfig
        Stage budgets, optimizer settings and the security gate.
    checkpoint_dir : str, optional
        Directory for ``stage<k>.hans`` checkpoints. Defaults to None (no checkpoints).
    gates : sequence of SecurityGate, optional
        Gate used on each balance attempt, the last one repeating. Defaults to
        ``train_cfg.security_gate``.
    log : bool, optional
        Whether to write loss curves as JSON lines. Defaults to False.
    log_path : str, optional
        Directory of the curve log. Defaults to ``./logs/``.
    file_name : str, optional
        Name of the curve log. Defaults to ``train_curves.jsonl``.
    overwrite : bool, optional
        Whether to overwrite an existing curve log. If False, a unique file name is
        created. Defaults to True.
    record_extra : dict, optional
        Fields merged into every curve record, e.g. ``config_hash``.

    Methods
    -------
    invoke_pipeline(completed_stage=0)
        Runs the remaining stages. Raises GateFailureError when the gate never passes.
    get_reports()
        Stage reports in completion order.
    get_curve_records()
        ``{stage, step, loss_name, value}`` records of every completed stage.
    get_security_table()
        Average / maximum difference table of the last assessment.
    get_checkpoint_paths()
        Checkpoints written, in stage order.

    Examples
    --------
    ``` python
    from hanlab.ahe import AheConfig, build_models
    from hanlab.training import HansTrainingPipeline, TrainConfig

    bundle = build_models(AheConfig())
    pipeline = HansTrainingPipeline(bundle, TrainConfig.micro(), checkpoint_dir="ckpt")
    pipeline.invoke_pipeline()
    pipeline.get_security_table()
    ```
    """

    def __init__(
        self,
        bundle: ModelBundle,
        train_cfg: TrainConfig,
        checkpoint_dir: Optional[str] = None,
        gates: Optional[Sequence[SecurityGate]] = None,
        log: bool = False,
        log_path: Optional[str] = None,
        file_name: str = "train_curves.jsonl",
        overwrite: bool = True,
        record_extra: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(
            bundle=bundle,
            train_cfg=train_cfg,
            checkpoint_dir=checkpoint_dir,
            gates=gates,
            log=log,
            log_path=log_path,
            file_name=file_name,
            overwrite=overwrite,
            record_extra=record_extra,
        )

    def _make_compiled_graph(self):
        self.response = None
        return make_training_pipeline(**self._params)

    def invoke_pipeline(self, completed_stage: int = 0, **kwargs):
        """
        Runs every stage after ``completed_stage``. The final state is stored in the
        response attribute.

        Raises
        ------
        GateFailureError
            If the security gate fails on every allowed attempt.
        """
        train_cfg = self._params["train_cfg"]
        response = self.invoke(
            {
                "completed_stage": completed_stage,
                "reports": [],
                "checkpoint_paths": [],
                "balance_report": None,
                "lambda_": train_cfg.losses.lambda_,
                "gate_passed": False,
                "gate_error": None,
                "retry_count": 0,
                "max_retries": train_cfg.max_gate_retries,
            },
            **kwargs,
        )
        if response.get("gate_error"):
            report = response.get("balance_report")
            raise GateFailureError(
                response["gate_error"],
                stage=4,
                diagnostics={"failures": report.gate.failures if report and report.gate else []},
            )
        return None

    def get_reports(self) -> List[StageReport]:
        if self.response:
            return list(self.response.get("reports", []))
        return []

    def get_curve_records(self) -> List[dict]:
        return [record for report in self.get_reports() for record in report.to_records()]

    def get_security_table(self) -> Optional[pd.DataFrame]:
        assessed = [r for r in self.get_reports() if r.stage in (3, 4)]
        if not assessed:
            return None
        stats = dict(assessed[-1].final_stats)
        return security_table(stats.pop("aggregation"), stats)

    def get_checkpoint_paths(self) -> List[str]:
        if self.response:
            return list(self.response.get("checkpoint_paths", []))
        return []


def make_training_pipeline(
    bundle: ModelBundle,
    train_cfg: TrainConfig,
    checkpoint_dir: Optional[str] = None,
    gates: Optional[Sequence[SecurityGate]] = None,
    log: bool = False,
    log_path: Optional[str] = None,
    file_name: str = "train_curves.jsonl",
    overwrite: bool = True,
    record_extra: Optional[Dict[str, Any]] = None,
):
    """
    Creates the compiled five-stage training graph for ``bundle``.

    See :class:`HansTrainingPipeline` for the parameters.

    Returns
    -------
    app : CompiledStateGraph
    """
    gates = list(gates) if gates else [train_cfg.security_gate]

    if log:
        if log_path is None:
            log_path = "./logs/"
        if not overwrite:
            file_name = unique_file_name(log_path, file_name)
        if overwrite and os.path.exists(os.path.join(log_path, file_name)):
            os.remove(os.path.join(log_path, file_name))

    class GraphState(TypedDict):
        completed_stage: int
        reports: Annotated[List[StageReport], operator.add]
        checkpoint_paths: Annotated[List[str], operator.add]
        balance_report: Optional[StageReport]
        lambda_: float
        gate_passed: bool
        gate_error: Optional[str]
        retry_count: int
        max_retries: int

    def finish_stage(report: StageReport) -> Dict[str, Any]:
        records = report.to_records()
        if record_extra:
            records = [{**record, **record_extra} for record in records]
        log_records(records, file_name, log=log, log_path=log_path or "./logs/")

        update = {"completed_stage": report.stage, "reports": [report], "checkpoint_paths": []}
        if checkpoint_dir:
            path = os.path.join(checkpoint_dir, CHECKPOINT_TEMPLATE.format(stage=report.stage))
            save_checkpoint(bundle, path, completed_stage=report.stage)
            print(f"    * CHECKPOINT: {path}")
            update["checkpoint_paths"] = [path]
        return update

    def computational_pretrain(state: GraphState):
        return finish_stage(stage1_pretrain(bundle, train_cfg))

    def security_enhancement(state: GraphState):
        return finish_stage(stage2_security(bundle, train_cfg))

    def security_assessment(state: GraphState):
        return finish_stage(stage3_assess(bundle, train_cfg))

    def balance_adjustment(state: GraphState):
        report = state.get("balance_report") or new_balance_report(bundle, train_cfg)
        balance_attempt(bundle, train_cfg, report, state.get("lambda_"), state.get("retry_count"))
        return {"balance_report": report}

    def judge_security_gate(state: GraphState):
        report = state.get("balance_report")
        attempt = state.get("retry_count")
        verdict = security_gate(report, gates[min(attempt, len(gates) - 1)], attempt + 1)
        if verdict.passed:
            return {**finish_stage(report), "gate_passed": True, "gate_error": None}
        return {
            "gate_passed": False,
            "gate_error": f"security gate failed after {attempt + 1} attempts: " + "; ".join(verdict.failures),
            "retry_count": attempt + 1,
            "lambda_": next_lambda(verdict, state.get("lambda_"), train_cfg),
        }

    def aggregation_alignment(state: GraphState):
        return finish_stage(stage5_align(bundle, train_cfg))

    node_functions = {
        "computational_pretrain": computational_pretrain,
        "security_enhancement": security_enhancement,
        "security_assessment": security_assessment,
        "balance_adjustment": balance_adjustment,
        GATE_NODE_NAME: judge_security_gate,
        "aggregation_alignment": aggregation_alignment,
    }

    app = create_staged_pipeline_graph(
        GraphState=GraphState,
        node_functions=node_functions,
        stage_node_names=STAGE_NODE_NAMES,
        retry_node_name="balance_adjustment",
        gate_node_name=GATE_NODE_NAME,
        passed_key="gate_passed",
        max_retries_key="max_retries",
        retry_count_key="retry_count",
        resume_key="completed_stage",
    )

    return app


def train_hans(
    ahe_cfg: AheConfig,
    train_cfg: TrainConfig,
    checkpoint_dir: Optional[str] = None,
    resume_from: Optional[str] = None,
    device: Optional[str] = None,
    **pipeline_kwargs,
) -> Tuple[ModelBundle, List[StageReport]]:
    """
    Build (or resume) a model bundle and run the remaining training stages.

    Parameters
    ----------
    ahe_cfg : AheConfig
        Scheme parameters. Ignored when resuming; the checkpoint's own are used.
    train_cfg : TrainConfig
        Training configuration. Every stage draws from ``make_generator(seed, stage)``,
        so a resumed run reproduces the uninterrupted one.
    checkpoint_dir : str, optional
        Where ``stage<k>.hans`` checkpoints are written.
    resume_from : str, optional
        A checkpoint to resume from; stages up to its ``completed_stage`` are skipped.
    device : str, optional
        Torch device. Defaults to ``HANLAB_DEVICE`` or CPU.

    Returns
    -------
    tuple of (ModelBundle, list of StageReport)
    """
    torch_device = resolve_device(device)
    completed = 0
    if resume_from:
        checkpoint = load_checkpoint(resume_from, torch_device)
        bundle, completed = checkpoint.bundle, checkpoint.completed_stage
        print(f"    * RESUMING AFTER STAGE {completed}")
    else:
        bundle = build_models(ahe_cfg).to(torch_device)

    pipeline = HansTrainingPipeline(bundle, train_cfg, checkpoint_dir=checkpoint_dir, **pipeline_kwargs)
    pipeline.invoke_pipeline(completed_stage=completed)
    return bundle, pipeline.get_reports()
