from hanlab.training.config import TrainConfig, SecurityGate
from hanlab.training.data import ClientBatches, gen_batch, uniform_plaintexts
from hanlab.training.convergence import PlateauDetector
from hanlab.training.evaluation import evaluate_aggregation, evaluate_attacker, security_table
from hanlab.training.stages import (
    StageReport,
    GateVerdict,
    stage1_pretrain,
    stage2_security,
    stage3_assess,
    stage4_balance,
    stage5_align,
    balance_finetune,
    security_gate,
    fit_attackers,
    encryptor_traffic,
)
from hanlab.training.pipeline import HansTrainingPipeline, make_training_pipeline, train_hans
