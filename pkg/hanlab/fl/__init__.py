from hanlab.fl.codec import CodecMeta, ParamCodec, param_codec_encode
from hanlab.fl.config import FlConfig
from hanlab.fl.datasets import ImageDataset, load_dataset, parse_cifar_batch, parse_idx, partition, subset_dataset
from hanlab.fl.fedavg import (
    DeltaReport,
    FlClient,
    FlRunResult,
    HansClient,
    HansServer,
    RoundTrace,
    Upload,
    accuracy_delta,
    evaluate_accuracy,
    fedavg_hans,
    fedavg_plain,
)
from hanlab.fl.task_models import SigmoidMlp, ResNet8, SmallCnn, build_task_model
