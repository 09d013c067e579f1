from hanlab.ppu.config import PpuConfig, NOISE_FLOOR
from hanlab.ppu.datasets import (
    PublicDataset,
    PublicDatasetEntry,
    Publication,
    publish,
    write_public_datasets,
    read_public_datasets,
)
from hanlab.ppu.sampling import TrainingSet, sample_with_replacement, training_set_loss
from hanlab.ppu.optimize import PpuReport
from hanlab.ppu.cppu import cppu
from hanlab.ppu.ippu import ippu
