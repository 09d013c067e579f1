from hanlab.ahe.config import AheConfig
from hanlab.ahe.types import KeyBatch, PublicKeyBatch, PlaintextBatch, CiphertextBatch
from hanlab.ahe.networks import HanNetwork, weight_digest, set_trainable, residual_block_parameter_count
from hanlab.ahe.bundle import ModelBundle, AttackerSlot, build_models, make_encryptor, make_aggregator, make_attacker
from hanlab.ahe.ops import keygen, encrypt, aggregate, attack_forward
