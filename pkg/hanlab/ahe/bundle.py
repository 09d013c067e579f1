import copy
from collections import OrderedDict
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import torch
import torch.nn as nn

from hanlab.ahe.config import AheConfig
from hanlab.ahe.networks import HanNetwork
from hanlab.errors import InvalidArgumentError


class AttackerSlot(NamedTuple):
    client: int
    with_pk: bool
    depth: str

    @property
    def name(self) -> str:
        return f"attacker_{self.client}_{'pk' if self.with_pk else 'nopk'}_{self.depth}"

    @property
    def role(self) -> str:
        return "attacker_pk" if self.with_pk else "attacker_nopk"


def make_encryptor(cfg: AheConfig) -> HanNetwork:
    return HanNetwork(3, cfg.ciphertext_len, cfg.hidden_dim, cfg.conv_channels, cfg.num_res_blocks, "encryptor")


def make_aggregator(cfg: AheConfig) -> HanNetwork:
    return HanNetwork(
        cfg.num_clients * cfg.upload_width, 1, cfg.hidden_dim, cfg.conv_channels, cfg.num_res_blocks, "aggregator"
    )


def make_attacker(cfg: AheConfig, with_pk: bool, depth: str = "standard") -> HanNetwork:
    blocks = cfg.num_res_blocks * (2 if depth == "double" else 1)
    in_width = cfg.ciphertext_len + (1 if with_pk else 0)
    role = "attacker_pk" if with_pk else "attacker_nopk"
    return HanNetwork(in_width, 1, cfg.hidden_dim, cfg.conv_channels, blocks, role, depth)


class ModelBundle(nn.Module):
    """
    Every network of a HANs deployment.

    While ``shared`` is True all encryptor slots hold the same module: the public
    original model that training produces. :meth:`personalize` gives every client a
    private copy of it, which is where the privacy-preserving update starts.

    Parameters
    ----------
    cfg : AheConfig
        Scheme parameters; ``cfg.num_clients`` fixes the aggregator arity.
    encryptor : HanNetwork
        The original encryptor.
    aggregator : HanNetwork
        The shared aggregation network.
    attackers : dict of AttackerSlot -> HanNetwork
        Four attackers per client (pk/no-pk, standard/double).
    """

    def __init__(self, cfg: AheConfig, encryptor: HanNetwork, aggregator: HanNetwork, attackers: Dict[AttackerSlot, HanNetwork]):
        super().__init__()
        self.cfg = cfg
        self.encryptors = nn.ModuleList([encryptor] * cfg.num_clients)
        self.aggregator = aggregator
        self.attacker_slots: List[AttackerSlot] = list(attackers)
        self.attackers = nn.ModuleDict({slot.name: net for slot, net in attackers.items()})
        self.original_state: Optional[Dict[str, torch.Tensor]] = None

    @property
    def num_clients(self) -> int:
        return self.cfg.num_clients

    @property
    def shared(self) -> bool:
        first = self.encryptors[0]
        return all(enc is first for enc in self.encryptors)

    def encryptor(self, client: int) -> HanNetwork:
        return self.encryptors[client]

    def attacker(self, client: int, with_pk: bool, depth: str = "standard") -> HanNetwork:
        return self.attackers[AttackerSlot(client, with_pk, depth).name]

    def client_attackers(self, client: int, depths: Tuple[str, ...] = ("standard", "double")) -> Dict[AttackerSlot, HanNetwork]:
        return OrderedDict(
            (slot, self.attackers[slot.name])
            for slot in self.attacker_slots
            if slot.client == client and slot.depth in depths
        )

    def encryptor_modules(self) -> List[HanNetwork]:
        """Distinct encryptor modules: one while shared, N afterwards."""
        return [self.encryptors[0]] if self.shared else list(self.encryptors)

    def named_models(self) -> "OrderedDict[str, HanNetwork]":
        models = OrderedDict()
        for i, enc in enumerate(self.encryptors):
            models[f"encryptor_{i}"] = enc
        models["aggregator"] = self.aggregator
        for slot in self.attacker_slots:
            models[slot.name] = self.attackers[slot.name]
        return models

    def personalize(self) -> None:
        """
        Snapshot the original encryptor and give each client its own private copy.
        """
        if not self.shared:
            raise InvalidArgumentError("encryptors are already personalized")
        original = self.encryptors[0]
        self.original_state = {k: v.detach().clone() for k, v in original.state_dict().items()}
        private = []
        for _ in range(self.num_clients):
            enc = copy.deepcopy(original)
            enc.visibility = "private"
            private.append(enc)
        self.encryptors = nn.ModuleList(private)

    def original_encryptor(self) -> HanNetwork:
        """A public copy of the original model, the one every attacker is assumed to hold."""
        if self.shared:
            enc = copy.deepcopy(self.encryptors[0])
        else:
            if self.original_state is None:
                raise InvalidArgumentError("no original encryptor snapshot recorded")
            enc = make_encryptor(self.cfg)
            enc.load_state_dict(self.original_state)
            enc.to(next(self.aggregator.parameters()).device)
        enc.visibility = "public"
        return enc

    def iter_attackers(self) -> Iterator[Tuple[AttackerSlot, HanNetwork]]:
        for slot in self.attacker_slots:
            yield slot, self.attackers[slot.name]


def build_models(cfg: AheConfig, generator: Optional[torch.Generator] = None) -> ModelBundle:
    """
    Build a fresh bundle: one original encryptor shared by ``N`` slots, the aggregator,
    and four attackers per client.

    Parameters
    ----------
    cfg : AheConfig
        Scheme parameters.
    generator : torch.Generator, optional
        Source of the initial weights. Defaults to a generator seeded with ``cfg.seed``.

    Returns
    -------
    ModelBundle
    """
    if generator is None:
        generator = torch.Generator().manual_seed(cfg.seed)

    encryptor = make_encryptor(cfg)
    encryptor.reset_parameters(generator)
    aggregator = make_aggregator(cfg)
    aggregator.reset_parameters(generator)

    attackers = OrderedDict()
    for client in range(cfg.num_clients):
        for with_pk in (True, False):
            for depth in ("standard", "double"):
                net = make_attacker(cfg, with_pk, depth)
                net.reset_parameters(generator)
                attackers[AttackerSlot(client, with_pk, depth)] = net

    return ModelBundle(cfg, encryptor, aggregator, attackers)
