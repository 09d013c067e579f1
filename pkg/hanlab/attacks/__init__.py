from hanlab.attacks.reports import AttackReport, AttackExample, write_attack_reports
from hanlab.attacks.kma import (
    ClientTrafficSource,
    InterceptedTraffic,
    KmaConfig,
    KmaResult,
    train_kma_attackers,
    require_public,
)
from hanlab.attacks.collusion import pcaom, pcapd, guess_message
from hanlab.attacks.dlg import (
    DlgConfig,
    DlgResult,
    HansDlgResult,
    dlg,
    dlg_hans,
    victim_gradients,
    save_reconstruction_grid,
)
