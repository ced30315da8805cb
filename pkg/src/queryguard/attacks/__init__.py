"""Query-based black-box attacks and adaptive wrappers.

All attacks are untargeted: success means the served label leaves the true
class.  A targeted variant would thread the target label through the loss
helpers in `base` (flip the sign of `ce_loss`, compare labels against the
target); nothing else in the query plumbing would change.
"""

from .adaptive import OarsConfig, OarsController, attack_whitebox_encoder, wrap_oars
from .base import (
    AttackConfig,
    AttackTrace,
    BoundaryConfig,
    DuplicateConfig,
    HsjaConfig,
    NesConfig,
    QueryOracle,
    SquareConfig,
    WhiteboxEncoderConfig,
    ZooConfig,
    as_array,
    ce_loss,
    margin_loss,
    project_ball,
)
from .decision import attack_boundary, attack_duplicate, attack_hsja
from .score import attack_nes, attack_square, attack_zoo, nes_gradient

# name -> (attack function, config class, needs score oracle)
ATTACK_REGISTRY = {
    "zoo": (attack_zoo, ZooConfig, True),
    "nes": (attack_nes, NesConfig, True),
    "square": (attack_square, SquareConfig, True),
    "boundary": (attack_boundary, BoundaryConfig, False),
    "hsja": (attack_hsja, HsjaConfig, False),
    "duplicate": (attack_duplicate, DuplicateConfig, False),
}

__all__ = [
    "ATTACK_REGISTRY",
    "AttackConfig",
    "AttackTrace",
    "BoundaryConfig",
    "DuplicateConfig",
    "HsjaConfig",
    "NesConfig",
    "OarsConfig",
    "OarsController",
    "QueryOracle",
    "SquareConfig",
    "WhiteboxEncoderConfig",
    "ZooConfig",
    "as_array",
    "attack_boundary",
    "attack_duplicate",
    "attack_hsja",
    "attack_nes",
    "attack_square",
    "attack_whitebox_encoder",
    "attack_zoo",
    "ce_loss",
    "margin_loss",
    "nes_gradient",
    "project_ball",
    "wrap_oars",
]
