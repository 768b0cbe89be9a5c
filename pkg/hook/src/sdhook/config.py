"""Hook configuration and the tap-layer wire-id scheme.

Tap layers are U-Net up-block indices; each block holds several
self-attention modules, while the engine caches references per
(object, timestep, layer id).  The hook therefore assigns every tapped
module its own wire id, ``10 * block + module_index``, and builds the
engine session config over those ids.  The flow readout uses the first
module of the readout block.

Timesteps: engine t = denoising iteration + 1, counting 1..steps from the
noisiest step to the final one, so the default inject range [42, 100]
covers the later denoising phase and the readout at t=92 lands near the
end, where dense matching has stabilized.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import wireclient
from .errors import HookError

TAP_BEFORE = "before"
TAP_AFTER = "after"


@dataclass
class HookConfig:
    model_id: str = "runwayml/stable-diffusion-v1-5"
    steps: int = 100
    tap_layers: tuple[int, ...] = (2, 3)
    tap_point: str = TAP_BEFORE
    inject_t_range: tuple[int, int] = (42, 100)
    adain_t_range: tuple[int, int] = (82, 100)
    readout_t: int = 92
    readout_block: int = 2
    epsilon: float = 1e-8
    engine_host: str = "127.0.0.1"
    engine_port: int = 7763
    device: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tap_point not in (TAP_BEFORE, TAP_AFTER):
            raise HookError(f"tap_point must be '{TAP_BEFORE}' or '{TAP_AFTER}'")
        self.tap_layers = tuple(sorted(set(int(b) for b in self.tap_layers)))

    @property
    def inject_enabled(self) -> bool:
        # lo > hi is the "injection off" sentinel on the hook side; the
        # engine itself only ever sees valid ranges
        lo, hi = self.inject_t_range
        return lo <= hi

    @property
    def adain_enabled(self) -> bool:
        lo, hi = self.adain_t_range
        return lo <= hi

    def inject_active(self, t: int) -> bool:
        lo, hi = self.inject_t_range
        return self.inject_enabled and lo <= t <= hi

    def adain_active(self, t: int) -> bool:
        lo, hi = self.adain_t_range
        return self.adain_enabled and lo <= t <= hi


def layer_wire_id(block: int, module_index: int) -> int:
    return 10 * block + module_index


def expand_layer_ids(config: HookConfig, modules_per_block: dict[int, int]) -> list[int]:
    """All wire layer ids for the configured tap blocks on a given backend."""
    ids = []
    for block in config.tap_layers:
        count = modules_per_block.get(block)
        if count is None:
            raise HookError(
                f"tap layer {block} does not exist; backend has blocks "
                f"{sorted(modules_per_block)}")
        ids.extend(layer_wire_id(block, j) for j in range(count))
    return ids


def readout_layer_id(config: HookConfig, modules_per_block: dict[int, int]) -> int:
    if config.readout_block not in modules_per_block:
        raise HookError(f"readout block {config.readout_block} does not exist")
    return layer_wire_id(config.readout_block, 0)


def engine_config_payload(config: HookConfig, modules_per_block: dict[int, int]) -> bytes:
    """Session config bytes for the engine, with hook ranges mapped through.

    When injection is disabled hook-side, the engine still gets a valid
    config (its lo <= hi invariant holds); the hook simply never issues
    REARRANGE calls.
    """
    layer_ids = expand_layer_ids(config, modules_per_block)
    inject_range = config.inject_t_range if config.inject_enabled else (1, config.steps)
    adain_range = config.adain_t_range if config.adain_enabled else (1, config.steps)
    return wireclient.encode_config(
        total_steps=config.steps,
        inject_t_range=inject_range,
        inject_layers=tuple(layer_ids),
        adain_t_range=adain_range,
        readout_t=config.readout_t,
        readout_layer=readout_layer_id(config, modules_per_block),
        epsilon=config.epsilon,
    )
