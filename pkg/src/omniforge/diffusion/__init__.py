"""Toy-scale diffusion core: tokens, flow matching, LoRA, the velocity model, guidance and sampling."""

from .checkpoint import load_checkpoint, save_checkpoint
from .flow import (
    WEIGHTED_TASKS,
    FlowSample,
    edit_weight_map,
    fm_loss,
    noise_sample,
    task_loss_weights,
    velocity_target,
    weighted_fm_loss,
)
from .guidance import GuidanceConfig, cfg_combine, load_guidance_table, task_guidance
from .latents import decode_erp, decode_viewport, encode_erp, encode_viewport
from .lora import LoraLinear, lora_forward, lora_parameters, mark_only_lora_trainable
from .model import Conditioning, ModelConfig, TinyVelocityModel, model_forward
from .sampling import euler_sample, guided_velocity
from .tokens import Segment, SegmentLayout, build_attention_mask, hash_token_ids, make_layout, patchify, unpatchify
from .training import (
    TrainConfig,
    TrainResult,
    evaluate_loss,
    fixed_target_dataset,
    read_loss_csv,
    train_toy,
    write_loss_csv,
)
