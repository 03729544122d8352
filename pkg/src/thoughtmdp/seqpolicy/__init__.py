"""Causal transformer sequence policy for the gridworld."""
from .adam import AdamState
from .gradcheck import grad_check
from .io import ModelFormatError, load_model, save_model
from .model import ModelConfig, NonFiniteError, PolicyNet, mask_thought
from .train import (TrainBatch, bc_loss, bc_step, make_batch, prompt_forcing, reinforce_loss,
                    reinforce_step, sample_episodes, thinking_fraction)
from .vocab import VOCAB_SIZE, VOCAB_VERSION, encode_history

__all__ = ["AdamState", "grad_check", "ModelFormatError", "load_model", "save_model", "ModelConfig",
           "NonFiniteError", "PolicyNet", "mask_thought", "TrainBatch", "bc_loss", "bc_step",
           "make_batch", "prompt_forcing", "reinforce_loss", "reinforce_step", "sample_episodes",
           "thinking_fraction", "VOCAB_SIZE", "VOCAB_VERSION", "encode_history"]
