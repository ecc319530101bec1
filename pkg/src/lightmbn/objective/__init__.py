"""Losses, learning-rate schedules and the optimizer."""

from .losses import (
    LossWeights,
    MSLossParams,
    ce_label_smoothing,
    ms_loss,
    pairwise_euclidean,
    total_loss,
    triplet_batch_hard,
)
from .optim import Adam, AdamState, OptimizerParams, adam_step
from .schedule import ScheduleParams, lr_schedule, scaled_drop_epochs, step_schedule, write_schedule_csv
