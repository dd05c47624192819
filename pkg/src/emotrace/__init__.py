"""Music emotion regression and emotion-trajectory queuing."""

from .circumplex import EmotionPoint, Quadrant, clamp, distance, intensity, quadrant
from .nn import LstmNetwork, gradient_check, load_checkpoint, save_checkpoint
from .models import (TrainConfig, TrainReport, build_task1_default, build_task2_default,
                     evaluate, make_windows, predict_emotion, predict_next, train)

__version__ = "0.1.0"
