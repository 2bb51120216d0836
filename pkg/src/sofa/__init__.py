"""Ablation outcome simulation, recurrence prediction, and parameter planning."""

__version__ = "0.1.0"

from .study import (ParamMaps, Study, ViewId, ViewSample, denormalize_params,
                    normalize_params, read_study, validate_study, write_study)
from .cohort import (DoseModelConfig, LabelModelConfig, LesionPlan, SynthConfig,
                     apply_dose_model, generate_cohort, label_recurrence,
                     plan_lesions, synth_atrium)
from .generator import (FusionGenerator, GeneratorConfig, cross_attention_fuse,
                        dice_term, phase1_loss, train_phase1)
from .classifier import (ClassifierConfig, RiskClassifier, aggregate_views,
                         bce_loss, embed_view, predict_risk, train_phase2)
from .optimizer import (FrozenStack, OptimizationTrace, OptimizerConfig,
                        build_ablation_mask, diff_maps, masked_step,
                        optimize_params, phase3_loss)
from .metrics import (accuracy, auc, dice_score, kfold_split, mse,
                      percent_reduction, psnr, ssim)
from .config import RunConfig, tiny_config
