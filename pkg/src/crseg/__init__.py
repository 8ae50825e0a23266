"""Certified-radius-guided attacks on per-pixel classifiers, at desk scale."""

from .blackbox import BlackBoxAttackConfig, RegretTrace, cr_pbgd, pbgd
from .defense import fast_adt
from .metrics import argmax_labels, miou, pix_acc
from .oracle import BudgetExhausted, CountedOracle, QueryCounter, attack_loss, with_counter
from .projections import clip_image, project, project_l1, project_l2, project_linf
from .smoothing import (SmoothingConfig, certify, cr_weighted_loss, inv_norm_cdf,
                        pixel_certified_radius, pixel_weights, smoothed_probs)
from .synth import SynthDatasetSpec, gen_synthetic_dataset
from .tensor import RandomSource, load_tensor, save_tensor
from .toymodel import ModelOracle, ToySegModel, train
from .whitebox import WhiteBoxAttackConfig, cr_fgsm, cr_pgd, dag, fgsm, pgd

__version__ = "0.1.0"
