"""Sparse cooperative perturbation attacks on a small point-set classifier."""
from .attack import AttackConfig, AttackResult, apply_sparse_delta, optimize_subset
from .classifier import (ClassifierModel, LossSpec, forward, grad_points, hvp_points, init_model, load_model,
                         mis_loss, save_model, train)
from .metrics import (MetricBundle, chamfer, compute_metrics, cooperation_check, emd, hausdorff,
                      pairwise_coop)
from .pointset import DatasetManifest, PointCloud, fps_sample, gen_synthetic, load_manifest, load_xyz, normalize, \
    save_xyz
from .schur import CholeskyState, HessianBlock, assemble_block, min_eigenvalue, schur_surplus
from .selection import CooperativeSubset, SelectionConfig, gradient_screen, select, select_full_hessian, \
    select_greedy

__version__ = "0.1.0"
