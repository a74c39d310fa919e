"""Inverse evolution layers (IELs) for segmentation networks."""
from ielseg.autodiff import LossVariant
from ielseg.curvemotion import CurveMotionConfig, curve_motion_iel_step, run_curve_motion_iels
from ielseg.diffusion import DiffusionConfig, apply_iels, apply_merged, fel_step, iel_step, merged_coeffs
from ielseg.field import Field, LabelMask

__version__ = "0.1.0"

__all__ = [
    "CurveMotionConfig", "DiffusionConfig", "Field", "LabelMask", "LossVariant",
    "apply_iels", "apply_merged", "curve_motion_iel_step", "fel_step", "iel_step",
    "merged_coeffs", "run_curve_motion_iels",
]
