"""Numerical extension of distributions across a linear subspace I = {h = 0}.

Scaling-degree estimation, Euler-field flows, cone algebra with a windowed
Fourier wave-front probe, the partition-of-unity extension formula with
Taylor-remainder renormalization, counterterm decomposition and
renormalized products, on flat box charts at desk scale.
"""

from .core_types import (
    ChartRegion, Cutoff, PsiFunction, TestFunction,
    make_bump, make_cutoff, psi_of, scale_testfn, seminorm,
    taylor_poly, taylor_remainder,
)
from .distributions import Distribution, ScaledPairing, model, pair, scale_pair
from .scaling_degree import (
    ScalingReport, check_membership, estimate_degree, rho_independence_check,
)
from .euler_flows import (
    EulerField, FlowResult, conjugation, cotangent_lift_check, flow, is_euler,
)
from .microlocal import (
    Cone, WfReport, check_landing, check_scaling_stable, check_transverse,
    cone_sum, cone_union, conormal, full_cone, wf_bound_check, wf_estimate,
    xi_projection,
)
from .extension import ExtensionResult, extend, extend_positive, extend_singular
from .ambiguity import (
    Counterterm, counterterm_rank, decompose_difference, smooth_coefficient_check,
)
from .renorm_product import ProductRequest, hormander_product, renormalize_product

__version__ = "0.1.0"
