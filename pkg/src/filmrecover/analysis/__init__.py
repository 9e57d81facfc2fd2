"""Image-quality metrics, radiomics features and significance statistics."""

from .evaluate import MetricReport, Mode, evaluate_recovery, evaluate_with_deshift
from .metrics import ImageTooSmallError, ms_ssim, psnr, ssim
from .radiomics import first_order_features, glcm_features, gldm_features, radiomics_vector
from .stats import (
    T_THRESHOLDS,
    FeatureTable,
    SignificanceReport,
    TableMismatchError,
    chi_square_stat,
    paired_t_score,
    significance_report,
)
