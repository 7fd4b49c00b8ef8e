from .experiment import REGIMES, EvalResult, FoldResults, eval_rows, evaluate, run_cv_experiment
from .report import FoldReport, build_report, read_report, render_table, write_report
from .stats import SampleSummary, TTestResult, mean_std, student_t_cdf, student_t_sf, t_test_b_lower

__all__ = [
    "REGIMES", "EvalResult", "FoldResults", "eval_rows", "evaluate", "run_cv_experiment",
    "FoldReport", "build_report", "read_report", "render_table", "write_report",
    "SampleSummary", "TTestResult", "mean_std", "student_t_cdf", "student_t_sf", "t_test_b_lower",
]
