"""
A small benchmark from Python
=============================

The same harness drives ``modalreg benchmark``.  Cells marked with * are
best or not significantly worse than the best (paired t-test).
"""

from modalreg.benchmark import Row, format_table, run_benchmark

rows = [Row("M1", noise, 1) for noise in ("gauss", "outlier", "skewed")]
report = run_benchmark(rows, ["krr", "lad", "dmrk"], seeds=[0, 1, 2], n=200, n_te=2000)
print(format_table(report))
