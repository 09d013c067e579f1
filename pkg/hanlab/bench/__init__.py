from hanlab.bench.comm import CommEstimate, comm_estimate
from hanlab.bench.timing import OPS, BenchResult, bench
