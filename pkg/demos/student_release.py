"""Release a small batch of counts over a toy student table.

Counts students by graduation year and gender, then answers five queries
through the matrix mechanism and checks that the answers are consistent.

    python3 demos/student_release.py
"""
import numpy as np

from matmech import Workload, consistency_check, ingest_cells, matrix_mechanism
from matmech.strategy import hierarchical_strategy_nd

RECORDS = [{"gradyear": 2011, "gender": "M"}, {"gradyear": 2011, "gender": "M"},
           {"gradyear": 2014, "gender": "F"}, {"gradyear": 2012, "gender": "F"},
           {"gradyear": 2013, "gender": "M"}]
PARTITION = {"gradyear": [2011, 2012, 2013, 2014], "gender": ["M", "F"]}

# cells are (year, gender) in row-major order
QUERIES = {
    "all students": np.ones(8),
    "class of 2011 or 2012": np.r_[np.ones(4), np.zeros(4)],
    "class of 2011": np.r_[1, 1, np.zeros(6)],
    "class of 2012": np.r_[0, 0, 1, 1, np.zeros(4)],
    "male minus female": np.tile([1.0, -1.0], 4),
}


def main():
    x = ingest_cells(RECORDS, PARTITION)
    W = Workload.from_rows(np.array(list(QUERIES.values())), shape=(4, 2))
    A = hierarchical_strategy_nd((4, 2))
    out = matrix_mechanism(W, A, x, epsilon=1.0, delta=1e-3, seed=2)
    exact = W.rows @ x.x
    for (name, _), true, noisy in zip(QUERIES.items(), exact, out.answers):
        print(f"  {name:<22} true {true:5.1f}   released {noisy:8.3f}")
    print("consistent:", consistency_check(out.answers, W))


if __name__ == "__main__":
    main()
